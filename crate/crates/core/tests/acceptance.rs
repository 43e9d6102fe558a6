//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;
use vitalstream::analytics::{compute_cvi, compute_fatigue, fatigue_score, window_assign, AnalyticsConfig, BaselineState, MicroBatchEngine};
use vitalstream::edge::PeakDetector;
use vitalstream::harness::{run_scenario, FaultKind, FaultSpec, ScenarioConfig};
use vitalstream::model::{Metric, PrimaryRecord, RriInterval, WindowConfig, WorkerId};
use vitalstream::signal_gen::{build_rr_series, synthesize_ecg, EcgOptions, PostureScenario, PostureSegment, RrProfile, SegmentPosture};
use vitalstream::store::{RecordStore, Store, StoreRecord};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---- 1. R-peak detection -------------------------------------------------

/// Independent matcher: each true beat (after warm-up) pairs with the closest
/// unused detection within the tolerance.
fn match_beats(truth: &[f64], det: &[u64], tol: f64) -> (usize, usize, usize, f64) {
    let truth = &truth[3..];
    let det: Vec<f64> = det.iter().map(|&d| d as f64).filter(|&d| d >= truth[0] - tol).collect();
    let mut used = vec![false; det.len()];
    let mut pairs = Vec::new();
    for (i, &t) in truth.iter().enumerate() {
        let best = det
            .iter()
            .enumerate()
            .filter(|(j, &d)| !used[*j] && (d - t).abs() <= tol)
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()));
        if let Some((j, &d)) = best {
            used[j] = true;
            pairs.push((i, d));
        }
    }
    let mut max_err: f64 = 0.0;
    for w in pairs.windows(2) {
        if w[1].0 == w[0].0 + 1 {
            let err = ((w[1].1 - w[0].1) - (truth[w[1].0] - truth[w[0].0])).abs();
            max_err = max_err.max(err);
        }
    }
    (truth.len(), det.len(), pairs.len(), max_err)
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let worker = WorkerId::new("acc-1").unwrap();
    let mut worst = (1.0f64, 1.0f64, 0.0f64);
    for run in 0..10u64 {
        let profile = RrProfile {
            seed: 1000 + run,
            ..RrProfile::default()
        };
        let rr = build_rr_series(&profile, 120_000).map_err(|e| e.to_string())?;
        let opts = EcgOptions {
            seed: 2000 + run,
            duration_ms: Some(120_000),
            ..EcgOptions::default()
        };
        let (ecg, truth) = synthesize_ecg(&worker, &rr.intervals_ms, &opts).map_err(|e| e.to_string())?;
        let mut det = PeakDetector::new(opts.fs_hz);
        let mut peaks = Vec::new();
        for s in &ecg {
            peaks.extend(det.push(s).map_err(|e| e.to_string())?);
        }
        peaks.extend(det.finish());
        let (n_truth, n_det, matched, max_err) = match_beats(&truth.r_peak_times_ms, &peaks, 40.0);
        let se = matched as f64 / n_truth as f64;
        let ppv = matched as f64 / n_det as f64;
        ensure(se >= 0.99 && ppv >= 0.99 && max_err <= 8.0, || {
            format!("run {run}: Se {se:.4} PPV {ppv:.4} max RRI error {max_err:.2} ms")
        })?;
        worst = (worst.0.min(se), worst.1.min(ppv), worst.2.max(max_err));
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("took {secs:.2} s"))?;
    Ok(format!(
        "min Se {:.4}, min PPV {:.4}, max RRI error {:.2} ms, {secs:.2} s",
        worst.0, worst.1, worst.2
    ))
}

// ---- 2. CVI oracle --------------------------------------------------------

fn brute_force_cvi(x: &[f64]) -> f64 {
    let n = (x.len() - 1) as f64;
    let mut d = Vec::new();
    let mut s = Vec::new();
    for i in 0..x.len() - 1 {
        d.push((x[i + 1] - x[i]) / 2f64.sqrt());
        s.push((x[i + 1] + x[i]) / 2f64.sqrt());
    }
    let sd = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / n;
        (v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n).sqrt()
    };
    let product = (4.0 * sd(&s)) * (4.0 * sd(&d));
    product.max(1e-4).log10()
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let len = rng.random_range(30..=300);
        let base = rng.random_range(500.0..1200.0);
        let spread = rng.random_range(1.0..150.0);
        let xs: Vec<f64> = (0..len).map(|_| base + rng.random_range(-spread..spread)).collect();
        let got = compute_cvi(&xs).unwrap().cvi;
        let want = brute_force_cvi(&xs);
        let rel = ((got - want) / want).abs();
        worst = worst.max(rel);
    }
    ensure(worst <= 1e-9, || format!("max relative error {worst:e}"))?;
    let c = compute_cvi(&[800.0; 30]).unwrap();
    ensure(c.cvi == -4.0 && c.relaxation_score == 0.0, || {
        format!("constant list gave cvi {} relaxation {}", c.cvi, c.relaxation_score)
    })?;
    Ok(format!("max relative error {worst:.1e}; constant list cvi -4, relaxation 0"))
}

// ---- 3. Fatigue formula -----------------------------------------------------

fn criterion_3() -> Outcome {
    let base = BaselineState {
        baseline_rri_ms: 800.0,
        baseline_rmssd_ms: 40.0,
    };
    // 100 * (0.5 * 80/800 + 0.5 * 20/40) = 30
    let direct = fatigue_score(&base, 720.0, 20.0);
    ensure(direct == 30.0, || format!("reference case scored {direct}"))?;
    let baseline_window: Vec<f64> = [780.0, 820.0].repeat(20);
    let window: Vec<f64> = [710.0, 730.0].repeat(20);
    let b = compute_fatigue(&baseline_window, None).unwrap().new_baseline.unwrap();
    let via_windows = compute_fatigue(&window, Some(&b)).unwrap().fatigue_score;
    ensure(via_windows == 30.0, || format!("windowed reference case scored {via_windows}"))?;
    let same = compute_fatigue(&baseline_window, Some(&b)).unwrap().fatigue_score;
    ensure(same == 0.0, || format!("window = baseline scored {same}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..1000 {
        let b = BaselineState {
            baseline_rri_ms: rng.random_range(500.0..1200.0),
            baseline_rmssd_ms: rng.random_range(5.0..120.0),
        };
        let rmssd = rng.random_range(0.0..150.0);
        let m1 = rng.random_range(300.0..1500.0);
        let m2 = m1 - rng.random_range(0.0..300.0);
        let (f1, f2) = (fatigue_score(&b, m1, rmssd), fatigue_score(&b, m2, rmssd));
        ensure(f2 >= f1, || format!("perturbation {i}: mean {m1} -> {m2} lowered score {f1} -> {f2}"))?;
    }
    Ok("reference case 30.0, self-comparison 0, 1000 monotone perturbations".into())
}

// ---- 4. Windowing ---------------------------------------------------------

fn criterion_4() -> Outcome {
    let mut cfg = ScenarioConfig::single_worker("w1", 300_000);
    cfg.windows = vec![
        WindowConfig::new(Metric::Fatigue).with_window_ms(60_000),
        WindowConfig::new(Metric::Relaxation).with_window_ms(120_000),
    ];
    let art = run_scenario(&cfg, None).map_err(|e| e.to_string())?;
    let r = &art.report.workers.values().next().unwrap();
    ensure(r.fatigue_results == 5 && r.relaxation_results == 2, || {
        format!("{} fatigue, {} relaxation results", r.fatigue_results, r.relaxation_results)
    })?;

    let w = WorkerId::new("w1").unwrap();
    let mut wcfg = AnalyticsConfig::default();
    for wc in &mut wcfg.windows {
        wc.min_rri_per_window = 2;
    }
    let mut engine = MicroBatchEngine::new(wcfg.clone()).unwrap();
    let win = wcfg.windows[0].window_ms;
    let mut seq = 0;
    for k in 0..5u64 {
        for ts in [k * win, k * win + win - 1] {
            engine.ingest(&RriInterval {
                worker: w.clone(),
                ts,
                rri_ms: 800,
                artifact: false,
                seq,
            });
            seq += 1;
        }
        ensure(window_assign(k * win, &wcfg.windows[0]) == k, || format!("ts {} not in window {k}", k * win))?;
    }
    let store = Store::in_memory();
    let out = engine.run_microbatch_tick(5 * win + 5_000, &store);
    let starts: BTreeSet<u64> = out
        .iter()
        .filter(|s| s.result.metric == Metric::Fatigue)
        .inspect(|s| assert_eq!(s.result.input_count, 2))
        .map(|s| s.result.window_start)
        .collect();
    let want: BTreeSet<u64> = (0..5).map(|k| k * win).collect();
    ensure(starts == want, || format!("boundary windows {starts:?}"))?;
    Ok("5 fatigue and 2 relaxation results; boundary records land in window k".into())
}

// ---- 5. Exactly-once ------------------------------------------------------

fn distinct_keys(store: &Store) -> Vec<String> {
    store
        .snapshot()
        .iter()
        .map(|r| format!("{}|{}|{}|{}", r.key.worker, r.key.metric, r.key.ts, r.key.disambiguator))
        .collect()
}

fn two_workers(seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::single_worker("w1", 300_000);
    cfg.workers.push(vitalstream::harness::WorkerSpec::new("w2"));
    cfg.seed = seed;
    cfg
}

fn criterion_5() -> Outcome {
    let clean = run_scenario(&two_workers(5), None).map_err(|e| e.to_string())?;
    let mut faulty_cfg = two_workers(5);
    for (kind, start, end) in [
        (FaultKind::BusRedeliver, 20_000, 30_000),
        (FaultKind::BusRedeliver, 90_000, 100_000),
        (FaultKind::BusRedeliver, 200_000, 210_000),
        (FaultKind::AckLoss, 40_000, 60_000),
        (FaultKind::AckLoss, 150_000, 170_000),
    ] {
        faulty_cfg.faults.push(FaultSpec {
            kind,
            start_ms: start,
            end_ms: end,
        });
    }
    let faulty = run_scenario(&faulty_cfg, None).map_err(|e| e.to_string())?;
    let dup_requests = faulty.report.ingest.duplicate_requests;
    let store_dups: u64 = faulty.report.workers.values().map(|w| w.store_duplicates).sum();
    ensure(dup_requests > 0 && store_dups > 0, || {
        format!("faults did not fire: {dup_requests} duplicate requests, {store_dups} store duplicates")
    })?;
    let (a, b) = (distinct_keys(&clean.store), distinct_keys(&faulty.store));
    ensure(a == b, || format!("distinct keys {} (no fault) vs {} (faults)", a.len(), b.len()))?;
    Ok(format!(
        "{} distinct keys in both runs; {dup_requests} duplicate requests and {store_dups} redelivered records absorbed",
        a.len()
    ))
}

// ---- 6. Offline alerting --------------------------------------------------

fn criterion_6() -> Outcome {
    let episode_start = 100_000;
    let mut cfg = ScenarioConfig::single_worker("w1", 180_000);
    cfg.workers[0].posture = Some(PostureScenario::new(vec![
        PostureSegment {
            duration_ms: episode_start,
            posture: SegmentPosture::Upright,
        },
        PostureSegment {
            duration_ms: 10_000,
            posture: SegmentPosture::DeepBend { theta_deg: 70.0 },
        },
    ]));
    cfg.faults.push(FaultSpec {
        kind: FaultKind::UplinkOutage,
        start_ms: 90_000,
        end_ms: 150_000,
    });
    let art = run_scenario(&cfg, None).map_err(|e| e.to_string())?;
    let w = WorkerId::new("w1").unwrap();
    let alerts = &art.alert_logs[&w];
    ensure(alerts.len() == 1, || format!("{} local alerts", alerts.len()))?;
    let a = &alerts[0];
    let latency = a.raised_ts - episode_start;
    ensure(a.raised_ts < 150_000 && latency <= 3_000, || {
        format!("raised at {} ms, {latency} ms after episode start", a.raised_ts)
    })?;
    let stored_alerts = art.store.scan(&w, "alert", 0, u64::MAX);
    ensure(stored_alerts.len() == 1, || format!("{} alerts stored", stored_alerts.len()))?;
    let emitted = &art.emitted[&w];
    let stored: usize = ["primary.rri", "primary.posture"]
        .iter()
        .map(|m| art.store.scan(&w, m, 0, u64::MAX).len())
        .sum();
    ensure(stored == emitted.len(), || format!("{stored} of {} primaries stored", emitted.len()))?;
    let all_present = emitted.iter().all(|rec| {
        let key = StoreRecord::primary(rec, 0).key;
        let metric = key.metric.clone();
        art.store
            .scan(&w, &metric, key.ts, key.ts + 1)
            .iter()
            .any(|r| r.key == key)
    });
    ensure(all_present, || "some buffered primary missing from store".into())?;
    Ok(format!("alert {latency} ms after episode start during outage; {stored} primaries and the alert stored after reconnect"))
}

// ---- 7. Bandwidth ---------------------------------------------------------

fn criterion_7() -> Outcome {
    let art = run_scenario(&ScenarioConfig::single_worker("w1", 300_000), None).map_err(|e| e.to_string())?;
    let b = &art.report.bandwidth;
    let ratio = b.ratio.ok_or("no bytes sent")?;
    let predicted = b.predicted_ratio.ok_or("no prediction")?;
    let rel = (ratio - predicted).abs() / predicted;
    ensure(ratio >= 50.0 && rel <= 0.10, || {
        format!("ratio {ratio:.2}, predicted {predicted:.2} ({:.1} % off)", rel * 100.0)
    })?;
    Ok(format!("ratio {ratio:.2}, predicted {predicted:.2} ({:.1} % off)", rel * 100.0))
}

// ---- 8. Determinism -------------------------------------------------------

fn criterion_8() -> Outcome {
    let mut cfg = two_workers(8);
    cfg.workers[1].posture = Some(PostureScenario::new(vec![
        PostureSegment {
            duration_ms: 30_000,
            posture: SegmentPosture::Bent { theta_deg: 40.0 },
        },
        PostureSegment {
            duration_ms: 5_000,
            posture: SegmentPosture::Lying,
        },
    ]));
    cfg.faults.push(FaultSpec {
        kind: FaultKind::UplinkOutage,
        start_ms: 60_000,
        end_ms: 80_000,
    });
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_scenario(&cfg, Some(d.path())).map_err(|e| e.to_string())?;
    }
    let mut files = vec!["report.json".to_string(), "store.log".into(), "alerts.jsonl".into()];
    for w in ["w1", "w2"] {
        for m in ["fatigue", "relaxation"] {
            files.push(format!("exports/{w}.{m}.csv"));
        }
    }
    for f in &files {
        let a = std::fs::read(dirs[0].path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = std::fs::read(dirs[1].path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure(a == b, || format!("{f} differs between runs"))?;
    }
    Ok(format!("{} output files byte-identical across two runs", files.len()))
}

// ---- 9. Store durability --------------------------------------------------

fn log_line(rec: &StoreRecord) -> String {
    let body = vitalstream::canonical::encode_string(rec);
    format!("{body}\t{:08x}\n", crc32fast::hash(body.as_bytes()))
}

fn criterion_9() -> Outcome {
    let w = WorkerId::new("w1").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for schedule in 0..50 {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.log");
        let mut acknowledged = std::collections::BTreeMap::new();
        let mut next_seq = 0u64;
        let rounds = rng.random_range(1..4);
        for _ in 0..rounds {
            let store = Store::open(&path).map_err(|e| e.to_string())?;
            let live: Vec<_> = store.snapshot().into_iter().map(|r| (r.key.clone(), r.payload.clone())).collect();
            let expected: Vec<_> = acknowledged.clone().into_iter().collect();
            ensure(live == expected, || format!("schedule {schedule}: recovered state differs"))?;
            for _ in 0..rng.random_range(0..40) {
                let seq = if next_seq > 0 && rng.random_bool(0.2) {
                    rng.random_range(0..next_seq)
                } else {
                    next_seq += 1;
                    next_seq - 1
                };
                let rec = StoreRecord::primary(
                    &PrimaryRecord::Rri(RriInterval {
                        worker: w.clone(),
                        ts: seq * 800,
                        rri_ms: 800,
                        artifact: false,
                        seq,
                    }),
                    seq,
                );
                if store.put(rec.clone()).is_ok() {
                    acknowledged.entry(rec.key).or_insert(rec.payload);
                }
            }
            drop(store);
            // Crash in the middle of the next append.
            let torn = StoreRecord::primary(
                &PrimaryRecord::Rri(RriInterval {
                    worker: w.clone(),
                    ts: 10_000_000 + next_seq,
                    rri_ms: 900,
                    artifact: false,
                    seq: 10_000_000 + next_seq,
                }),
                0,
            );
            let line = log_line(&torn);
            let cut = rng.random_range(1..line.len());
            let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
            f.write_all(&line.as_bytes()[..cut]).unwrap();
        }
        let recovered = Store::recover(&path).map_err(|e| e.to_string())?;
        let live: Vec<_> = recovered.snapshot().into_iter().map(|r| (r.key, r.payload)).collect();
        let expected: Vec<_> = acknowledged.into_iter().collect();
        ensure(live == expected, || format!("schedule {schedule}: {} recovered vs {} acknowledged", live.len(), expected.len()))?;
    }
    Ok("50 write/crash schedules recover exactly the acknowledged state".into())
}

// ---- 10. Freshness --------------------------------------------------------

fn criterion_10() -> Outcome {
    let cfg = two_workers(10);
    let bound = cfg.tick_interval_ms + cfg.watermark_ms;
    let art = run_scenario(&cfg, None).map_err(|e| e.to_string())?;
    ensure(!art.results.is_empty(), || "no results".into())?;
    let worst = art
        .results
        .iter()
        .map(|r| r.write_ts - r.result.window_end)
        .max()
        .unwrap();
    ensure(worst <= bound, || format!("max latency {worst} ms > {bound} ms"))?;
    Ok(format!("{} results, max window-end-to-result latency {worst} ms (bound {bound} ms)", art.results.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("R-peak detection", criterion_1),
        ("CVI oracle equivalence", criterion_2),
        ("fatigue formula", criterion_3),
        ("windowing", criterion_4),
        ("exactly-once under at-least-once", criterion_5),
        ("offline alerting", criterion_6),
        ("bandwidth reduction", criterion_7),
        ("determinism", criterion_8),
        ("store durability", criterion_9),
        ("end-to-end freshness", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match std::panic::catch_unwind(f) {
            Ok(Ok(detail)) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Ok(Err(why)) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
            Err(_) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: panicked", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
