use proptest::prelude::*;
use std::collections::{BTreeMap, HashSet};
use vitalstream::analytics::{compute_cvi, fatigue_score, window_assign, AnalyticsConfig, BaselineState, MicroBatchEngine};
use vitalstream::canonical;
use vitalstream::dispatcher::cleanse;
use vitalstream::model::{
    is_rri_artifact, Metric, PostureLabel, PostureObservation, PrimaryRecord, RriInterval, WindowConfig, WorkerId,
};
use vitalstream::store::{RecordStore, Store, StoreRecord};

fn worker() -> impl Strategy<Value = WorkerId> {
    prop_oneof![Just("w1"), Just("w2"), Just("crew-7")].prop_map(|s| WorkerId::new(s).unwrap())
}

fn rri_record() -> impl Strategy<Value = RriInterval> {
    (worker(), 0u64..10_000_000, 1u64..3000, any::<bool>(), 0u64..100_000).prop_map(
        |(worker, ts, rri_ms, artifact, seq)| RriInterval {
            worker,
            ts,
            rri_ms,
            artifact: artifact || !(300..=2000).contains(&rri_ms),
            seq,
        },
    )
}

fn posture_record() -> impl Strategy<Value = PostureObservation> {
    (worker(), 0u64..10_000_000, 0u32..18_000, 0u32..100_000, 0u64..100_000).prop_map(
        |(worker, ts, centi, micro_g, seq)| {
            let tilt_deg = centi as f64 / 100.0;
            PostureObservation {
                worker,
                ts,
                tilt_deg,
                activity_g: micro_g as f64 / 1e6,
                label: PostureLabel::from_tilt(tilt_deg),
                seq,
            }
        },
    )
}

fn primary() -> impl Strategy<Value = PrimaryRecord> {
    prop_oneof![
        rri_record().prop_map(PrimaryRecord::Rri),
        posture_record().prop_map(PrimaryRecord::Posture)
    ]
}

fn oracle_artifact(rri: u64, prev: Option<u64>) -> bool {
    let in_range = (300..=2000).contains(&rri);
    let jump = prev.is_some_and(|p| p > 0 && (rri as f64 - p as f64).abs() / p as f64 > 0.2);
    !in_range || jump
}

fn brute_force_cvi(x: &[f64]) -> f64 {
    let pairs: Vec<(f64, f64)> = x.windows(2).map(|w| (w[0], w[1])).collect();
    let n = pairs.len() as f64;
    let var = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let m = pairs.iter().map(f).sum::<f64>() / n;
        pairs.iter().map(|p| (f(p) - m).powi(2)).sum::<f64>() / n
    };
    let sd1 = (var(&|p| (p.1 - p.0) / 2f64.sqrt())).sqrt();
    let sd2 = (var(&|p| (p.1 + p.0) / 2f64.sqrt())).sqrt();
    (16.0 * sd1 * sd2).max(1e-4).log10()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn primary_records_round_trip(rec in primary()) {
        let text = canonical::encode_string(&rec);
        let back: PrimaryRecord = canonical::decode_str(&text).unwrap();
        prop_assert_eq!(&back, &rec);
        prop_assert_eq!(canonical::encode_string(&back), text);
    }

    #[test]
    fn artifact_rule_matches_oracle(rri in 0u64..3000, prev in proptest::option::of(0u64..3000)) {
        prop_assert_eq!(is_rri_artifact(rri, prev), oracle_artifact(rri, prev));
    }

    #[test]
    fn cvi_matches_brute_force(xs in prop::collection::vec(300.0f64..2000.0, 30..300)) {
        let got = compute_cvi(&xs).unwrap();
        let want = brute_force_cvi(&xs);
        prop_assert!((got.cvi - want).abs() <= 1e-9 * want.abs().max(1.0), "{} vs {}", got.cvi, want);
        prop_assert!((0.0..=100.0).contains(&got.relaxation_score));
    }

    #[test]
    fn fatigue_is_bounded_and_monotone(
        b_rri in 400.0f64..1500.0, b_rmssd in 1.0f64..150.0,
        mean in 300.0f64..2000.0, rmssd in 0.0f64..200.0,
        d_mean in 0.0f64..400.0, d_rmssd in 0.0f64..100.0,
    ) {
        let b = BaselineState { baseline_rri_ms: b_rri, baseline_rmssd_ms: b_rmssd };
        let f = fatigue_score(&b, mean, rmssd);
        prop_assert!((0.0..=100.0).contains(&f));
        prop_assert!(fatigue_score(&b, mean - d_mean, rmssd) >= f);
        prop_assert!(fatigue_score(&b, mean, (rmssd - d_rmssd).max(0.0)) >= f);
        prop_assert_eq!(fatigue_score(&b, b_rri, b_rmssd), 0.0);
    }

    #[test]
    fn window_assignment_contains_ts(ts in 0u64..u64::MAX / 2, w in 1u64..10_000_000) {
        let cfg = WindowConfig::new(Metric::Fatigue).with_window_ms(w);
        let k = window_assign(ts, &cfg);
        prop_assert!(k * w <= ts && ts < (k + 1) * w);
    }

    #[test]
    fn store_puts_are_idempotent(recs in prop::collection::vec(primary(), 0..60)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.log");
        let once = Store::open(&path).unwrap();
        for r in &recs {
            once.put(StoreRecord::primary(r, 1)).unwrap();
        }
        let first = once.snapshot();
        for r in &recs {
            once.put(StoreRecord::primary(r, 2)).unwrap();
        }
        prop_assert_eq!(&once.snapshot(), &first);
        drop(once);
        let recovered = Store::recover(&path).unwrap();
        prop_assert_eq!(recovered.snapshot(), first);
    }

    #[test]
    fn scan_is_a_pure_filter(recs in prop::collection::vec(primary(), 0..60), w in worker(),
                             t0 in 0u64..10_000_000, span in 0u64..5_000_000) {
        let s = Store::in_memory();
        for r in &recs {
            s.put(StoreRecord::primary(r, 0)).unwrap();
        }
        let before = s.snapshot();
        let t1 = t0 + span;
        let got = s.scan(&w, "primary.rri", t0, t1);
        prop_assert_eq!(&s.scan(&w, "primary.rri", t0, t1), &got);
        prop_assert_eq!(s.snapshot(), before.clone());
        let want: Vec<_> = before
            .into_iter()
            .filter(|r| r.key.worker == w && r.key.metric == "primary.rri" && r.key.ts >= t0 && r.key.ts < t1)
            .collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn cleanse_is_identity_on_clean_input(mut recs in prop::collection::vec(primary(), 0..80)) {
        let mut keys = HashSet::new();
        recs.retain(|r| {
            !matches!(r, PrimaryRecord::Rri(i) if i.artifact) && keys.insert(r.natural_key())
        });
        recs.sort_by_key(PrimaryRecord::ts);
        let (out, report) = cleanse(recs.clone());
        prop_assert_eq!(out, recs);
        prop_assert_eq!(report.deduped + report.out_of_range_dropped + report.reordered, 0);
    }

    #[test]
    fn cleanse_output_is_sorted_and_unique(recs in prop::collection::vec(primary(), 0..80)) {
        let (out, report) = cleanse(recs.clone());
        prop_assert!(out.windows(2).all(|w| w[0].ts() <= w[1].ts()));
        let keys: HashSet<_> = out.iter().map(PrimaryRecord::natural_key).collect();
        prop_assert_eq!(keys.len(), out.len());
        prop_assert_eq!(report.input_count, recs.len() as u64);
        prop_assert_eq!(report.output_count + report.deduped + report.out_of_range_dropped, report.input_count);
    }

    #[test]
    fn windows_partition_distinct_records(
        recs in prop::collection::vec((0u64..600_000, 0u64..400), 0..200),
        ticks in prop::collection::vec(0u64..700_000, 0..6),
    ) {
        let w = WorkerId::new("w1").unwrap();
        let mut engine = MicroBatchEngine::new(AnalyticsConfig::default()).unwrap();
        let store = Store::in_memory();
        let mut ticks = ticks;
        ticks.sort();
        let mut distinct = HashSet::new();
        for (i, (ts, seq)) in recs.iter().enumerate() {
            if let Some(t) = ticks.get(i % 7) {
                if i % 7 == 0 {
                    engine.run_microbatch_tick(*t, &store);
                }
            }
            engine.ingest(&RriInterval { worker: w.clone(), ts: *ts, rri_ms: 800, artifact: false, seq: *seq });
            distinct.insert(*seq);
        }
        let mut by_metric = BTreeMap::new();
        for m in Metric::ALL {
            let c = engine.stats().metric(&w, m);
            by_metric.insert(m, c.bucketed + c.late_drops);
        }
        for (m, n) in by_metric {
            prop_assert_eq!(n, distinct.len() as u64, "metric {}", m);
        }
    }
}
