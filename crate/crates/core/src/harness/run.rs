use super::report::{percentiles, score_peaks, BandwidthSummary, Latencies, RunReport, WorkerReport};
use super::{export, FaultKind, HarnessError, ScenarioConfig, WorkerSpec};
use crate::analytics::{AnalyticsJob, StoredResult};
use crate::bus::{Bus, BusApi};
use crate::canonical::{self, round_decimals};
use crate::clock::{Clock, VirtualClock};
use crate::dispatcher::Dispatcher;
use crate::edge::{predict_bandwidth, BandwidthModel, BandwidthReport, EdgeAgent, EndpointUplink, TransportError, Uplink};
use crate::ingest::IngestEndpoint;
use crate::model::{AccelSample, Alert, EcgSample, Metric, PrimaryRecord, RecordKind, WorkerId};
use crate::signal_gen::{build_rr_series, synthesize_accel, synthesize_ecg, EcgOptions, LabelSpan};
use crate::store::{RecordStore, Store, METRIC_ALERT};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

/// Tolerance and warm-up used when scoring detected R-peaks.
pub const PEAK_MATCH_MS: f64 = 40.0;
pub const PEAK_WARMUP_BEATS: usize = 3;

/// Synthetic input streams of one worker with their ground truth.
#[derive(Debug, Clone)]
pub struct WorkerStreams {
    pub ecg: Vec<EcgSample>,
    pub accel: Vec<AccelSample>,
    pub r_peaks_ms: Vec<f64>,
    pub rr_clamped: u64,
    pub posture: Vec<LabelSpan>,
}

/// Renders one worker's ECG and accelerometer streams for the scenario.
pub fn generate_streams(cfg: &ScenarioConfig, spec: &WorkerSpec) -> Result<WorkerStreams, HarnessError> {
    if cfg.duration_ms == 0 {
        return Ok(WorkerStreams {
            ecg: Vec::new(),
            accel: Vec::new(),
            r_peaks_ms: Vec::new(),
            rr_clamped: 0,
            posture: Vec::new(),
        });
    }
    let mut profile = spec.rr_profile.clone();
    profile.seed ^= cfg.derived_seed(&spec.id, "rr");
    let rr = build_rr_series(&profile, cfg.duration_ms)?;
    let ecg_opts = EcgOptions {
        seed: cfg.ecg.seed ^ cfg.derived_seed(&spec.id, "ecg"),
        duration_ms: Some(cfg.duration_ms),
        ..cfg.ecg.clone()
    };
    let (ecg, ecg_truth) = synthesize_ecg(&spec.id, &rr.intervals_ms, &ecg_opts)?;
    let mut posture = spec.posture_for(cfg.duration_ms);
    posture.seed ^= cfg.derived_seed(&spec.id, "accel");
    let (mut accel, accel_truth) = synthesize_accel(&spec.id, &posture, &cfg.accel)?;
    accel.retain(|s| s.ts < cfg.duration_ms);
    Ok(WorkerStreams {
        ecg,
        accel,
        r_peaks_ms: ecg_truth.r_peak_times_ms,
        rr_clamped: rr.clamped as u64,
        posture: accel_truth.posture_labels,
    })
}

/// Everything a run produced, for inspection by tests and tools.
pub struct RunArtifacts {
    pub report: RunReport,
    pub store: Arc<Store>,
    pub alert_logs: BTreeMap<WorkerId, Vec<Alert>>,
    pub emitted: BTreeMap<WorkerId, Vec<PrimaryRecord>>,
    pub peaks: BTreeMap<WorkerId, Vec<u64>>,
    pub truth: BTreeMap<WorkerId, WorkerStreams>,
    pub results: Vec<StoredResult>,
}

struct Lane {
    agent: EdgeAgent,
    streams: WorkerStreams,
    next_ecg: usize,
    next_accel: usize,
    finished: bool,
}

impl Lane {
    fn next_sample_ts(&self) -> Option<u64> {
        let e = self.streams.ecg.get(self.next_ecg).map(|s| s.ts);
        let a = self.streams.accel.get(self.next_accel).map(|s| s.ts);
        match (e, a) {
            (Some(e), Some(a)) => Some(e.min(a)),
            (e, a) => e.or(a),
        }
    }

    fn feed_until(&mut self, t: u64) -> Result<(), HarnessError> {
        while let Some(s) = self.streams.ecg.get(self.next_ecg).filter(|s| s.ts <= t) {
            self.agent.on_ecg(s)?;
            self.next_ecg += 1;
        }
        while let Some(s) = self.streams.accel.get(self.next_accel).filter(|s| s.ts <= t) {
            self.agent.on_accel(s);
            self.next_accel += 1;
        }
        Ok(())
    }
}

/// Uplink into the in-process endpoint with scheduled faults applied.
struct FaultyUplink<'a> {
    inner: EndpointUplink<'a>,
    outage: bool,
    ack_loss: bool,
}

impl Uplink for FaultyUplink<'_> {
    fn post(&mut self, path: &str, body: &[u8]) -> Result<Vec<u8>, TransportError> {
        if self.outage {
            return Err(TransportError::Unreachable);
        }
        let r = self.inner.post(path, body);
        if self.ack_loss && r.is_ok() {
            return Err(TransportError::ResponseLost);
        }
        r
    }
}

fn next_multiple(t: u64, step: u64) -> u64 {
    (t / step + 1) * step
}

/// Start of the dangerous ground-truth episode around `ts`, merging adjacent
/// dangerous spans.
fn episode_start(spans: &[LabelSpan], ts: u64) -> Option<u64> {
    let idx = spans.iter().position(|s| s.start_ms <= ts && ts < s.end_ms)?;
    if !spans[idx].label.is_dangerous() {
        return None;
    }
    let mut i = idx;
    while i > 0 && spans[i - 1].label.is_dangerous() && spans[i - 1].end_ms == spans[i].start_ms {
        i -= 1;
    }
    Some(spans[i].start_ms)
}

/// Runs the whole pipeline in virtual time. Within one instant the order is:
/// samples, edge finish (at end of input), uploads, dispatcher, analytics.
/// A final flush happens at `duration_ms + watermark_ms`.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: Option<&Path>) -> Result<RunArtifacts, HarnessError> {
    cfg.check()?;
    let clock = Arc::new(VirtualClock::new(0));
    let bus = Arc::new(Bus::with_pipeline_topics(clock.clone(), cfg.bus_partitions)?);
    let store = Arc::new(match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
            let path = dir.join("store.log");
            if path.exists() {
                std::fs::remove_file(&path).map_err(|e| HarnessError::io(&path, e))?;
            }
            Store::open(&path)?
        }
        None => Store::in_memory(),
    });
    let endpoint = IngestEndpoint::new(bus.clone() as Arc<dyn BusApi>);
    let dispatcher = Dispatcher::new(
        bus.clone(),
        store.clone(),
        clock.clone() as Arc<dyn Clock>,
    );
    let mut job = AnalyticsJob::new(bus.clone(), store.clone(), cfg.analytics())?;

    let mut lanes = Vec::with_capacity(cfg.workers.len());
    for spec in &cfg.workers {
        lanes.push(Lane {
            agent: EdgeAgent::new(spec.id.clone(), cfg.edge.clone(), cfg.ecg.fs_hz)?,
            streams: generate_streams(cfg, spec)?,
            next_ecg: 0,
            next_accel: 0,
            finished: false,
        });
    }

    let end = if cfg.duration_ms == 0 {
        0
    } else {
        cfg.duration_ms + cfg.watermark_ms
    };
    let upload_every = cfg.edge.upload_interval_ms;
    let mut redeliver_armed = vec![false; cfg.faults.len()];
    let mut results = Vec::new();
    let mut t = 0u64;
    loop {
        clock.advance_to(t);
        let fault = |kind: FaultKind| cfg.faults.iter().any(|f| f.kind == kind && f.active_at(t));
        let mut uplink = FaultyUplink {
            inner: EndpointUplink { endpoint: &endpoint },
            outage: fault(FaultKind::UplinkOutage),
            ack_loss: fault(FaultKind::AckLoss),
        };

        let upload_tick = t.is_multiple_of(upload_every) || t == end;
        for lane in &mut lanes {
            lane.feed_until(t)?;
            if t >= cfg.duration_ms && !lane.finished {
                lane.agent.finish()?;
                lane.finished = true;
            }
            if upload_tick || lane.agent.upload_due() {
                lane.agent.upload(&mut uplink);
            }
        }

        if t.is_multiple_of(cfg.dispatch_interval_ms) || t == end {
            for (i, f) in cfg.faults.iter().enumerate() {
                if f.kind == FaultKind::BusRedeliver && f.active_at(t) && !redeliver_armed[i] {
                    redeliver_armed[i] = true;
                    dispatcher.crash_before_commit();
                    job.crash_before_commit();
                }
            }
            dispatcher.step()?;
        }
        if t.is_multiple_of(cfg.tick_interval_ms) || t == end {
            results.extend(job.tick(t)?);
        }
        if t >= end {
            break;
        }
        let mut next = end
            .min(next_multiple(t, upload_every))
            .min(next_multiple(t, cfg.dispatch_interval_ms))
            .min(next_multiple(t, cfg.tick_interval_ms));
        if t < cfg.duration_ms {
            next = next.min(cfg.duration_ms);
        }
        for lane in &lanes {
            if let Some(ts) = lane.next_sample_ts() {
                next = next.min(ts.max(t + 1));
            }
        }
        t = next;
    }

    let report = build_report(cfg, &lanes, &endpoint, &dispatcher, &job, store.as_ref());
    let artifacts = RunArtifacts {
        report,
        alert_logs: lanes
            .iter()
            .map(|l| (l.agent.worker().clone(), l.agent.alert_log().to_vec()))
            .collect(),
        emitted: lanes
            .iter()
            .map(|l| (l.agent.worker().clone(), l.agent.emitted().to_vec()))
            .collect(),
        peaks: lanes
            .iter()
            .map(|l| (l.agent.worker().clone(), l.agent.peak_times().to_vec()))
            .collect(),
        truth: lanes
            .into_iter()
            .map(|l| (l.agent.worker().clone(), l.streams))
            .collect(),
        store,
        results,
    };
    if let Some(dir) = out_dir {
        write_outputs(cfg, &artifacts, dir)?;
    }
    Ok(artifacts)
}

fn build_report(
    cfg: &ScenarioConfig,
    lanes: &[Lane],
    endpoint: &IngestEndpoint,
    dispatcher: &Dispatcher,
    job: &AnalyticsJob,
    store: &Store,
) -> RunReport {
    let ingest = endpoint.stats();
    let dstats = dispatcher.stats();
    let astats = job.engine().stats();
    let mut workers = BTreeMap::new();
    let mut alert_latencies = Vec::new();
    let (mut raw, mut primary) = (0u64, 0u64);
    let (mut pred_raw, mut pred_primary) = (0.0, 0.0);
    for lane in lanes {
        let w = lane.agent.worker();
        let es = lane.agent.stats();
        let count = |metric: &str| store.scan(w, metric, 0, u64::MAX).len() as u64;
        for a in lane.agent.alert_log() {
            let start = episode_start(&lane.streams.posture, a.onset_ts).unwrap_or(a.onset_ts);
            alert_latencies.push(a.raised_ts.saturating_sub(start));
        }
        let iw = ingest.per_worker.get(w).copied().unwrap_or_default();
        workers.insert(
            w.clone(),
            WorkerReport {
                ecg_samples: es.ecg_samples,
                accel_samples: es.accel_samples,
                peaks_detected: es.peaks,
                rr_clamped: lane.streams.rr_clamped,
                primaries_emitted: es.rri_emitted + es.posture_emitted,
                primaries_sent: es.records_delivered,
                dedupe_hits: iw.duplicate_records,
                store_duplicates: dstats.per_worker.get(w).map_or(0, |c| c.duplicates),
                records_stored: count(RecordKind::Rri.store_metric())
                    + count(RecordKind::Posture.store_metric()),
                buffer_dropped: lane.agent.dropped(),
                fatigue_results: count(Metric::Fatigue.as_str()),
                relaxation_results: count(Metric::Relaxation.as_str()),
                insufficient_results: astats
                    .per_worker
                    .get(w)
                    .map_or(0, |m| m.values().map(|c| c.insufficient).sum()),
                alerts_raised: es.alerts_raised,
                alerts_stored: count(METRIC_ALERT),
                late_drops: astats.late_drops(w),
                bandwidth: lane.agent.bandwidth_report(),
                peak_score: score_peaks(
                    lane.agent.peak_times(),
                    &lane.streams.r_peaks_ms,
                    PEAK_MATCH_MS,
                    PEAK_WARMUP_BEATS,
                ),
            },
        );
        raw += es.raw_bytes;
        primary += es.primary_bytes;
        if cfg.duration_ms > 0 {
            let spec = cfg.workers.iter().find(|s| &s.id == w).expect("lane per worker");
            let p = predict_bandwidth(&BandwidthModel {
                worker: w.clone(),
                duration_ms: cfg.duration_ms,
                ecg_fs_hz: cfg.ecg.fs_hz,
                accel_fs_hz: cfg.accel.fs_hz,
                mean_rr_ms: spec.rr_profile.mean_rr_ms,
                posture_window_ms: cfg.edge.posture_window_ms,
                upload_interval_ms: cfg.edge.upload_interval_ms,
            });
            pred_raw += p.raw_bytes;
            pred_primary += p.primary_bytes;
        }
    }
    let measured = BandwidthReport::new(raw, primary);
    RunReport {
        seed: cfg.seed,
        duration_ms: cfg.duration_ms,
        faults: cfg.faults.clone(),
        workers,
        bandwidth: BandwidthSummary {
            raw_bytes: raw,
            primary_bytes: primary,
            ratio: measured.ratio,
            predicted_ratio: (pred_primary > 0.0).then(|| round_decimals(pred_raw / pred_primary)),
        },
        latency: Latencies {
            alert: percentiles(&alert_latencies),
            ingest_to_store: percentiles(&dispatcher.latencies()),
            window_end_to_result: percentiles(job.latencies()),
        },
        ingest,
        cleanse: dstats.cleanse,
        dispatcher_skipped_commits: dstats.skipped_commits,
        store_entries: store.len() as u64,
    }
}

fn write_outputs(cfg: &ScenarioConfig, art: &RunArtifacts, dir: &Path) -> Result<(), HarnessError> {
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
    };
    write("report.json", canonical::encode_string(&art.report) + "\n")?;
    let mut alerts = String::new();
    for a in art.alert_logs.values().flatten() {
        alerts.push_str(&canonical::encode_string(a));
        alerts.push('\n');
    }
    write("alerts.jsonl", alerts)?;
    let exports = dir.join("exports");
    std::fs::create_dir_all(&exports).map_err(|e| HarnessError::io(&exports, e))?;
    for w in art.alert_logs.keys() {
        for wc in &cfg.windows {
            export::export_series(
                art.store.as_ref(),
                w,
                wc.metric.as_str(),
                0,
                u64::MAX,
                export::ExportFormat::Csv,
                &exports.join(format!("{w}.{}.csv", wc.metric)),
            )?;
        }
    }
    Ok(())
}
