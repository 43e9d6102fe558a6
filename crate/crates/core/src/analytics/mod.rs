//! Micro-batch analysis of the cleansed RRI stream: per-metric tumbling
//! windows, watermark-based sealing and periodic evaluation ticks.

pub mod hrv;

pub use hrv::{compute_cvi, compute_fatigue, fatigue_score, window_stats, BaselineState, Cvi, Fatigue};

use crate::bus::{BusApi, BusError, TOPIC_CLEANSED};
use crate::canonical::{self, round_decimals};
use crate::model::{AnalysisResult, Metric, PrimaryRecord, RriInterval, WindowConfig, WorkerId};
use crate::store::{PutOutcome, RecordStore, StoreRecord};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

pub const ANALYTICS_GROUP: &str = "analytics";
pub const DEFAULT_WATERMARK_MS: u64 = 5_000;
pub const DEFAULT_TICK_INTERVAL_MS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("window size must be positive")]
    ZeroWindow,
    #[error("min_rri_per_window must be at least 2")]
    MinTooSmall,
    #[error("metric {0} configured more than once")]
    DuplicateMetric(Metric),
    #[error("no window configured")]
    NoWindows,
    #[error("bucket {bucket} is sealed")]
    Sealed { bucket: u64 },
    #[error("record ts {ts} outside window {bucket}")]
    WrongWindow { ts: u64, bucket: u64 },
}

pub fn window_assign(ts: u64, config: &WindowConfig) -> u64 {
    ts / config.window_ms
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsConfig {
    pub windows: Vec<WindowConfig>,
    pub watermark_ms: u64,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        Self {
            windows: Metric::ALL.iter().map(|&m| WindowConfig::new(m)).collect(),
            watermark_ms: DEFAULT_WATERMARK_MS,
        }
    }
}

impl AnalyticsConfig {
    pub fn check(&self) -> Result<(), AnalyticsError> {
        if self.windows.is_empty() {
            return Err(AnalyticsError::NoWindows);
        }
        let mut seen = HashSet::new();
        for w in &self.windows {
            if w.window_ms == 0 {
                return Err(AnalyticsError::ZeroWindow);
            }
            if w.min_rri_per_window < 2 {
                return Err(AnalyticsError::MinTooSmall);
            }
            if !seen.insert(w.metric) {
                return Err(AnalyticsError::DuplicateMetric(w.metric));
            }
        }
        Ok(())
    }
}

/// RRI values accumulated for one (worker, metric, window).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBucket {
    pub worker: WorkerId,
    pub metric: Metric,
    pub window_index: u64,
    pub window_ms: u64,
    entries: Vec<(u64, u64, f64)>,
    sealed: bool,
}

impl WindowBucket {
    pub fn new(worker: WorkerId, config: &WindowConfig, window_index: u64) -> Self {
        Self {
            worker,
            metric: config.metric,
            window_index,
            window_ms: config.window_ms,
            entries: Vec::new(),
            sealed: false,
        }
    }

    pub fn window_start(&self) -> u64 {
        self.window_index * self.window_ms
    }

    pub fn window_end(&self) -> u64 {
        self.window_start() + self.window_ms
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, rri: &RriInterval) -> Result<(), AnalyticsError> {
        if self.sealed {
            return Err(AnalyticsError::Sealed {
                bucket: self.window_index,
            });
        }
        if rri.ts / self.window_ms != self.window_index {
            return Err(AnalyticsError::WrongWindow {
                ts: rri.ts,
                bucket: self.window_index,
            });
        }
        self.entries.push((rri.ts, rri.seq, rri.rri_ms as f64));
        Ok(())
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    /// RRI values in (ts, seq) order.
    pub fn values(&self) -> Vec<f64> {
        let mut e = self.entries.clone();
        e.sort_by_key(|&(ts, seq, _)| (ts, seq));
        e.into_iter().map(|(_, _, v)| v).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub bucketed: u64,
    pub late_drops: u64,
    pub results: u64,
    pub insufficient: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsStats {
    pub ingested: u64,
    pub duplicates: u64,
    pub ignored: u64,
    pub store_retries: u64,
    pub per_worker: BTreeMap<WorkerId, BTreeMap<Metric, MetricCounts>>,
}

impl AnalyticsStats {
    pub fn metric(&self, worker: &WorkerId, metric: Metric) -> MetricCounts {
        self.per_worker
            .get(worker)
            .and_then(|m| m.get(&metric))
            .copied()
            .unwrap_or_default()
    }

    pub fn late_drops(&self, worker: &WorkerId) -> u64 {
        self.per_worker
            .get(worker)
            .map(|m| m.values().map(|c| c.late_drops).sum())
            .unwrap_or(0)
    }

    pub fn results(&self, worker: &WorkerId) -> u64 {
        self.per_worker
            .get(worker)
            .map(|m| m.values().map(|c| c.results).sum())
            .unwrap_or(0)
    }
}

/// A result together with the virtual time it was stored.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredResult {
    pub result: AnalysisResult,
    pub write_ts: u64,
}

#[derive(Debug)]
pub struct MicroBatchEngine {
    config: AnalyticsConfig,
    buckets: BTreeMap<(WorkerId, Metric, u64), WindowBucket>,
    /// Per metric, every window index below this value is sealed.
    sealed_before: BTreeMap<Metric, u64>,
    seen: HashSet<(WorkerId, u64)>,
    baselines: BTreeMap<WorkerId, BaselineState>,
    pending: Vec<AnalysisResult>,
    stats: AnalyticsStats,
}

impl MicroBatchEngine {
    pub fn new(config: AnalyticsConfig) -> Result<Self, AnalyticsError> {
        config.check()?;
        Ok(Self {
            config,
            buckets: BTreeMap::new(),
            sealed_before: BTreeMap::new(),
            seen: HashSet::new(),
            baselines: BTreeMap::new(),
            pending: Vec::new(),
            stats: AnalyticsStats::default(),
        })
    }

    pub fn config(&self) -> &AnalyticsConfig {
        &self.config
    }

    pub fn stats(&self) -> &AnalyticsStats {
        &self.stats
    }

    pub fn baseline(&self, worker: &WorkerId) -> Option<&BaselineState> {
        self.baselines.get(worker)
    }

    /// Results whose store write failed and will be retried.
    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Adds one cleansed RRI to its bucket for every metric. Repeated seqs
    /// are ignored; records for sealed windows are counted as late drops.
    pub fn ingest(&mut self, rri: &RriInterval) {
        if rri.artifact {
            self.stats.ignored += 1;
            return;
        }
        if !self.seen.insert((rri.worker.clone(), rri.seq)) {
            self.stats.duplicates += 1;
            return;
        }
        self.stats.ingested += 1;
        for cfg in &self.config.windows {
            let idx = window_assign(rri.ts, cfg);
            let counts = self
                .stats
                .per_worker
                .entry(rri.worker.clone())
                .or_default()
                .entry(cfg.metric)
                .or_default();
            if idx < self.sealed_before.get(&cfg.metric).copied().unwrap_or(0) {
                counts.late_drops += 1;
                continue;
            }
            counts.bucketed += 1;
            self.buckets
                .entry((rri.worker.clone(), cfg.metric, idx))
                .or_insert_with(|| WindowBucket::new(rri.worker.clone(), cfg, idx))
                .insert(rri)
                .expect("bucket chosen by window_assign");
        }
    }

    pub fn ingest_record(&mut self, record: &PrimaryRecord) {
        match record {
            PrimaryRecord::Rri(r) => self.ingest(r),
            PrimaryRecord::Posture(_) => self.stats.ignored += 1,
        }
    }

    /// Seals every window with end ≤ now − watermark, evaluates it and stores
    /// the result. Results that fail to store are retried on the next tick.
    pub fn run_microbatch_tick(&mut self, now: u64, store: &dyn RecordStore) -> Vec<StoredResult> {
        let cutoff = now.saturating_sub(self.config.watermark_ms);
        for cfg in &self.config.windows {
            let s = self.sealed_before.entry(cfg.metric).or_insert(0);
            *s = (*s).max(cutoff / cfg.window_ms);
        }
        let due: Vec<_> = self
            .buckets
            .keys()
            .filter(|(_, m, idx)| *idx < self.sealed_before[m])
            .cloned()
            .collect();
        let mut results = std::mem::take(&mut self.pending);
        for key in due {
            let mut bucket = self.buckets.remove(&key).expect("key listed above");
            bucket.seal();
            let cfg = self
                .config
                .windows
                .iter()
                .find(|c| c.metric == bucket.metric)
                .expect("bucket metric configured")
                .clone();
            results.push(self.evaluate(&bucket, &cfg));
        }

        let mut stored = Vec::new();
        for result in results {
            match store.put(StoreRecord::result(&result, now)) {
                Ok(outcome) => {
                    if outcome == PutOutcome::Inserted {
                        let c = self
                            .stats
                            .per_worker
                            .entry(result.worker.clone())
                            .or_default()
                            .entry(result.metric)
                            .or_default();
                        c.results += 1;
                        c.insufficient += u64::from(result.insufficient);
                    }
                    stored.push(StoredResult {
                        result,
                        write_ts: now,
                    });
                }
                Err(e) if e.is_transient() => {
                    log::warn!("result store failed, retrying next tick: {e}");
                    self.stats.store_retries += 1;
                    self.pending.push(result);
                }
                Err(e) => log::error!("result rejected by store: {e}"),
            }
        }
        stored
    }

    fn evaluate(&mut self, bucket: &WindowBucket, cfg: &WindowConfig) -> AnalysisResult {
        let values = bucket.values();
        let mut result = AnalysisResult {
            worker: bucket.worker.clone(),
            metric: bucket.metric,
            window_start: bucket.window_start(),
            window_end: bucket.window_end(),
            value: None,
            cvi: None,
            input_count: values.len() as u64,
            insufficient: true,
        };
        if values.len() < cfg.min_rri_per_window {
            return result;
        }
        match bucket.metric {
            Metric::Fatigue => {
                let Some(f) = compute_fatigue(&values, self.baselines.get(&bucket.worker)) else {
                    return result;
                };
                if let Some(b) = f.new_baseline {
                    self.baselines.insert(bucket.worker.clone(), b);
                }
                result.value = Some(round_decimals(f.fatigue_score));
            }
            Metric::Relaxation => {
                let Some(c) = compute_cvi(&values) else {
                    return result;
                };
                result.value = Some(round_decimals(c.relaxation_score));
                result.cvi = Some(round_decimals(c.cvi));
            }
        }
        result.insufficient = false;
        result
    }
}

/// Consumer of the cleansed topic driving a [`MicroBatchEngine`].
pub struct AnalyticsJob {
    bus: Arc<dyn BusApi>,
    store: Arc<dyn RecordStore>,
    engine: MicroBatchEngine,
    skip_next_commit: bool,
    malformed: u64,
    latencies: Vec<u64>,
    poll_max: usize,
}

impl AnalyticsJob {
    pub fn new(
        bus: Arc<dyn BusApi>,
        store: Arc<dyn RecordStore>,
        config: AnalyticsConfig,
    ) -> Result<Self, AnalyticsError> {
        Ok(Self {
            bus,
            store,
            engine: MicroBatchEngine::new(config)?,
            skip_next_commit: false,
            malformed: 0,
            latencies: Vec::new(),
            poll_max: 1000,
        })
    }

    pub fn engine(&self) -> &MicroBatchEngine {
        &self.engine
    }

    pub fn malformed(&self) -> u64 {
        self.malformed
    }

    /// Window-end-to-stored-result latency of every stored result.
    pub fn latencies(&self) -> &[u64] {
        &self.latencies
    }

    /// Fault hook: the next polled batch is not committed and is delivered again.
    pub fn crash_before_commit(&mut self) {
        self.skip_next_commit = true;
    }

    /// Consumes everything available, then runs one micro-batch tick.
    pub fn tick(&mut self, now: u64) -> Result<Vec<StoredResult>, BusError> {
        for p in 0..self.bus.partitions(TOPIC_CLEANSED)? {
            loop {
                let batch =
                    self.bus
                        .poll_partition(TOPIC_CLEANSED, ANALYTICS_GROUP, p, self.poll_max)?;
                let Some(last) = batch.last() else { break };
                let next = last.offset + 1;
                for env in &batch {
                    match canonical::decode_str::<PrimaryRecord>(&env.payload) {
                        Ok(r) => self.engine.ingest_record(&r),
                        Err(e) => {
                            log::warn!("malformed cleansed record: {e}");
                            self.malformed += 1;
                        }
                    }
                }
                if std::mem::take(&mut self.skip_next_commit) {
                    break;
                }
                self.bus.commit(TOPIC_CLEANSED, ANALYTICS_GROUP, p, next)?;
            }
        }
        let stored = self.engine.run_microbatch_tick(now, self.store.as_ref());
        self.latencies.extend(
            stored
                .iter()
                .map(|s| s.write_ts.saturating_sub(s.result.window_end)),
        );
        Ok(stored)
    }
}
