//! The dispatcher job: stores every acquired primary record, then republishes
//! the cleansed stream for analytics. Offsets are committed only after both
//! side effects succeed, so a crash simply causes an idempotent replay.

use crate::bus::{BusApi, BusError, Envelope, TOPIC_ALERTS, TOPIC_CLEANSED, TOPIC_PRIMARY};
use crate::canonical;
use crate::clock::Clock;
use crate::model::{Alert, PrimaryRecord, RecordKind, Validate, WorkerId};
use crate::store::{PutOutcome, RecordStore, StoreError, StoreRecord};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

pub const DISPATCHER_GROUP: &str = "dispatcher";
pub const DEFAULT_BATCH_MAX: usize = 500;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanseReport {
    pub input_count: u64,
    pub deduped: u64,
    pub out_of_range_dropped: u64,
    pub reordered: u64,
    pub output_count: u64,
}

impl CleanseReport {
    pub fn merge(&mut self, other: &CleanseReport) {
        self.input_count += other.input_count;
        self.deduped += other.deduped;
        self.out_of_range_dropped += other.out_of_range_dropped;
        self.reordered += other.reordered;
        self.output_count += other.output_count;
    }
}

/// Dedupes by natural key (first occurrence wins), drops artifact-flagged and
/// invalid records, then stable-sorts by ts.
pub fn cleanse(batch: Vec<PrimaryRecord>) -> (Vec<PrimaryRecord>, CleanseReport) {
    let mut report = CleanseReport {
        input_count: batch.len() as u64,
        ..Default::default()
    };
    let mut seen: HashSet<(WorkerId, RecordKind, u64)> = HashSet::new();
    let mut kept = Vec::with_capacity(batch.len());
    for rec in batch {
        if !seen.insert(rec.natural_key()) {
            report.deduped += 1;
            continue;
        }
        let artifact = matches!(&rec, PrimaryRecord::Rri(r) if r.artifact);
        if artifact || rec.validate().is_err() {
            report.out_of_range_dropped += 1;
            continue;
        }
        kept.push(rec);
    }
    let mut running_max = 0;
    for rec in &kept {
        if rec.ts() < running_max {
            report.reordered += 1;
        }
        running_max = running_max.max(rec.ts());
    }
    kept.sort_by_key(PrimaryRecord::ts);
    report.output_count = kept.len() as u64;
    (kept, report)
}

#[derive(Debug, thiserror::Error)]
pub enum DispatchError {
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerDispatchCounts {
    pub inserted: u64,
    pub duplicates: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DispatchStats {
    pub batches: u64,
    pub envelopes: u64,
    pub malformed: u64,
    pub rejected: u64,
    pub inserted: u64,
    pub duplicates: u64,
    pub published: u64,
    pub commits: u64,
    pub skipped_commits: u64,
    pub failed_batches: u64,
    pub alerts_inserted: u64,
    pub alert_duplicates: u64,
    pub cleanse: CleanseReport,
    pub per_worker: BTreeMap<WorkerId, WorkerDispatchCounts>,
}

/// Outcome of one partition step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Idle,
    Committed { envelopes: usize },
    /// Side effects done but the commit was skipped; the batch will be redelivered.
    Uncommitted { envelopes: usize },
}

pub struct Dispatcher {
    bus: Arc<dyn BusApi>,
    store: Arc<dyn RecordStore>,
    clock: Arc<dyn Clock>,
    batch_max: usize,
    skip_next_commit: AtomicBool,
    stats: Mutex<DispatchStats>,
    latencies: Mutex<Vec<u64>>,
}

impl Dispatcher {
    pub fn new(bus: Arc<dyn BusApi>, store: Arc<dyn RecordStore>, clock: Arc<dyn Clock>) -> Self {
        Self {
            bus,
            store,
            clock,
            batch_max: DEFAULT_BATCH_MAX,
            skip_next_commit: AtomicBool::new(false),
            stats: Mutex::new(DispatchStats::default()),
            latencies: Mutex::new(Vec::new()),
        }
    }

    pub fn with_batch_max(mut self, batch_max: usize) -> Self {
        self.batch_max = batch_max.max(1);
        self
    }

    /// Fault hook: the next batch is processed but its commit is skipped, as
    /// if the process died between side effects and commit.
    pub fn crash_before_commit(&self) {
        self.skip_next_commit.store(true, Ordering::SeqCst);
    }

    pub fn stats(&self) -> DispatchStats {
        self.stats.lock().clone()
    }

    /// Publish-to-store latency of each newly inserted primary record.
    pub fn latencies(&self) -> Vec<u64> {
        self.latencies.lock().clone()
    }

    /// Drains both input topics, every partition, until nothing is left or a
    /// batch fails. Returns the number of envelopes handled.
    pub fn step(&self) -> Result<usize, DispatchError> {
        let mut total = 0;
        for topic in [TOPIC_PRIMARY, TOPIC_ALERTS] {
            for p in 0..self.bus.partitions(topic)? {
                loop {
                    match self.step_partition(topic, p)? {
                        StepOutcome::Idle => break,
                        StepOutcome::Committed { envelopes } => total += envelopes,
                        StepOutcome::Uncommitted { envelopes } => {
                            total += envelopes;
                            break;
                        }
                    }
                }
            }
        }
        Ok(total)
    }

    /// Processes one polled batch of one partition.
    pub fn step_partition(&self, topic: &str, partition: u32) -> Result<StepOutcome, DispatchError> {
        let batch = self
            .bus
            .poll_partition(topic, DISPATCHER_GROUP, partition, self.batch_max)?;
        let Some(last) = batch.last() else {
            return Ok(StepOutcome::Idle);
        };
        let next_offset = last.offset + 1;
        let result = if topic == TOPIC_ALERTS {
            self.apply_alerts(&batch)
        } else {
            self.apply_primary(&batch)
        };
        if let Err(e) = result {
            self.stats.lock().failed_batches += 1;
            log::warn!("{topic}/{partition}: batch not committed: {e}");
            return Err(e);
        }
        let mut stats = self.stats.lock();
        stats.batches += 1;
        stats.envelopes += batch.len() as u64;
        if self.skip_next_commit.swap(false, Ordering::SeqCst) {
            stats.skipped_commits += 1;
            return Ok(StepOutcome::Uncommitted {
                envelopes: batch.len(),
            });
        }
        drop(stats);
        self.bus
            .commit(topic, DISPATCHER_GROUP, partition, next_offset)?;
        self.stats.lock().commits += 1;
        Ok(StepOutcome::Committed {
            envelopes: batch.len(),
        })
    }

    fn put(&self, record: StoreRecord) -> Result<Option<PutOutcome>, StoreError> {
        match self.store.put(record) {
            Ok(o) => Ok(Some(o)),
            Err(e) if e.is_transient() => Err(e),
            Err(e) => {
                // A permanent rejection would block the partition forever.
                log::error!("dropping record rejected by store: {e}");
                self.stats.lock().rejected += 1;
                Ok(None)
            }
        }
    }

    fn apply_primary(&self, batch: &[Envelope]) -> Result<(), DispatchError> {
        let mut records = Vec::with_capacity(batch.len());
        let mut publish_ts = Vec::with_capacity(batch.len());
        for env in batch {
            match canonical::decode_str::<PrimaryRecord>(&env.payload) {
                Ok(r) => {
                    records.push(r);
                    publish_ts.push(env.publish_ts);
                }
                Err(e) => {
                    log::warn!("malformed primary record at offset {}: {e}", env.offset);
                    self.stats.lock().malformed += 1;
                }
            }
        }
        for (rec, sent) in records.iter().zip(&publish_ts) {
            if rec.validate().is_err() {
                continue;
            }
            let now = self.clock.now_ms();
            let outcome = self.put(StoreRecord::primary(rec, now))?;
            let mut stats = self.stats.lock();
            let counts = stats.per_worker.entry(rec.worker().clone()).or_default();
            match outcome {
                Some(PutOutcome::Inserted) => {
                    counts.inserted += 1;
                    stats.inserted += 1;
                    self.latencies.lock().push(now.saturating_sub(*sent));
                }
                Some(PutOutcome::Duplicate) => {
                    counts.duplicates += 1;
                    stats.duplicates += 1;
                }
                None => {}
            }
        }
        let (cleansed, report) = cleanse(records);
        for rec in &cleansed {
            self.bus.publish(
                TOPIC_CLEANSED,
                rec.worker().as_str(),
                &canonical::encode(rec),
            )?;
        }
        let mut stats = self.stats.lock();
        stats.published += cleansed.len() as u64;
        stats.cleanse.merge(&report);
        Ok(())
    }

    fn apply_alerts(&self, batch: &[Envelope]) -> Result<(), DispatchError> {
        for env in batch {
            let alert: Alert = match canonical::decode_str(&env.payload) {
                Ok(a) => a,
                Err(e) => {
                    log::warn!("malformed alert at offset {}: {e}", env.offset);
                    self.stats.lock().malformed += 1;
                    continue;
                }
            };
            match self.put(StoreRecord::alert(&alert, self.clock.now_ms()))? {
                Some(PutOutcome::Inserted) => self.stats.lock().alerts_inserted += 1,
                Some(PutOutcome::Duplicate) => self.stats.lock().alert_duplicates += 1,
                None => {}
            }
        }
        Ok(())
    }

    /// Runs one consumer thread per partition of each input topic until
    /// `shutdown` is set, then drains what is left.
    pub fn dispatch_loop(&self, shutdown: &AtomicBool, idle: Duration) -> Result<(), DispatchError> {
        let mut lanes = Vec::new();
        for topic in [TOPIC_PRIMARY, TOPIC_ALERTS] {
            for p in 0..self.bus.partitions(topic)? {
                lanes.push((topic, p));
            }
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = lanes
                .iter()
                .map(|&(topic, p)| {
                    s.spawn(move || -> Result<(), DispatchError> {
                        loop {
                            let stopping = shutdown.load(Ordering::SeqCst);
                            match self.step_partition(topic, p) {
                                Ok(StepOutcome::Idle) if stopping => return Ok(()),
                                Ok(StepOutcome::Idle) => std::thread::sleep(idle),
                                Ok(_) => {}
                                Err(e) if stopping => return Err(e),
                                Err(_) => std::thread::sleep(idle),
                            }
                        }
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("dispatcher lane panicked"))
                .collect::<Result<Vec<()>, _>>()
                .map(|_| ())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::Bus;
    use crate::clock::VirtualClock;
    use crate::model::{PostureLabel, PostureObservation, RriInterval};
    use crate::store::Store;

    fn w() -> WorkerId {
        WorkerId::new("w1").unwrap()
    }

    fn rri(seq: u64, ts: u64, artifact: bool) -> PrimaryRecord {
        PrimaryRecord::Rri(RriInterval {
            worker: w(),
            ts,
            rri_ms: if artifact { 2500 } else { 800 },
            artifact,
            seq,
        })
    }

    #[test]
    fn cleanse_examples() {
        let (out, r) = cleanse(vec![rri(7, 700, false), rri(7, 700, false)]);
        assert_eq!((out.len(), r.deduped), (1, 1));

        let (out, r) = cleanse(vec![rri(1, 100, true)]);
        assert!(out.is_empty());
        assert_eq!(r.out_of_range_dropped, 1);

        let (out, r) = cleanse(vec![rri(3, 3, false), rri(1, 1, false), rri(2, 2, false)]);
        assert_eq!(out.iter().map(PrimaryRecord::ts).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(r.reordered, 2);
        assert_eq!(r.output_count, r.input_count - r.deduped - r.out_of_range_dropped);
    }

    #[test]
    fn cleanse_keeps_kinds_apart() {
        let posture = PrimaryRecord::Posture(PostureObservation {
            worker: w(),
            ts: 0,
            tilt_deg: 0.0,
            activity_g: 0.0,
            label: PostureLabel::Upright,
            seq: 7,
        });
        let (out, r) = cleanse(vec![rri(7, 10, false), posture]);
        assert_eq!((out.len(), r.deduped), (2, 0));
        assert_eq!(out[0].kind(), RecordKind::Posture);
    }

    fn setup() -> (Arc<Bus>, Arc<Store>, Dispatcher) {
        let clock = Arc::new(VirtualClock::new(0));
        let bus = Arc::new(Bus::with_pipeline_topics(clock.clone(), 2).unwrap());
        let store = Arc::new(Store::in_memory());
        let d = Dispatcher::new(bus.clone(), store.clone(), clock);
        (bus, store, d)
    }

    fn publish(bus: &Bus, rec: &PrimaryRecord) {
        bus.publish(TOPIC_PRIMARY, rec.worker().as_str(), &canonical::encode(rec))
            .unwrap();
    }

    #[test]
    fn empty_poll_is_noop() {
        let (bus, store, d) = setup();
        assert_eq!(d.step().unwrap(), 0);
        assert!(store.is_empty());
        assert_eq!(bus.log_end(TOPIC_CLEANSED, 0).unwrap(), 0);
    }

    #[test]
    fn conservation_without_artifacts() {
        let (bus, store, d) = setup();
        for i in 0..100 {
            publish(&bus, &rri(i, 800 * (i + 1), false));
        }
        d.step().unwrap();
        assert_eq!(store.len(), 100);
        let s = d.stats();
        assert_eq!((s.inserted, s.published), (100, 100));
        assert_eq!(bus.lag(TOPIC_PRIMARY, DISPATCHER_GROUP).unwrap(), 0);
    }

    #[test]
    fn raw_copies_include_artifacts() {
        let (bus, store, d) = setup();
        publish(&bus, &rri(0, 800, false));
        publish(&bus, &rri(1, 1600, true));
        d.step().unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(d.stats().published, 1);
    }

    #[test]
    fn redelivery_is_idempotent() {
        let (bus, store, d) = setup();
        for i in 0..20 {
            publish(&bus, &rri(i, 800 * (i + 1), false));
        }
        d.crash_before_commit();
        d.step().unwrap();
        assert!(bus.lag(TOPIC_PRIMARY, DISPATCHER_GROUP).unwrap() > 0);
        d.step().unwrap();
        let distinct: HashSet<u64> = store.snapshot().iter().map(|r| r.key.disambiguator).collect();
        assert_eq!(store.len(), 20);
        assert_eq!(distinct.len(), 20);
        assert_eq!(d.stats().duplicates, 20);
        assert_eq!(bus.lag(TOPIC_PRIMARY, DISPATCHER_GROUP).unwrap(), 0);
    }

    #[test]
    fn malformed_payload_skipped() {
        let (bus, store, d) = setup();
        bus.publish(TOPIC_PRIMARY, "w1", b"{\"kind\":\"nope\"}").unwrap();
        publish(&bus, &rri(0, 800, false));
        d.step().unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(d.stats().malformed, 1);
    }

    struct FailingStore;
    impl RecordStore for FailingStore {
        fn put(&self, _: StoreRecord) -> Result<PutOutcome, StoreError> {
            Err(StoreError::Unavailable("down".into()))
        }
        fn scan(&self, _: &WorkerId, _: &str, _: u64, _: u64) -> Vec<StoreRecord> {
            Vec::new()
        }
    }

    #[test]
    fn store_failure_blocks_commit() {
        let clock = Arc::new(VirtualClock::new(0));
        let bus = Arc::new(Bus::with_pipeline_topics(clock.clone(), 1).unwrap());
        let d = Dispatcher::new(bus.clone(), Arc::new(FailingStore), clock);
        publish(&bus, &rri(0, 800, false));
        assert!(d.step().is_err());
        assert_eq!(bus.lag(TOPIC_PRIMARY, DISPATCHER_GROUP).unwrap(), 1);
        assert_eq!(bus.log_end(TOPIC_CLEANSED, 0).unwrap(), 0);
    }
}
