//! In-process message bus: named topics split into partitions, each an
//! append-only offset log, with consumer groups and at-least-once delivery.
//!
//! A consumer always reads from its group's committed offset, so anything
//! polled but not committed is delivered again on the next poll.

pub mod tcp;

use crate::clock::Clock;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;

/// Ingestion output, keyed by worker.
pub const TOPIC_PRIMARY: &str = "vital.primary";
/// Dispatcher output, keyed by worker.
pub const TOPIC_CLEANSED: &str = "vital.cleansed";
/// Alerts forwarded by edge agents after (re)connecting.
pub const TOPIC_ALERTS: &str = "vital.alerts";

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub fn partition_for(key: &str, partitions: u32) -> u32 {
    (fnv1a_64(key.as_bytes()) % u64::from(partitions)) as u32
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BusError {
    #[error("topic {0:?} already exists")]
    DuplicateTopic(String),
    #[error("unknown topic {0:?}")]
    UnknownTopic(String),
    #[error("topic needs at least one partition")]
    NoPartitions,
    #[error("partition {partition} out of range for topic {topic:?}")]
    UnknownPartition { topic: String, partition: u32 },
    #[error("commit offset {offset} beyond log end {end} on {topic}/{partition}")]
    CommitBeyondEnd {
        topic: String,
        partition: u32,
        offset: u64,
        end: u64,
    },
    #[error("payload is not UTF-8 JSON text")]
    InvalidPayload,
    #[error("transport: {0}")]
    Transport(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub topic: String,
    pub partition: u32,
    pub offset: u64,
    pub key: String,
    /// Canonical JSON text of the carried record.
    pub payload: String,
    pub publish_ts: u64,
}

/// Operations shared by the in-process bus and its TCP client.
pub trait BusApi: Send + Sync {
    fn publish(&self, topic: &str, key: &str, payload: &[u8]) -> Result<(u32, u64), BusError>;
    fn partitions(&self, topic: &str) -> Result<u32, BusError>;
    /// Up to `max` envelopes of one partition, from the group's committed offset.
    fn poll_partition(
        &self,
        topic: &str,
        group: &str,
        partition: u32,
        max: usize,
    ) -> Result<Vec<Envelope>, BusError>;
    /// Sets the group's next offset to read.
    fn commit(&self, topic: &str, group: &str, partition: u32, offset: u64)
        -> Result<(), BusError>;
}

struct Topic {
    partitions: Vec<RwLock<Vec<Envelope>>>,
}

pub struct Bus {
    clock: Arc<dyn Clock>,
    topics: RwLock<HashMap<String, Arc<Topic>>>,
    groups: Mutex<HashMap<(String, String), Vec<u64>>>,
}

impl std::fmt::Debug for Bus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bus")
            .field("topics", &self.topics.read().keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Bus {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            clock,
            topics: RwLock::new(HashMap::new()),
            groups: Mutex::new(HashMap::new()),
        }
    }

    /// Bus with the three pipeline topics already created.
    pub fn with_pipeline_topics(clock: Arc<dyn Clock>, partitions: u32) -> Result<Self, BusError> {
        let bus = Self::new(clock);
        for name in [TOPIC_PRIMARY, TOPIC_CLEANSED, TOPIC_ALERTS] {
            bus.create_topic(name, partitions)?;
        }
        Ok(bus)
    }

    pub fn create_topic(&self, name: &str, partitions: u32) -> Result<(), BusError> {
        if partitions == 0 {
            return Err(BusError::NoPartitions);
        }
        let mut topics = self.topics.write();
        if topics.contains_key(name) {
            return Err(BusError::DuplicateTopic(name.to_string()));
        }
        let partitions = (0..partitions).map(|_| RwLock::new(Vec::new())).collect();
        topics.insert(name.to_string(), Arc::new(Topic { partitions }));
        Ok(())
    }

    fn topic(&self, name: &str) -> Result<Arc<Topic>, BusError> {
        self.topics
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| BusError::UnknownTopic(name.to_string()))
    }

    /// Registers a group on a topic, starting from offset 0 on every partition.
    pub fn subscribe<'a>(&'a self, topic: &str, group: &str) -> Result<Consumer<'a, Self>, BusError> {
        let n = self.partitions(topic)?;
        self.groups
            .lock()
            .entry((topic.to_string(), group.to_string()))
            .or_insert_with(|| vec![0; n as usize]);
        Ok(Consumer::new(self, topic, group))
    }

    /// Number of envelopes appended to one partition so far.
    pub fn log_end(&self, topic: &str, partition: u32) -> Result<u64, BusError> {
        let t = self.topic(topic)?;
        let p = t
            .partitions
            .get(partition as usize)
            .ok_or_else(|| BusError::UnknownPartition {
                topic: topic.to_string(),
                partition,
            })?;
        let end = p.read().len() as u64;
        Ok(end)
    }

    pub fn committed(&self, topic: &str, group: &str, partition: u32) -> u64 {
        self.groups
            .lock()
            .get(&(topic.to_string(), group.to_string()))
            .and_then(|v| v.get(partition as usize).copied())
            .unwrap_or(0)
    }

    /// Envelopes not yet committed by `group`, summed over partitions.
    pub fn lag(&self, topic: &str, group: &str) -> Result<u64, BusError> {
        let n = self.partitions(topic)?;
        let mut lag = 0;
        for p in 0..n {
            lag += self.log_end(topic, p)? - self.committed(topic, group, p);
        }
        Ok(lag)
    }
}

impl BusApi for Bus {
    fn publish(&self, topic: &str, key: &str, payload: &[u8]) -> Result<(u32, u64), BusError> {
        let payload = std::str::from_utf8(payload)
            .map_err(|_| BusError::InvalidPayload)?
            .to_string();
        let t = self.topic(topic)?;
        let partition = partition_for(key, t.partitions.len() as u32);
        let mut log = t.partitions[partition as usize].write();
        let offset = log.len() as u64;
        log.push(Envelope {
            topic: topic.to_string(),
            partition,
            offset,
            key: key.to_string(),
            payload,
            publish_ts: self.clock.now_ms(),
        });
        Ok((partition, offset))
    }

    fn partitions(&self, topic: &str) -> Result<u32, BusError> {
        Ok(self.topic(topic)?.partitions.len() as u32)
    }

    fn poll_partition(
        &self,
        topic: &str,
        group: &str,
        partition: u32,
        max: usize,
    ) -> Result<Vec<Envelope>, BusError> {
        let t = self.topic(topic)?;
        let log = t
            .partitions
            .get(partition as usize)
            .ok_or_else(|| BusError::UnknownPartition {
                topic: topic.to_string(),
                partition,
            })?;
        let from = {
            let mut groups = self.groups.lock();
            let offsets = groups
                .entry((topic.to_string(), group.to_string()))
                .or_insert_with(|| vec![0; t.partitions.len()]);
            offsets[partition as usize]
        };
        let log = log.read();
        Ok(log
            .iter()
            .skip(from as usize)
            .take(max)
            .cloned()
            .collect())
    }

    fn commit(
        &self,
        topic: &str,
        group: &str,
        partition: u32,
        offset: u64,
    ) -> Result<(), BusError> {
        let end = self.log_end(topic, partition)?;
        if offset > end {
            return Err(BusError::CommitBeyondEnd {
                topic: topic.to_string(),
                partition,
                offset,
                end,
            });
        }
        let n = self.partitions(topic)? as usize;
        let mut groups = self.groups.lock();
        let offsets = groups
            .entry((topic.to_string(), group.to_string()))
            .or_insert_with(|| vec![0; n]);
        offsets[partition as usize] = offset;
        Ok(())
    }
}

/// A group's view of one topic.
pub struct Consumer<'a, B: BusApi + ?Sized> {
    bus: &'a B,
    topic: String,
    group: String,
}

impl<'a, B: BusApi + ?Sized> Consumer<'a, B> {
    pub fn new(bus: &'a B, topic: &str, group: &str) -> Self {
        Self {
            bus,
            topic: topic.to_string(),
            group: group.to_string(),
        }
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn group(&self) -> &str {
        &self.group
    }

    /// Up to `max` envelopes across partitions, partition by partition, each
    /// in offset order from the committed offset.
    pub fn poll(&self, max: usize) -> Result<Vec<Envelope>, BusError> {
        let mut out = Vec::new();
        for p in 0..self.bus.partitions(&self.topic)? {
            if out.len() >= max {
                break;
            }
            out.extend(
                self.bus
                    .poll_partition(&self.topic, &self.group, p, max - out.len())?,
            );
        }
        Ok(out)
    }

    pub fn poll_partition(&self, partition: u32, max: usize) -> Result<Vec<Envelope>, BusError> {
        self.bus
            .poll_partition(&self.topic, &self.group, partition, max)
    }

    pub fn commit(&self, partition: u32, offset: u64) -> Result<(), BusError> {
        self.bus.commit(&self.topic, &self.group, partition, offset)
    }

    /// Commits everything up to and including each envelope in `batch`.
    pub fn commit_batch(&self, batch: &[Envelope]) -> Result<(), BusError> {
        let mut next: HashMap<u32, u64> = HashMap::new();
        for e in batch {
            let v = next.entry(e.partition).or_insert(0);
            *v = (*v).max(e.offset + 1);
        }
        for (p, off) in next {
            self.commit(p, off)?;
        }
        Ok(())
    }
}
