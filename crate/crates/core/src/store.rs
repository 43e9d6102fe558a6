//! Idempotent time-series store: an ordered in-memory map keyed by
//! (worker, metric, ts, disambiguator) backed by an append-only log.
//!
//! Log format, one entry per line:
//!
//! ```text
//! <canonical JSON StoreRecord>\t<crc32 of the JSON bytes, 8 lowercase hex digits>\n
//! ```
//!
//! A final line without its newline is a torn write and is discarded on
//! recovery; any other damaged line is reported with its byte offset.

use crate::canonical;
use crate::model::{Alert, AnalysisResult, PrimaryRecord, RecordKind, WorkerId};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

pub const METRIC_ALERT: &str = "alert";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowKey {
    pub worker: WorkerId,
    pub metric: String,
    pub ts: u64,
    pub disambiguator: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub key: RowKey,
    /// Canonical JSON text of the stored domain record.
    pub payload: String,
    pub write_ts: u64,
}

impl StoreRecord {
    pub fn primary(record: &PrimaryRecord, write_ts: u64) -> Self {
        Self {
            key: RowKey {
                worker: record.worker().clone(),
                metric: record.kind().store_metric().to_string(),
                ts: record.ts(),
                disambiguator: record.seq(),
            },
            payload: canonical::encode_string(record),
            write_ts,
        }
    }

    /// Keyed by window start; the disambiguator is the window index.
    pub fn result(result: &AnalysisResult, write_ts: u64) -> Self {
        let width = result.window_end.saturating_sub(result.window_start).max(1);
        Self {
            key: RowKey {
                worker: result.worker.clone(),
                metric: result.metric.as_str().to_string(),
                ts: result.window_start,
                disambiguator: result.window_start / width,
            },
            payload: canonical::encode_string(result),
            write_ts,
        }
    }

    pub fn alert(alert: &Alert, write_ts: u64) -> Self {
        Self {
            key: RowKey {
                worker: alert.worker.clone(),
                metric: METRIC_ALERT.to_string(),
                ts: alert.onset_ts,
                disambiguator: 0,
            },
            payload: canonical::encode_string(alert),
            write_ts,
        }
    }

    /// Checks that the payload decodes to the record type implied by the
    /// metric and agrees with the key.
    pub fn check_payload(&self) -> Result<(), StoreError> {
        let mismatch = |why: &str| StoreError::PayloadKeyMismatch {
            key: self.key.clone(),
            reason: why.to_string(),
        };
        let expected = match self.key.metric.as_str() {
            "primary.rri" | "primary.posture" => {
                let rec: PrimaryRecord = canonical::decode_str(&self.payload)
                    .map_err(|e| mismatch(&e.to_string()))?;
                if rec.kind().store_metric() != self.key.metric {
                    return Err(mismatch("record kind differs from metric"));
                }
                StoreRecord::primary(&rec, self.write_ts).key
            }
            METRIC_ALERT => {
                let a: Alert = canonical::decode_str(&self.payload)
                    .map_err(|e| mismatch(&e.to_string()))?;
                StoreRecord::alert(&a, self.write_ts).key
            }
            m if crate::model::Metric::parse(m).is_some() => {
                let r: AnalysisResult = canonical::decode_str(&self.payload)
                    .map_err(|e| mismatch(&e.to_string()))?;
                StoreRecord::result(&r, self.write_ts).key
            }
            _ => return Err(mismatch("unknown metric")),
        };
        if expected != self.key {
            return Err(mismatch("key fields differ from payload"));
        }
        Ok(())
    }

    fn to_log_line(&self) -> String {
        let body = canonical::encode_string(self);
        let crc = crc32fast::hash(body.as_bytes());
        format!("{body}\t{crc:08x}\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PutOutcome {
    Inserted,
    Duplicate,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("key {key:?} already holds a different payload")]
    KeyConflict { key: RowKey },
    #[error("payload does not match key {key:?}: {reason}")]
    PayloadKeyMismatch { key: RowKey, reason: String },
    #[error("corrupt log entry at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("store unavailable: {0}")]
    Unavailable(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl StoreError {
    /// Errors that may succeed on retry, as opposed to bad input.
    pub fn is_transient(&self) -> bool {
        matches!(self, Self::Unavailable(_) | Self::Io(_))
    }
}

/// The write/read surface pipeline stages depend on.
pub trait RecordStore: Send + Sync {
    fn put(&self, record: StoreRecord) -> Result<PutOutcome, StoreError>;
    fn scan(&self, worker: &WorkerId, metric: &str, t0: u64, t1: u64) -> Vec<StoreRecord>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecoveryInfo {
    pub entries: u64,
    pub torn_bytes: u64,
}

pub struct Store {
    rows: RwLock<BTreeMap<RowKey, StoreRecord>>,
    log: Mutex<Option<File>>,
    path: Option<PathBuf>,
    recovery: RecoveryInfo,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("rows", &self.rows.read().len())
            .field("path", &self.path)
            .finish()
    }
}

impl Store {
    /// Store without a durability log.
    pub fn in_memory() -> Self {
        Self {
            rows: RwLock::new(BTreeMap::new()),
            log: Mutex::new(None),
            path: None,
            recovery: RecoveryInfo::default(),
        }
    }

    /// Opens (recovering if present) or creates the log at `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        if path.exists() {
            Self::recover(path)
        } else {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let file = OpenOptions::new().create(true).append(true).open(path)?;
            Ok(Self {
                rows: RwLock::new(BTreeMap::new()),
                log: Mutex::new(Some(file)),
                path: Some(path.to_path_buf()),
                recovery: RecoveryInfo::default(),
            })
        }
    }

    /// Rebuilds the store from its log. A torn final entry is truncated
    /// away so later appends start on a clean line.
    pub fn recover(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        let (rows, good_len) = replay_log(&bytes)?;
        let torn = bytes.len() as u64 - good_len;
        let file = OpenOptions::new().write(true).open(path)?;
        if torn > 0 {
            log::info!("store log {}: discarding {torn} torn bytes", path.display());
            file.set_len(good_len)?;
        }
        drop(file);
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            recovery: RecoveryInfo {
                entries: rows.len() as u64,
                torn_bytes: torn,
            },
            rows: RwLock::new(rows),
            log: Mutex::new(Some(file)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn recovery_info(&self) -> RecoveryInfo {
        self.recovery
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.rows.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.read().is_empty()
    }

    /// Every stored record in key order.
    pub fn snapshot(&self) -> Vec<StoreRecord> {
        self.rows.read().values().cloned().collect()
    }

    /// Number of stored records per (worker, metric).
    pub fn count(&self, worker: &WorkerId, metric: &str) -> usize {
        self.scan(worker, metric, 0, u64::MAX).len()
    }
}

/// Parses a log image into rows; returns them with the length of the valid prefix.
fn replay_log(bytes: &[u8]) -> Result<(BTreeMap<RowKey, StoreRecord>, u64), StoreError> {
    let mut rows = BTreeMap::new();
    let mut offset = 0usize;
    while offset < bytes.len() {
        let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            // Torn tail: the final write never completed.
            break;
        };
        let line = &bytes[offset..offset + nl];
        let corrupt = |reason: &str| StoreError::Corrupt {
            offset: offset as u64,
            reason: reason.to_string(),
        };
        let tab = line
            .iter()
            .rposition(|&b| b == b'\t')
            .ok_or_else(|| corrupt("missing checksum separator"))?;
        let (body, crc_hex) = (&line[..tab], &line[tab + 1..]);
        let crc_text = std::str::from_utf8(crc_hex).map_err(|_| corrupt("checksum not UTF-8"))?;
        let expected =
            u32::from_str_radix(crc_text, 16).map_err(|_| corrupt("checksum not hex"))?;
        if crc_text.len() != 8 || crc32fast::hash(body) != expected {
            return Err(corrupt("checksum mismatch"));
        }
        let rec: StoreRecord =
            canonical::decode(body).map_err(|e| corrupt(&format!("bad entry: {e}")))?;
        rows.entry(rec.key.clone()).or_insert(rec);
        offset += nl + 1;
    }
    Ok((rows, offset as u64))
}

impl RecordStore for Store {
    fn put(&self, record: StoreRecord) -> Result<PutOutcome, StoreError> {
        record.check_payload()?;
        // The write lock spans log append and insert, so the log order equals
        // the apply order and scans never observe a half-applied put.
        let mut rows = self.rows.write();
        if let Some(existing) = rows.get(&record.key) {
            return if existing.payload == record.payload {
                Ok(PutOutcome::Duplicate)
            } else {
                Err(StoreError::KeyConflict {
                    key: record.key.clone(),
                })
            };
        }
        if let Some(file) = self.log.lock().as_mut() {
            file.write_all(record.to_log_line().as_bytes())?;
            file.flush()?;
        }
        rows.insert(record.key.clone(), record);
        Ok(PutOutcome::Inserted)
    }

    fn scan(&self, worker: &WorkerId, metric: &str, t0: u64, t1: u64) -> Vec<StoreRecord> {
        if t1 <= t0 {
            return Vec::new();
        }
        let lo = RowKey {
            worker: worker.clone(),
            metric: metric.to_string(),
            ts: t0,
            disambiguator: 0,
        };
        let rows = self.rows.read();
        rows.range(lo..)
            .take_while(|(k, _)| k.worker == *worker && k.metric == metric && k.ts < t1)
            .map(|(_, v)| v.clone())
            .collect()
    }
}

/// Decodes every record's payload.
pub fn decode_payloads<T: serde::de::DeserializeOwned>(
    records: &[StoreRecord],
) -> Result<Vec<T>, canonical::CodecError> {
    records
        .iter()
        .map(|r| canonical::decode_str(&r.payload))
        .collect()
}

/// Distinct stored primary records for a worker, both kinds.
pub fn primary_count(store: &dyn RecordStore, worker: &WorkerId) -> usize {
    [RecordKind::Rri, RecordKind::Posture]
        .iter()
        .map(|k| store.scan(worker, k.store_metric(), 0, u64::MAX).len())
        .sum()
}
