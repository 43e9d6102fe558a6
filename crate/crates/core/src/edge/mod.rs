//! The smartphone side: single-pass reduction of raw ECG and acceleration
//! into primary records, local dangerous-posture alerting, and batched
//! uploads through the ingestion endpoint.
//!
//! An [`EdgeAgent`] is a single-threaded state machine for one worker.
//! Sample handling never touches the uplink, so alerting is unaffected by
//! connectivity; uploads happen only when the caller invokes
//! [`EdgeAgent::upload`].

pub mod bandwidth;
pub mod peak;
pub mod posture;
pub mod rri;
pub mod uplink;

pub use bandwidth::{predict_bandwidth, BandwidthModel, BandwidthPrediction, BandwidthReport};
pub use peak::PeakDetector;
pub use posture::{classify_posture, evaluate_danger, DangerMonitor, PostureWindower};
pub use rri::{derive_rri, RriTracker};
pub use uplink::{package_upload, EndpointUplink, HttpUplink, TransportError, Uplink, UplinkBuffer};

use crate::canonical;
use crate::ingest::{AlertRequest, IngestRequest, IngestResponse, ALERTS_PATH, INGEST_PATH};
use crate::model::{AccelSample, Alert, EcgSample, PrimaryRecord, WorkerId};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EdgeError {
    #[error("out-of-order sample: seq {got} after {last}")]
    StreamOrder { last: u64, got: u64 },
    #[error("peak at {new} ms does not follow previous peak at {previous} ms")]
    NonIncreasingPeak { previous: u64, new: u64 },
    #[error("posture window has {samples} samples, need at least {min}")]
    InsufficientWindow { samples: usize, min: usize },
    #[error("posture window has no gravity component")]
    DegenerateWindow,
    #[error("invalid edge config: {0}")]
    Config(String),
}

fn d_batch_max() -> usize {
    200
}
fn d_upload_interval() -> u64 {
    5000
}
fn d_posture_window() -> u64 {
    1000
}
fn d_danger_tilt() -> f64 {
    60.0
}
fn d_danger_dwell() -> u64 {
    2000
}
fn d_activity() -> f64 {
    0.3
}
fn d_capacity() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeConfig {
    #[serde(default = "d_batch_max")]
    pub upload_batch_max: usize,
    #[serde(default = "d_upload_interval")]
    pub upload_interval_ms: u64,
    #[serde(default = "d_posture_window")]
    pub posture_window_ms: u64,
    /// Minimum tilt for a DeepBend/LyingOrExtreme observation to count as dangerous.
    #[serde(default = "d_danger_tilt")]
    pub danger_tilt_deg: f64,
    #[serde(default = "d_danger_dwell")]
    pub danger_dwell_ms: u64,
    #[serde(default = "d_activity")]
    pub activity_threshold_g: f64,
    #[serde(default = "d_capacity")]
    pub buffer_capacity: usize,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        Self {
            upload_batch_max: d_batch_max(),
            upload_interval_ms: d_upload_interval(),
            posture_window_ms: d_posture_window(),
            danger_tilt_deg: d_danger_tilt(),
            danger_dwell_ms: d_danger_dwell(),
            activity_threshold_g: d_activity(),
            buffer_capacity: d_capacity(),
        }
    }
}

impl EdgeConfig {
    pub fn check(&self) -> Result<(), EdgeError> {
        let positive = self.upload_batch_max > 0
            && self.upload_interval_ms > 0
            && self.posture_window_ms > 0
            && self.danger_tilt_deg > 0.0
            && self.danger_dwell_ms > 0
            && self.activity_threshold_g > 0.0
            && self.buffer_capacity > 0;
        if !positive {
            return Err(EdgeError::Config("all edge settings must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeStats {
    pub ecg_samples: u64,
    pub accel_samples: u64,
    pub raw_bytes: u64,
    pub peaks: u64,
    pub rri_emitted: u64,
    pub posture_emitted: u64,
    /// Bytes of ingest request bodies that reached the server.
    pub primary_bytes: u64,
    pub alert_bytes: u64,
    pub requests_delivered: u64,
    /// Records carried by requests that reached the server, retries included.
    pub records_delivered: u64,
    pub upload_failures: u64,
    pub requests_rejected: u64,
    pub alerts_raised: u64,
    pub alerts_forwarded: u64,
}

#[derive(Debug, Clone)]
struct InFlight<T> {
    body: Vec<u8>,
    count: u64,
    _request: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SendOutcome {
    Delivered,
    Retry,
    Dropped,
}

pub struct EdgeAgent {
    worker: WorkerId,
    config: EdgeConfig,
    detector: PeakDetector,
    rri: RriTracker,
    windower: PostureWindower,
    danger: DangerMonitor,
    buffer: UplinkBuffer,
    in_flight: Option<InFlight<IngestRequest>>,
    alert_in_flight: Option<InFlight<AlertRequest>>,
    pending_alerts: VecDeque<Alert>,
    alert_log: Vec<Alert>,
    emitted: Vec<PrimaryRecord>,
    peak_times: Vec<u64>,
    next_request: u64,
    next_alert_request: u64,
    backoff: bool,
    stats: EdgeStats,
}

impl EdgeAgent {
    pub fn new(worker: WorkerId, config: EdgeConfig, ecg_fs_hz: f64) -> Result<Self, EdgeError> {
        config.check()?;
        Ok(Self {
            detector: PeakDetector::new(ecg_fs_hz),
            rri: RriTracker::new(worker.clone()),
            windower: PostureWindower::new(worker.clone(), &config),
            danger: DangerMonitor::new(&config),
            buffer: UplinkBuffer::new(config.buffer_capacity),
            in_flight: None,
            alert_in_flight: None,
            pending_alerts: VecDeque::new(),
            alert_log: Vec::new(),
            emitted: Vec::new(),
            peak_times: Vec::new(),
            next_request: 1,
            next_alert_request: 1,
            backoff: false,
            stats: EdgeStats::default(),
            worker,
            config,
        })
    }

    pub fn worker(&self) -> &WorkerId {
        &self.worker
    }

    pub fn config(&self) -> &EdgeConfig {
        &self.config
    }

    pub fn stats(&self) -> &EdgeStats {
        &self.stats
    }

    /// Every alert raised locally, in order.
    pub fn alert_log(&self) -> &[Alert] {
        &self.alert_log
    }

    /// Every primary record produced, in production order.
    pub fn emitted(&self) -> &[PrimaryRecord] {
        &self.emitted
    }

    /// Every detected R-peak timestamp.
    pub fn peak_times(&self) -> &[u64] {
        &self.peak_times
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len() + self.in_flight.as_ref().map_or(0, |f| f.count as usize)
    }

    pub fn dropped(&self) -> u64 {
        self.buffer.dropped()
    }

    /// True when a full batch is waiting and the last attempt did not fail.
    pub fn upload_due(&self) -> bool {
        !self.backoff && self.buffer.len() >= self.config.upload_batch_max
    }

    fn emit(&mut self, record: PrimaryRecord) {
        match record {
            PrimaryRecord::Rri(_) => self.stats.rri_emitted += 1,
            PrimaryRecord::Posture(_) => self.stats.posture_emitted += 1,
        }
        self.emitted.push(record.clone());
        self.buffer.push(record);
    }

    fn on_peak(&mut self, ts: u64) -> Result<(), EdgeError> {
        self.stats.peaks += 1;
        self.peak_times.push(ts);
        if let Some(rri) = self.rri.on_peak(ts)? {
            self.emit(PrimaryRecord::Rri(rri));
        }
        Ok(())
    }

    pub fn on_ecg(&mut self, sample: &EcgSample) -> Result<(), EdgeError> {
        self.stats.ecg_samples += 1;
        self.stats.raw_bytes += canonical::encoded_len(sample) as u64;
        if let Some(ts) = self.detector.push(sample)? {
            self.on_peak(ts)?;
        }
        Ok(())
    }

    /// Returns an alert when this sample completes a window that crosses the dwell.
    pub fn on_accel(&mut self, sample: &AccelSample) -> Option<Alert> {
        self.stats.accel_samples += 1;
        self.stats.raw_bytes += canonical::encoded_len(sample) as u64;
        let obs = self.windower.push(sample)?;
        self.on_observation(obs)
    }

    fn on_observation(&mut self, obs: crate::model::PostureObservation) -> Option<Alert> {
        let alert = self.danger.observe(&obs);
        self.emit(PrimaryRecord::Posture(obs));
        if let Some(a) = &alert {
            log::info!(
                "{}: dangerous posture since {} ms (raised at {} ms)",
                self.worker,
                a.onset_ts,
                a.raised_ts
            );
            self.stats.alerts_raised += 1;
            self.alert_log.push(a.clone());
            self.pending_alerts.push_back(a.clone());
        }
        alert
    }

    /// Flushes detector and posture state at end of stream.
    pub fn finish(&mut self) -> Result<Option<Alert>, EdgeError> {
        for ts in self.detector.finish() {
            self.on_peak(ts)?;
        }
        Ok(self.windower.finish().and_then(|obs| self.on_observation(obs)))
    }

    fn send<T>(
        uplink: &mut dyn Uplink,
        path: &str,
        flight: &InFlight<T>,
        stats: &mut EdgeStats,
        alert: bool,
    ) -> SendOutcome {
        let result = uplink.post(path, &flight.body);
        let reached = match &result {
            Ok(_) => true,
            Err(e) => e.reached_server(),
        };
        if reached {
            if alert {
                stats.alert_bytes += flight.body.len() as u64;
            } else {
                stats.primary_bytes += flight.body.len() as u64;
                stats.requests_delivered += 1;
                stats.records_delivered += flight.count;
            }
        }
        match result {
            Ok(body) => {
                if let Ok(resp) = canonical::decode::<IngestResponse>(&body) {
                    log::debug!("upload accepted {} (duplicate: {})", resp.accepted, resp.duplicate);
                }
                SendOutcome::Delivered
            }
            Err(TransportError::Status { status, message }) if (400..500).contains(&status) => {
                log::error!("upload rejected with {status}: {message}");
                stats.requests_rejected += 1;
                SendOutcome::Dropped
            }
            Err(e) => {
                log::debug!("upload failed: {e}");
                stats.upload_failures += 1;
                SendOutcome::Retry
            }
        }
    }

    /// Upload tick: sends batches until the buffer is empty or a send fails,
    /// then forwards pending alerts. A failed request keeps its id and is
    /// retried first on the next call.
    pub fn upload(&mut self, uplink: &mut dyn Uplink) {
        self.backoff = false;
        loop {
            if self.in_flight.is_none() {
                let id = format!("{}-{:06}", self.worker, self.next_request);
                let Some(req) =
                    package_upload(&mut self.buffer, &self.worker, id, self.config.upload_batch_max)
                else {
                    break;
                };
                self.next_request += 1;
                self.in_flight = Some(InFlight {
                    body: canonical::encode(&req),
                    count: req.records.len() as u64,
                    _request: req,
                });
            }
            let flight = self.in_flight.as_ref().expect("set above");
            match Self::send(uplink, INGEST_PATH, flight, &mut self.stats, false) {
                SendOutcome::Delivered | SendOutcome::Dropped => self.in_flight = None,
                SendOutcome::Retry => {
                    self.backoff = true;
                    return;
                }
            }
        }
        self.forward_alerts(uplink);
    }

    fn forward_alerts(&mut self, uplink: &mut dyn Uplink) {
        loop {
            if self.alert_in_flight.is_none() {
                if self.pending_alerts.is_empty() {
                    return;
                }
                let alerts: Vec<Alert> = self.pending_alerts.drain(..).collect();
                let req = AlertRequest {
                    request_id: format!("{}-a{:06}", self.worker, self.next_alert_request),
                    worker: self.worker.clone(),
                    alerts,
                };
                self.next_alert_request += 1;
                self.alert_in_flight = Some(InFlight {
                    body: canonical::encode(&req),
                    count: req.alerts.len() as u64,
                    _request: req,
                });
            }
            let flight = self.alert_in_flight.as_ref().expect("set above");
            match Self::send(uplink, ALERTS_PATH, flight, &mut self.stats, true) {
                SendOutcome::Delivered => {
                    self.stats.alerts_forwarded += flight.count;
                    self.alert_in_flight = None;
                }
                SendOutcome::Dropped => self.alert_in_flight = None,
                SendOutcome::Retry => {
                    self.backoff = true;
                    return;
                }
            }
        }
    }

    pub fn bandwidth_report(&self) -> BandwidthReport {
        BandwidthReport::new(self.stats.raw_bytes, self.stats.primary_bytes)
    }
}
