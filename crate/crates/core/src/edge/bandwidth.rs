use crate::canonical::{self, round_decimals};
use crate::ingest::IngestRequest;
use crate::model::{
    AccelSample, EcgSample, PostureLabel, PostureObservation, PrimaryRecord, RriInterval, WorkerId,
};
use serde::{Deserialize, Serialize};

/// Measured uplink savings. `ratio` is `None` when nothing was sent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub raw_bytes: u64,
    pub primary_bytes: u64,
    pub ratio: Option<f64>,
}

impl BandwidthReport {
    pub fn new(raw_bytes: u64, primary_bytes: u64) -> Self {
        let ratio = (primary_bytes > 0).then(|| round_decimals(raw_bytes as f64 / primary_bytes as f64));
        Self {
            raw_bytes,
            primary_bytes,
            ratio,
        }
    }
}

/// Inputs of the analytic bandwidth model.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthModel {
    pub worker: WorkerId,
    pub duration_ms: u64,
    pub ecg_fs_hz: f64,
    pub accel_fs_hz: f64,
    pub mean_rr_ms: f64,
    pub posture_window_ms: u64,
    pub upload_interval_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPrediction {
    pub ecg_records: f64,
    pub accel_records: f64,
    pub rri_records: f64,
    pub posture_records: f64,
    pub requests: f64,
    pub raw_bytes: f64,
    pub primary_bytes: f64,
    pub ratio: f64,
}

/// Predicts raw and uplink byte counts from sampling rates and the size of
/// representative mid-run records. Sample values are typical magnitudes:
/// ECG near baseline, accelerometer near upright.
pub fn predict_bandwidth(m: &BandwidthModel) -> BandwidthPrediction {
    let d = m.duration_ms as f64;
    let ecg_records = (d * m.ecg_fs_hz / 1000.0).ceil();
    let accel_records = (d * m.accel_fs_hz / 1000.0).ceil();
    let rri_records = (d / m.mean_rr_ms).floor() - 1.0;
    let posture_records = (d / m.posture_window_ms as f64).ceil();
    let requests = (d / m.upload_interval_ms as f64).ceil();

    let mid_ts = m.duration_ms / 2;
    let ecg = EcgSample {
        worker: m.worker.clone(),
        ts: mid_ts,
        seq: (ecg_records / 2.0) as u64,
        value: -0.012,
    };
    let accel = AccelSample {
        worker: m.worker.clone(),
        ts: mid_ts,
        seq: (accel_records / 2.0) as u64,
        ax: -0.0123,
        ay: 0.9987,
        az: 0.0123,
    };
    let rri = PrimaryRecord::Rri(RriInterval {
        worker: m.worker.clone(),
        ts: mid_ts,
        rri_ms: m.mean_rr_ms.round() as u64,
        artifact: false,
        seq: (rri_records / 2.0) as u64,
    });
    let posture = PrimaryRecord::Posture(PostureObservation {
        worker: m.worker.clone(),
        ts: mid_ts,
        tilt_deg: 1.23,
        activity_g: 0.012345,
        label: PostureLabel::Upright,
        seq: (posture_records / 2.0) as u64,
    });
    let envelope = IngestRequest {
        request_id: format!("{}-{:06}", m.worker, 1),
        worker: m.worker.clone(),
        records: Vec::new(),
    };
    let len = |x: usize| x as f64;
    let raw_bytes = ecg_records * len(canonical::encoded_len(&ecg))
        + accel_records * len(canonical::encoded_len(&accel));
    let records = rri_records + posture_records;
    // Each record after the first in a request costs one separating comma.
    let primary_bytes = rri_records * len(canonical::encoded_len(&rri))
        + posture_records * len(canonical::encoded_len(&posture))
        + requests * len(canonical::encoded_len(&envelope))
        + (records - requests).max(0.0);
    BandwidthPrediction {
        ecg_records,
        accel_records,
        rri_records,
        posture_records,
        requests,
        raw_bytes,
        primary_bytes,
        ratio: raw_bytes / primary_bytes,
    }
}
