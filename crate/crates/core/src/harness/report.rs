use crate::canonical::round_decimals;
use crate::dispatcher::CleanseReport;
use crate::edge::BandwidthReport;
use crate::ingest::IngestStats;
use crate::model::WorkerId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::FaultSpec;

/// Nearest-rank percentiles; all `None` for an empty sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Percentiles {
    pub count: u64,
    pub p50: Option<u64>,
    pub p95: Option<u64>,
    pub max: Option<u64>,
}

pub fn percentiles(values: &[u64]) -> Percentiles {
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = |q: f64| -> Option<u64> {
        if v.is_empty() {
            return None;
        }
        let idx = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
        Some(v[idx])
    };
    Percentiles {
        count: v.len() as u64,
        p50: rank(0.50),
        p95: rank(0.95),
        max: v.last().copied(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latencies {
    /// Alert raised_ts minus the start of the dangerous episode.
    pub alert: Percentiles,
    /// Bus publish to store write of each primary record.
    pub ingest_to_store: Percentiles,
    /// Window end to store write of each analysis result.
    pub window_end_to_result: Percentiles,
}

/// Detector accuracy against generator ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PeakScore {
    pub truth_beats: u64,
    pub detected: u64,
    pub matched: u64,
    pub sensitivity: Option<f64>,
    pub ppv: Option<f64>,
    pub max_rri_error_ms: Option<f64>,
}

/// Matches detections to true beats within `tolerance_ms`, ignoring the
/// first `warmup_beats` true beats and detections before them.
pub fn score_peaks(detected: &[u64], truth: &[f64], tolerance_ms: f64, warmup_beats: usize) -> PeakScore {
    let truth = truth.get(warmup_beats..).unwrap_or(&[]);
    let Some(&first) = truth.first() else {
        return PeakScore::default();
    };
    let dets: Vec<f64> = detected
        .iter()
        .map(|&d| d as f64)
        .filter(|&d| d >= first - tolerance_ms)
        .collect();
    // Greedy two-pointer matching; beats are far further apart than the tolerance.
    let mut pairs: Vec<(usize, f64)> = Vec::new();
    let mut j = 0;
    for (i, &t) in truth.iter().enumerate() {
        while j < dets.len() && dets[j] < t - tolerance_ms {
            j += 1;
        }
        if j < dets.len() && (dets[j] - t).abs() <= tolerance_ms {
            pairs.push((i, dets[j]));
            j += 1;
        }
    }
    let max_err = pairs
        .windows(2)
        .filter(|p| p[1].0 == p[0].0 + 1)
        .map(|p| ((p[1].1 - p[0].1) - (truth[p[1].0] - truth[p[0].0])).abs())
        .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))));
    let matched = pairs.len() as f64;
    let ratio = |den: usize| (den > 0).then(|| round_decimals(matched / den as f64));
    PeakScore {
        truth_beats: truth.len() as u64,
        detected: dets.len() as u64,
        matched: pairs.len() as u64,
        sensitivity: ratio(truth.len()),
        ppv: ratio(dets.len()),
        max_rri_error_ms: max_err.map(round_decimals),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub ecg_samples: u64,
    pub accel_samples: u64,
    pub peaks_detected: u64,
    pub rr_clamped: u64,
    pub primaries_emitted: u64,
    /// Records that reached the ingest endpoint, counting retransmissions.
    pub primaries_sent: u64,
    /// Retransmitted records absorbed by request-id dedupe at ingest.
    pub dedupe_hits: u64,
    /// Redelivered records the store reported as duplicates.
    pub store_duplicates: u64,
    pub records_stored: u64,
    pub buffer_dropped: u64,
    pub fatigue_results: u64,
    pub relaxation_results: u64,
    pub insufficient_results: u64,
    pub alerts_raised: u64,
    pub alerts_stored: u64,
    pub late_drops: u64,
    pub bandwidth: BandwidthReport,
    pub peak_score: PeakScore,
}

impl WorkerReport {
    /// Stored primaries equal sent minus deduped retransmissions.
    pub fn conserved(&self) -> bool {
        self.records_stored + self.dedupe_hits == self.primaries_sent
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSummary {
    pub raw_bytes: u64,
    pub primary_bytes: u64,
    pub ratio: Option<f64>,
    pub predicted_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub duration_ms: u64,
    pub faults: Vec<FaultSpec>,
    pub workers: BTreeMap<WorkerId, WorkerReport>,
    pub bandwidth: BandwidthSummary,
    pub latency: Latencies,
    pub ingest: IngestStats,
    pub cleanse: CleanseReport,
    pub dispatcher_skipped_commits: u64,
    pub store_entries: u64,
}
