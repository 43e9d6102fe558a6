//! Deterministic synthetic sensor: ECG with exact R-peak ground truth and
//! 3-axis acceleration with exact posture ground truth.

use crate::canonical::round_decimals;
use crate::model::{AccelSample, EcgSample, PostureLabel, WorkerId};
use crate::model::{TILT_BENT_DEG, TILT_DEEP_BEND_DEG, TILT_LYING_DEG};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Clamp range for generated RR intervals.
pub const RR_CLAMP_MS: (f64, f64) = (300.0, 2000.0);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenError {
    #[error("duration must be positive")]
    ZeroDuration,
    #[error("invalid RR profile: {0}")]
    InvalidProfile(String),
    #[error("deterministic RR stays outside [300, 2000] ms for the whole run")]
    RrOutOfRange,
    #[error("sampling rate {0} Hz is below the minimum of {1} Hz")]
    SamplingRateTooLow(f64, f64),
    #[error("posture scenario has no segments")]
    EmptyScenario,
    #[error("invalid posture segment {index}: {reason}")]
    InvalidSegment { index: usize, reason: String },
}

fn d_mean_rr() -> f64 {
    800.0
}
fn d_a_lf() -> f64 {
    25.0
}
fn d_f_lf() -> f64 {
    0.1
}
fn d_a_hf() -> f64 {
    20.0
}
fn d_f_hf() -> f64 {
    0.25
}
fn d_noise_rr() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrProfile {
    #[serde(default = "d_mean_rr")]
    pub mean_rr_ms: f64,
    #[serde(default = "d_a_lf")]
    pub a_lf_ms: f64,
    #[serde(default = "d_f_lf")]
    pub f_lf_hz: f64,
    #[serde(default = "d_a_hf")]
    pub a_hf_ms: f64,
    #[serde(default = "d_f_hf")]
    pub f_hf_hz: f64,
    #[serde(default)]
    pub drift_ms_per_s: f64,
    #[serde(default = "d_noise_rr")]
    pub noise_sd_ms: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RrProfile {
    fn default() -> Self {
        Self {
            mean_rr_ms: d_mean_rr(),
            a_lf_ms: d_a_lf(),
            f_lf_hz: d_f_lf(),
            a_hf_ms: d_a_hf(),
            f_hf_hz: d_f_hf(),
            drift_ms_per_s: 0.0,
            noise_sd_ms: d_noise_rr(),
            seed: 0,
        }
    }
}

impl RrProfile {
    /// Constant-rate profile with every modulation and noise term zeroed.
    pub fn constant(mean_rr_ms: f64) -> Self {
        Self {
            mean_rr_ms,
            a_lf_ms: 0.0,
            a_hf_ms: 0.0,
            noise_sd_ms: 0.0,
            ..Self::default()
        }
    }

    /// Deterministic part of the RR model at time `t_ms`.
    pub fn deterministic_rr(&self, t_ms: f64) -> f64 {
        let t_s = t_ms / 1000.0;
        self.mean_rr_ms
            + self.a_lf_ms * (2.0 * PI * self.f_lf_hz * t_s).sin()
            + self.a_hf_ms * (2.0 * PI * self.f_hf_hz * t_s).sin()
            + self.drift_ms_per_s * t_s
    }

    fn check(&self) -> Result<(), GenError> {
        let fields = [
            self.mean_rr_ms,
            self.a_lf_ms,
            self.f_lf_hz,
            self.a_hf_ms,
            self.f_hf_hz,
            self.drift_ms_per_s,
            self.noise_sd_ms,
        ];
        if fields.iter().any(|x| !x.is_finite()) {
            return Err(GenError::InvalidProfile("non-finite parameter".into()));
        }
        if self.mean_rr_ms <= 0.0 {
            return Err(GenError::InvalidProfile("mean_rr_ms must be positive".into()));
        }
        if self.noise_sd_ms < 0.0 {
            return Err(GenError::InvalidProfile("noise_sd_ms must be non-negative".into()));
        }
        Ok(())
    }
}

/// Ground-truth RR intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrSeries {
    pub intervals_ms: Vec<f64>,
    /// Number of intervals that hit the clamp range.
    pub clamped: usize,
}

impl RrSeries {
    /// Cumulative beat times, starting one interval after t = 0.
    pub fn peak_times(&self) -> Vec<f64> {
        self.intervals_ms
            .iter()
            .scan(0.0, |t, rr| {
                *t += rr;
                Some(*t)
            })
            .collect()
    }
}

/// Builds the RR series: each interval is evaluated at the time of the beat
/// that opens it, and beats are emitted while they fall within `duration_ms`.
pub fn build_rr_series(profile: &RrProfile, duration_ms: u64) -> Result<RrSeries, GenError> {
    if duration_ms == 0 {
        return Err(GenError::ZeroDuration);
    }
    profile.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let noise = Normal::new(0.0, profile.noise_sd_ms)
        .map_err(|e| GenError::InvalidProfile(e.to_string()))?;
    let (lo, hi) = RR_CLAMP_MS;
    let mut intervals = Vec::new();
    let mut clamped = 0;
    let mut in_range = 0usize;
    let mut t = 0.0;
    loop {
        let det = profile.deterministic_rr(t);
        let raw = det + noise.sample(&mut rng);
        let rr = raw.clamp(lo, hi);
        if t + rr > duration_ms as f64 {
            break;
        }
        if (lo..=hi).contains(&det) {
            in_range += 1;
        }
        if rr != raw {
            clamped += 1;
        }
        intervals.push(rr);
        t += rr;
    }
    if !intervals.is_empty() && in_range == 0 {
        return Err(GenError::RrOutOfRange);
    }
    if intervals.is_empty() && !(lo..=hi).contains(&profile.deterministic_rr(0.0)) {
        return Err(GenError::RrOutOfRange);
    }
    Ok(RrSeries {
        intervals_ms: intervals,
        clamped,
    })
}

/// Labeled span of the posture step function, half-open `[start_ms, end_ms)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpan {
    pub start_ms: u64,
    pub end_ms: u64,
    pub label: PostureLabel,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub r_peak_times_ms: Vec<f64>,
    pub posture_labels: Vec<LabelSpan>,
    pub segment_boundaries_ms: Vec<u64>,
}

impl GroundTruth {
    pub fn label_at(&self, ts: u64) -> Option<PostureLabel> {
        self.posture_labels
            .iter()
            .find(|s| s.start_ms <= ts && ts < s.end_ms)
            .map(|s| s.label)
    }
}

fn d_fs_ecg() -> f64 {
    250.0
}
fn d_ecg_noise() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgOptions {
    #[serde(default = "d_fs_ecg")]
    pub fs_hz: f64,
    #[serde(default = "d_ecg_noise")]
    pub noise_sd_mv: f64,
    #[serde(default)]
    pub seed: u64,
    /// Length of the sampled span. When absent the span ends 500 ms after the
    /// last beat so the final complex is fully sampled.
    #[serde(default)]
    pub duration_ms: Option<u64>,
}

impl Default for EcgOptions {
    fn default() -> Self {
        Self {
            fs_hz: d_fs_ecg(),
            noise_sd_mv: d_ecg_noise(),
            seed: 0,
            duration_ms: None,
        }
    }
}

pub const MIN_ECG_FS_HZ: f64 = 100.0;

/// Gaussian component of the beat template: (amplitude mV, center offset ms, sigma ms).
const BEAT_TEMPLATE: [(f64, f64, f64); 4] = [
    (1.0, 0.0, 12.0),
    (-0.15, -40.0, 20.0),
    (-0.15, 40.0, 20.0),
    (0.3, 250.0, 60.0),
];
/// Beyond this distance from a beat its template contributes nothing measurable.
const BEAT_SUPPORT_MS: f64 = 700.0;

/// Noise-free template value at offset `dt_ms` from an R-peak.
pub fn beat_template(dt_ms: f64) -> f64 {
    BEAT_TEMPLATE
        .iter()
        .map(|&(amp, center, sigma)| {
            let z = (dt_ms - center) / sigma;
            amp * (-0.5 * z * z).exp()
        })
        .sum()
}

fn sample_ts(k: u64, fs_hz: f64) -> u64 {
    (k as f64 * 1000.0 / fs_hz).round() as u64
}

fn sample_count(span_ms: f64, fs_hz: f64) -> u64 {
    (span_ms * fs_hz / 1000.0).ceil() as u64
}

/// Renders an ECG stream for the given RR intervals.
pub fn synthesize_ecg(
    worker: &WorkerId,
    rr_series: &[f64],
    opts: &EcgOptions,
) -> Result<(Vec<EcgSample>, GroundTruth), GenError> {
    if !(opts.fs_hz >= MIN_ECG_FS_HZ) {
        return Err(GenError::SamplingRateTooLow(opts.fs_hz, MIN_ECG_FS_HZ));
    }
    let peaks: Vec<f64> = rr_series
        .iter()
        .scan(0.0, |t, rr| {
            *t += rr;
            Some(*t)
        })
        .collect();
    let span_ms = match (opts.duration_ms, peaks.last()) {
        (Some(d), _) => d as f64,
        (None, Some(&last)) => last + 500.0,
        (None, None) => 0.0,
    };
    let n = sample_count(span_ms, opts.fs_hz);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise = Normal::new(0.0, opts.noise_sd_mv.max(0.0))
        .map_err(|e| GenError::InvalidProfile(e.to_string()))?;

    let mut samples = Vec::with_capacity(n as usize);
    let mut first_beat = 0usize;
    for k in 0..n {
        let ts = sample_ts(k, opts.fs_hz);
        let t = ts as f64;
        while first_beat < peaks.len() && peaks[first_beat] < t - BEAT_SUPPORT_MS {
            first_beat += 1;
        }
        let clean: f64 = peaks[first_beat..]
            .iter()
            .take_while(|&&p| p <= t + BEAT_SUPPORT_MS)
            .map(|&p| beat_template(t - p))
            .sum();
        let value = clean + noise.sample(&mut rng);
        samples.push(EcgSample {
            worker: worker.clone(),
            ts,
            seq: k,
            value: quantize(value, 1e3),
        });
    }
    let end = samples.last().map(|s| s.ts as f64);
    let r_peak_times_ms = peaks
        .into_iter()
        .filter(|&p| end.is_some_and(|e| p <= e))
        .collect();
    Ok((
        samples,
        GroundTruth {
            r_peak_times_ms,
            ..GroundTruth::default()
        },
    ))
}

fn quantize(x: f64, scale: f64) -> f64 {
    round_decimals((x * scale).round() / scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "posture", rename_all = "snake_case")]
pub enum SegmentPosture {
    Upright,
    Bent { theta_deg: f64 },
    DeepBend { theta_deg: f64 },
    Lying,
    Active,
}

impl SegmentPosture {
    pub fn pitch_deg(self) -> f64 {
        match self {
            Self::Upright | Self::Active => 0.0,
            Self::Bent { theta_deg } | Self::DeepBend { theta_deg } => theta_deg,
            Self::Lying => 90.0,
        }
    }

    pub fn label(self) -> PostureLabel {
        match self {
            Self::Upright => PostureLabel::Upright,
            Self::Bent { .. } => PostureLabel::Bent,
            Self::DeepBend { .. } => PostureLabel::DeepBend,
            Self::Lying => PostureLabel::LyingOrExtreme,
            Self::Active => PostureLabel::Active,
        }
    }

    fn check(self) -> Result<(), String> {
        let in_band = |theta: f64, lo: f64, hi: f64| theta.is_finite() && theta >= lo && theta < hi;
        match self {
            Self::Bent { theta_deg } if !in_band(theta_deg, TILT_BENT_DEG, TILT_DEEP_BEND_DEG) => {
                Err(format!("Bent angle {theta_deg} outside [20, 60)"))
            }
            Self::DeepBend { theta_deg } if !in_band(theta_deg, TILT_DEEP_BEND_DEG, TILT_LYING_DEG) => {
                Err(format!("DeepBend angle {theta_deg} outside [60, 85)"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostureSegment {
    pub duration_ms: u64,
    #[serde(flatten)]
    pub posture: SegmentPosture,
}

fn d_accel_noise() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostureScenario {
    pub segments: Vec<PostureSegment>,
    #[serde(default = "d_accel_noise")]
    pub noise_sd_g: f64,
    #[serde(default)]
    pub seed: u64,
}

impl PostureScenario {
    pub fn new(segments: Vec<PostureSegment>) -> Self {
        Self {
            segments,
            noise_sd_g: d_accel_noise(),
            seed: 0,
        }
    }

    pub fn total_ms(&self) -> u64 {
        self.segments.iter().map(|s| s.duration_ms).sum()
    }

    pub fn check(&self) -> Result<(), GenError> {
        if self.segments.is_empty() {
            return Err(GenError::EmptyScenario);
        }
        for (index, seg) in self.segments.iter().enumerate() {
            if seg.duration_ms == 0 {
                return Err(GenError::InvalidSegment {
                    index,
                    reason: "duration must be positive".into(),
                });
            }
            seg.posture
                .check()
                .map_err(|reason| GenError::InvalidSegment { index, reason })?;
        }
        if !(self.noise_sd_g >= 0.0) {
            return Err(GenError::InvalidProfile("noise_sd_g must be non-negative".into()));
        }
        Ok(())
    }
}

fn d_fs_accel() -> f64 {
    25.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelOptions {
    #[serde(default = "d_fs_accel")]
    pub fs_hz: f64,
}

impl Default for AccelOptions {
    fn default() -> Self {
        Self { fs_hz: d_fs_accel() }
    }
}

/// Amplitude and frequency of the movement superposed on Active segments.
pub const ACTIVE_AMPLITUDE_G: f64 = 0.4;
pub const ACTIVE_FREQ_HZ: f64 = 2.0;

/// Renders an acceleration stream for the scenario.
pub fn synthesize_accel(
    worker: &WorkerId,
    scenario: &PostureScenario,
    opts: &AccelOptions,
) -> Result<(Vec<AccelSample>, GroundTruth), GenError> {
    scenario.check()?;
    if !(opts.fs_hz > 0.0) {
        return Err(GenError::SamplingRateTooLow(opts.fs_hz, 0.0));
    }
    let mut spans = Vec::with_capacity(scenario.segments.len());
    let mut boundaries = vec![0];
    let mut start = 0;
    for seg in &scenario.segments {
        let end = start + seg.duration_ms;
        spans.push((start, end, seg.posture));
        boundaries.push(end);
        start = end;
    }
    let total = start;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let noise = Normal::new(0.0, scenario.noise_sd_g)
        .map_err(|e| GenError::InvalidProfile(e.to_string()))?;

    let n = sample_count(total as f64, opts.fs_hz);
    let mut samples = Vec::with_capacity(n as usize);
    let mut seg_idx = 0;
    for k in 0..n {
        let ts = sample_ts(k, opts.fs_hz);
        while seg_idx + 1 < spans.len() && ts >= spans[seg_idx].1 {
            seg_idx += 1;
        }
        let posture = spans[seg_idx].2;
        let pitch = posture.pitch_deg().to_radians();
        let (mut ax, mut ay, mut az) = (0.0, pitch.cos(), pitch.sin());
        if posture == SegmentPosture::Active {
            let wobble = ACTIVE_AMPLITUDE_G * (2.0 * PI * ACTIVE_FREQ_HZ * ts as f64 / 1000.0).sin();
            ax += wobble;
            ay += wobble;
            az += wobble;
        }
        ax += noise.sample(&mut rng);
        ay += noise.sample(&mut rng);
        az += noise.sample(&mut rng);
        samples.push(AccelSample {
            worker: worker.clone(),
            ts,
            seq: k,
            ax: quantize(ax, 1e4),
            ay: quantize(ay, 1e4),
            az: quantize(az, 1e4),
        });
    }
    let posture_labels = spans
        .iter()
        .map(|&(start_ms, end_ms, p)| LabelSpan {
            start_ms,
            end_ms,
            label: p.label(),
        })
        .collect();
    Ok((
        samples,
        GroundTruth {
            posture_labels,
            segment_boundaries_ms: boundaries,
            ..GroundTruth::default()
        },
    ))
}
