//! Shared domain types and their invariants.
//!
//! Timestamps are integer milliseconds since the scenario epoch. Every type
//! here is an immutable value and serializes through [`crate::canonical`].

use serde::{Deserialize, Serialize};
use std::fmt;

/// Lower bound of the physiologically plausible RRI range, inclusive.
pub const RRI_MIN_MS: u64 = 300;
/// Upper bound of the physiologically plausible RRI range, inclusive.
pub const RRI_MAX_MS: u64 = 2000;
/// Maximum relative change between successive RRIs before flagging.
pub const RRI_MAX_RELATIVE_JUMP: f64 = 0.2;

/// Tilt band boundaries in degrees: Upright < 20 ≤ Bent < 60 ≤ DeepBend < 85 ≤ LyingOrExtreme.
pub const TILT_BENT_DEG: f64 = 20.0;
pub const TILT_DEEP_BEND_DEG: f64 = 60.0;
pub const TILT_LYING_DEG: f64 = 85.0;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("worker id must be 1-64 ASCII characters without whitespace, got {0:?}")]
    InvalidWorkerId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct WorkerId(String);

impl WorkerId {
    pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
        let id = id.into();
        let ok = !id.is_empty()
            && id.len() <= 64
            && id.bytes().all(|b| b.is_ascii() && !b.is_ascii_whitespace() && !b.is_ascii_control());
        if ok {
            Ok(Self(id))
        } else {
            Err(ModelError::InvalidWorkerId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for WorkerId {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<WorkerId> for String {
    fn from(value: WorkerId) -> Self {
        value.0
    }
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgSample {
    pub worker: WorkerId,
    pub ts: u64,
    pub seq: u64,
    /// Amplitude in millivolts.
    pub value: f64,
}

/// Acceleration in g. Device frame: x lateral, y toward the head, z out of the chest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelSample {
    pub worker: WorkerId,
    pub ts: u64,
    pub seq: u64,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
}

impl AccelSample {
    pub fn magnitude(&self) -> f64 {
        (self.ax * self.ax + self.ay * self.ay + self.az * self.az).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RriInterval {
    pub worker: WorkerId,
    /// Time of the later R-peak.
    pub ts: u64,
    pub rri_ms: u64,
    pub artifact: bool,
    pub seq: u64,
}

/// Reference artifact rule: outside [300, 2000] ms, or a successive change
/// larger than 20 % of the previous interval.
pub fn is_rri_artifact(rri_ms: u64, previous_rri_ms: Option<u64>) -> bool {
    if !(RRI_MIN_MS..=RRI_MAX_MS).contains(&rri_ms) {
        return true;
    }
    match previous_rri_ms {
        Some(prev) if prev > 0 => {
            (rri_ms as f64 - prev as f64).abs() > RRI_MAX_RELATIVE_JUMP * prev as f64
        }
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PostureLabel {
    Upright,
    Bent,
    DeepBend,
    LyingOrExtreme,
    Active,
}

impl PostureLabel {
    /// Label for a static posture from its tilt alone.
    pub fn from_tilt(tilt_deg: f64) -> Self {
        if tilt_deg < TILT_BENT_DEG {
            Self::Upright
        } else if tilt_deg < TILT_DEEP_BEND_DEG {
            Self::Bent
        } else if tilt_deg < TILT_LYING_DEG {
            Self::DeepBend
        } else {
            Self::LyingOrExtreme
        }
    }

    /// Full classification rule: activity overrides tilt.
    pub fn classify(tilt_deg: f64, activity_g: f64, activity_threshold_g: f64) -> Self {
        if activity_g > activity_threshold_g {
            Self::Active
        } else {
            Self::from_tilt(tilt_deg)
        }
    }

    pub fn is_dangerous(self) -> bool {
        matches!(self, Self::DeepBend | Self::LyingOrExtreme)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostureObservation {
    pub worker: WorkerId,
    /// Start of the classification window.
    pub ts: u64,
    pub tilt_deg: f64,
    pub activity_g: f64,
    pub label: PostureLabel,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlertKind {
    DangerousPosture,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Alert {
    pub worker: WorkerId,
    pub onset_ts: u64,
    pub raised_ts: u64,
    pub kind: AlertKind,
    pub dwell_ms: u64,
}

/// Edge output sent uplink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrimaryRecord {
    Rri(RriInterval),
    Posture(PostureObservation),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Rri,
    Posture,
}

impl RecordKind {
    pub fn store_metric(self) -> &'static str {
        match self {
            Self::Rri => "primary.rri",
            Self::Posture => "primary.posture",
        }
    }
}

impl PrimaryRecord {
    pub fn worker(&self) -> &WorkerId {
        match self {
            Self::Rri(r) => &r.worker,
            Self::Posture(p) => &p.worker,
        }
    }

    pub fn ts(&self) -> u64 {
        match self {
            Self::Rri(r) => r.ts,
            Self::Posture(p) => p.ts,
        }
    }

    pub fn seq(&self) -> u64 {
        match self {
            Self::Rri(r) => r.seq,
            Self::Posture(p) => p.seq,
        }
    }

    pub fn kind(&self) -> RecordKind {
        match self {
            Self::Rri(_) => RecordKind::Rri,
            Self::Posture(_) => RecordKind::Posture,
        }
    }

    /// Natural deduplication key.
    pub fn natural_key(&self) -> (WorkerId, RecordKind, u64) {
        (self.worker().clone(), self.kind(), self.seq())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Fatigue,
    Relaxation,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Fatigue, Metric::Relaxation];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fatigue => "fatigue",
            Self::Relaxation => "relaxation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fatigue" => Some(Self::Fatigue),
            "relaxation" => Some(Self::Relaxation),
            _ => None,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Windowed analysis output. `value` is the fatigue score or the normalized
/// relaxation score; `cvi` carries the raw cardiac vagal index for relaxation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub worker: WorkerId,
    pub metric: Metric,
    pub window_start: u64,
    pub window_end: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cvi: Option<f64>,
    pub input_count: u64,
    pub insufficient: bool,
}

fn default_window_ms() -> u64 {
    60_000
}

fn default_min_rri() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub metric: Metric,
    #[serde(default = "default_window_ms")]
    pub window_ms: u64,
    #[serde(default = "default_min_rri")]
    pub min_rri_per_window: usize,
}

impl WindowConfig {
    pub fn new(metric: Metric) -> Self {
        Self {
            metric,
            window_ms: default_window_ms(),
            min_rri_per_window: default_min_rri(),
        }
    }

    pub fn with_window_ms(mut self, window_ms: u64) -> Self {
        self.window_ms = window_ms;
        self
    }
}

/// A single violated invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl Violation {
    fn new(field: &'static str, message: impl Into<String>) -> Self {
        Self {
            field,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

pub trait Validate {
    /// Every violated invariant, empty when the record is valid.
    fn violations(&self) -> Vec<Violation>;

    fn validate(&self) -> Result<(), Vec<Violation>> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }
}

impl Validate for EcgSample {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !self.value.is_finite() {
            v.push(Violation::new("value", "non-finite value"));
        }
        v
    }
}

impl Validate for AccelSample {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        for (field, x) in [("ax", self.ax), ("ay", self.ay), ("az", self.az)] {
            if !x.is_finite() {
                v.push(Violation::new(field, "non-finite component"));
            }
        }
        v
    }
}

impl Validate for RriInterval {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.rri_ms == 0 {
            v.push(Violation::new("rri_ms", "rri_ms must be positive"));
        }
        if !(RRI_MIN_MS..=RRI_MAX_MS).contains(&self.rri_ms) && !self.artifact {
            v.push(Violation::new(
                "artifact",
                "artifact flag must be set for out-of-range RRI",
            ));
        }
        v
    }
}

impl Validate for PostureObservation {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !self.tilt_deg.is_finite() || !(0.0..=180.0).contains(&self.tilt_deg) {
            v.push(Violation::new("tilt_deg", "tilt must be a finite angle in [0, 180]"));
        }
        if !self.activity_g.is_finite() || self.activity_g < 0.0 {
            v.push(Violation::new("activity_g", "activity must be finite and non-negative"));
        }
        // The activity threshold is configurable, so only static labels can
        // be checked against their tilt band here.
        if self.label != PostureLabel::Active
            && self.tilt_deg.is_finite()
            && PostureLabel::from_tilt(self.tilt_deg) != self.label
        {
            v.push(Violation::new("label", "label does not match the tilt band"));
        }
        v
    }
}

impl Validate for Alert {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.raised_ts < self.onset_ts {
            v.push(Violation::new("raised_ts", "alert raised before its onset"));
        } else if self.dwell_ms != self.raised_ts - self.onset_ts {
            v.push(Violation::new("dwell_ms", "dwell must equal raised_ts - onset_ts"));
        }
        v
    }
}

impl Validate for PrimaryRecord {
    fn violations(&self) -> Vec<Violation> {
        match self {
            Self::Rri(r) => r.violations(),
            Self::Posture(p) => p.violations(),
        }
    }
}

impl Validate for AnalysisResult {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.window_end <= self.window_start {
            v.push(Violation::new("window_end", "window must have positive length"));
        }
        if self.insufficient && (self.value.is_some() || self.cvi.is_some()) {
            v.push(Violation::new("value", "insufficient result must not carry a value"));
        }
        if !self.insufficient && self.value.is_none() {
            v.push(Violation::new("value", "sufficient result must carry a value"));
        }
        if let Some(x) = self.value {
            if !x.is_finite() || !(0.0..=100.0).contains(&x) {
                v.push(Violation::new("value", "score must lie in [0, 100]"));
            }
        }
        match (self.metric, self.cvi) {
            (Metric::Fatigue, Some(_)) => {
                v.push(Violation::new("cvi", "fatigue result must not carry a CVI"))
            }
            (Metric::Relaxation, None) if !self.insufficient => {
                v.push(Violation::new("cvi", "relaxation result must carry the raw CVI"))
            }
            (_, Some(c)) if !c.is_finite() => v.push(Violation::new("cvi", "non-finite CVI")),
            _ => {}
        }
        v
    }
}

impl Validate for WindowConfig {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.window_ms == 0 {
            v.push(Violation::new("window_ms", "window size must be positive"));
        }
        if self.min_rri_per_window < 2 {
            v.push(Violation::new(
                "min_rri_per_window",
                "at least two intervals are needed per window",
            ));
        }
        v
    }
}
