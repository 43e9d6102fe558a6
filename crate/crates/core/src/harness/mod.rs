//! End-to-end orchestration: scenario files, the virtual-time runner, run
//! reports, exports and the multi-threaded TCP smoke mode.

mod export;
mod report;
mod run;
mod smoke;

pub use export::{dump_streams, export_series, read_results, ExportFormat, CSV_HEADER};
pub use report::{percentiles, score_peaks, Latencies, PeakScore, Percentiles, RunReport, WorkerReport};
pub use run::{generate_streams, run_scenario, RunArtifacts, WorkerStreams};
pub use smoke::{run_smoke_tcp, SmokeReport};

use crate::analytics::{AnalyticsConfig, AnalyticsError, DEFAULT_TICK_INTERVAL_MS, DEFAULT_WATERMARK_MS};
use crate::bus::{fnv1a_64, BusError};
use crate::dispatcher::DispatchError;
use crate::edge::{EdgeConfig, EdgeError};
use crate::model::{Metric, WindowConfig, WorkerId};
use crate::signal_gen::{
    AccelOptions, EcgOptions, GenError, PostureScenario, PostureSegment, RrProfile, SegmentPosture,
};
use crate::store::StoreError;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Edge(#[from] EdgeError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Whether the failure comes from the scenario rather than the run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Self::Config(_) | Self::Gen(_) | Self::Analytics(_) | Self::Edge(EdgeError::Config(_))
        )
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Uploads fail without reaching the server.
    UplinkOutage,
    /// The next dispatcher and analytics batches are processed but not
    /// committed, so the bus delivers them again.
    BusRedeliver,
    /// Uploads reach the server but the response is lost; the edge retries
    /// with the same request id.
    AckLoss,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub start_ms: u64,
    pub end_ms: u64,
}

impl FaultSpec {
    pub fn active_at(&self, t: u64) -> bool {
        self.start_ms <= t && t < self.end_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSpec {
    pub id: WorkerId,
    #[serde(default)]
    pub rr_profile: RrProfile,
    /// Upright for the whole run when absent.
    #[serde(default)]
    pub posture: Option<PostureScenario>,
}

impl WorkerSpec {
    pub fn new(id: &str) -> Self {
        Self {
            id: WorkerId::new(id).expect("valid worker id"),
            rr_profile: RrProfile::default(),
            posture: None,
        }
    }

    /// Posture segments padded with Upright (or cut) to exactly `duration_ms`.
    pub fn posture_for(&self, duration_ms: u64) -> PostureScenario {
        let mut scenario = self
            .posture
            .clone()
            .unwrap_or_else(|| PostureScenario::new(Vec::new()));
        let mut kept = Vec::new();
        let mut t = 0;
        for seg in scenario.segments.drain(..) {
            if t >= duration_ms {
                break;
            }
            let len = seg.duration_ms.min(duration_ms - t);
            t += len;
            kept.push(PostureSegment {
                duration_ms: len,
                ..seg
            });
        }
        if t < duration_ms {
            kept.push(PostureSegment {
                duration_ms: duration_ms - t,
                posture: SegmentPosture::Upright,
            });
        }
        scenario.segments = kept;
        scenario
    }
}

fn d_duration() -> u64 {
    300_000
}
fn d_windows() -> Vec<WindowConfig> {
    Metric::ALL.iter().map(|&m| WindowConfig::new(m)).collect()
}
fn d_watermark() -> u64 {
    DEFAULT_WATERMARK_MS
}
fn d_tick() -> u64 {
    DEFAULT_TICK_INTERVAL_MS
}
fn d_dispatch() -> u64 {
    1_000
}
fn d_partitions() -> u32 {
    4
}

/// A complete run description, loaded from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub workers: Vec<WorkerSpec>,
    #[serde(default = "d_duration")]
    pub duration_ms: u64,
    #[serde(default)]
    pub ecg: EcgOptions,
    #[serde(default)]
    pub accel: AccelOptions,
    #[serde(default)]
    pub edge: EdgeConfig,
    #[serde(default = "d_windows")]
    pub windows: Vec<WindowConfig>,
    #[serde(default = "d_watermark")]
    pub watermark_ms: u64,
    #[serde(default = "d_tick")]
    pub tick_interval_ms: u64,
    #[serde(default = "d_dispatch")]
    pub dispatch_interval_ms: u64,
    #[serde(default = "d_partitions")]
    pub bus_partitions: u32,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; the CLI flag takes precedence.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    /// One default-profile worker for `duration_ms`.
    pub fn single_worker(id: &str, duration_ms: u64) -> Self {
        Self {
            workers: vec![WorkerSpec::new(id)],
            duration_ms,
            ecg: EcgOptions::default(),
            accel: AccelOptions::default(),
            edge: EdgeConfig::default(),
            windows: d_windows(),
            watermark_ms: d_watermark(),
            tick_interval_ms: d_tick(),
            dispatch_interval_ms: d_dispatch(),
            bus_partitions: d_partitions(),
            faults: Vec::new(),
            seed: 0,
            out_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn analytics(&self) -> AnalyticsConfig {
        AnalyticsConfig {
            windows: self.windows.clone(),
            watermark_ms: self.watermark_ms,
        }
    }

    pub fn check(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.workers.is_empty() {
            return bad("scenario has no workers".into());
        }
        let mut ids = HashSet::new();
        for w in &self.workers {
            if !ids.insert(&w.id) {
                return bad(format!("duplicate worker id {}", w.id));
            }
            if let Some(p) = &w.posture {
                p.check()?;
            }
        }
        self.edge.check()?;
        self.analytics().check()?;
        if self.tick_interval_ms == 0 || self.dispatch_interval_ms == 0 {
            return bad("tick and dispatch intervals must be positive".into());
        }
        let min_window = self.windows.iter().map(|w| w.window_ms).min().unwrap_or(0);
        if self.tick_interval_ms > min_window {
            return bad(format!(
                "tick_interval_ms {} exceeds the smallest window {min_window}",
                self.tick_interval_ms
            ));
        }
        if self.bus_partitions == 0 {
            return bad("bus_partitions must be positive".into());
        }
        for f in &self.faults {
            if f.start_ms >= f.end_ms || f.end_ms > self.duration_ms {
                return bad(format!(
                    "fault {:?} [{}, {}) must be non-empty and inside the run",
                    f.kind, f.start_ms, f.end_ms
                ));
            }
        }
        for (i, a) in self.faults.iter().enumerate() {
            for b in &self.faults[i + 1..] {
                if a.kind == b.kind && a.start_ms < b.end_ms && b.start_ms < a.end_ms {
                    return bad(format!("overlapping {:?} faults", a.kind));
                }
            }
        }
        Ok(())
    }

    /// Seed of one random stream of one worker, derived from the scenario seed.
    pub fn derived_seed(&self, worker: &WorkerId, stream: &str) -> u64 {
        fnv1a_64(format!("{}/{}/{}", self.seed, worker, stream).as_bytes())
    }
}
