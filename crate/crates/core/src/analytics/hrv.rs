//! HRV statistics over an RRI window: Poincaré CVI and the fatigue index.

use crate::canonical::round_decimals;
use serde::{Deserialize, Serialize};

/// Floor applied inside the log so zero-variance windows stay defined.
pub const CVI_EPSILON: f64 = 1e-4;
pub const CVI_SCORE_LOW: f64 = 2.0;
pub const CVI_SCORE_HIGH: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cvi {
    pub sd1: f64,
    pub sd2: f64,
    pub cvi: f64,
    pub relaxation_score: f64,
}

/// Population SD, computed on values shifted by the first one so that a
/// constant sequence gives exactly zero.
fn population_sd(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let Some(x0) = xs.clone().next() else {
        return 0.0;
    };
    let n = xs.clone().count() as f64;
    let mean = xs.clone().map(|x| x - x0).sum::<f64>() / n;
    (xs.map(|x| (x - x0 - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Poincaré-plot cardiac vagal index. `None` for fewer than two values.
pub fn compute_cvi(rri_ms: &[f64]) -> Option<Cvi> {
    if rri_ms.len() < 2 {
        return None;
    }
    let pairs = rri_ms.windows(2);
    let d = pairs.clone().map(|p| (p[1] - p[0]) / std::f64::consts::SQRT_2);
    let s = pairs.map(|p| (p[1] + p[0]) / std::f64::consts::SQRT_2);
    let sd1 = population_sd(d);
    let sd2 = population_sd(s);
    let (l, t) = (4.0 * sd2, 4.0 * sd1);
    let cvi = (l * t).max(CVI_EPSILON).log10();
    let relaxation_score =
        (100.0 * (cvi - CVI_SCORE_LOW) / (CVI_SCORE_HIGH - CVI_SCORE_LOW)).clamp(0.0, 100.0);
    Some(Cvi {
        sd1,
        sd2,
        cvi,
        relaxation_score,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub mean_rri: f64,
    pub rmssd: f64,
}

pub fn window_stats(rri_ms: &[f64]) -> Option<WindowStats> {
    if rri_ms.len() < 2 {
        return None;
    }
    let mean_rri = rri_ms.iter().sum::<f64>() / rri_ms.len() as f64;
    let sq: f64 = rri_ms.windows(2).map(|p| (p[1] - p[0]).powi(2)).sum();
    let rmssd = (sq / (rri_ms.len() - 1) as f64).sqrt();
    Some(WindowStats { mean_rri, rmssd })
}

/// Reference window the fatigue index compares against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub baseline_rri_ms: f64,
    pub baseline_rmssd_ms: f64,
}

impl From<WindowStats> for BaselineState {
    fn from(s: WindowStats) -> Self {
        Self {
            baseline_rri_ms: s.mean_rri,
            baseline_rmssd_ms: s.rmssd,
        }
    }
}

/// Relative drop of `value` below `base`; zero when there is no drop or the
/// base is not positive.
fn relative_drop(base: f64, value: f64) -> f64 {
    if base > 0.0 {
        ((base - value) / base).max(0.0)
    } else {
        0.0
    }
}

/// Fatigue index in [0, 100], rounded to the canonical precision.
pub fn fatigue_score(baseline: &BaselineState, mean_rri: f64, rmssd: f64) -> f64 {
    let raw = 100.0
        * (0.5 * relative_drop(baseline.baseline_rri_ms, mean_rri)
            + 0.5 * relative_drop(baseline.baseline_rmssd_ms, rmssd));
    round_decimals(raw.clamp(0.0, 100.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fatigue {
    pub fatigue_score: f64,
    pub mean_rri: f64,
    pub rmssd: f64,
    /// Set when this window became the baseline.
    pub new_baseline: Option<BaselineState>,
}

/// Scores a window against `baseline`; without one, the window becomes the
/// baseline and scores 0.
pub fn compute_fatigue(rri_ms: &[f64], baseline: Option<&BaselineState>) -> Option<Fatigue> {
    let stats = window_stats(rri_ms)?;
    Some(match baseline {
        Some(b) => Fatigue {
            fatigue_score: fatigue_score(b, stats.mean_rri, stats.rmssd),
            mean_rri: stats.mean_rri,
            rmssd: stats.rmssd,
            new_baseline: None,
        },
        None => Fatigue {
            fatigue_score: 0.0,
            mean_rri: stats.mean_rri,
            rmssd: stats.rmssd,
            new_baseline: Some(stats.into()),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_list_hits_floor() {
        let c = compute_cvi(&[800.0; 30]).unwrap();
        assert_eq!((c.sd1, c.sd2), (0.0, 0.0));
        assert_eq!(c.cvi, -4.0);
        assert_eq!(c.relaxation_score, 0.0);
    }

    #[test]
    fn repeating_pattern() {
        let xs: Vec<f64> = [760.0, 800.0, 840.0, 800.0].repeat(8);
        let c = compute_cvi(&xs).unwrap();
        assert!((c.sd1 - 28.269551355105346).abs() < 1e-9);
        assert!((c.sd2 - 28.269551355105346).abs() < 1e-9);
        assert!((c.cvi - 4.1067578150188915).abs() < 1e-9);
    }

    #[test]
    fn scaling_shifts_cvi() {
        let xs: Vec<f64> = (0..40).map(|i| 800.0 + ((i * 37) % 23) as f64).collect();
        let scaled: Vec<f64> = xs.iter().map(|x| x * 1.5).collect();
        let (a, b) = (compute_cvi(&xs).unwrap(), compute_cvi(&scaled).unwrap());
        assert!((b.cvi - a.cvi - 2.0 * 1.5f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn fatigue_reference_case() {
        let base = BaselineState {
            baseline_rri_ms: 800.0,
            baseline_rmssd_ms: 40.0,
        };
        assert_eq!(fatigue_score(&base, 720.0, 20.0), 30.0);
        assert_eq!(fatigue_score(&base, 800.0, 40.0), 0.0);
        assert_eq!(fatigue_score(&base, 900.0, 60.0), 0.0);
    }

    #[test]
    fn first_window_becomes_baseline() {
        let xs: Vec<f64> = [710.0, 730.0].repeat(20);
        let f = compute_fatigue(&xs, None).unwrap();
        assert_eq!(f.fatigue_score, 0.0);
        let b = f.new_baseline.unwrap();
        assert_eq!((b.baseline_rri_ms, b.baseline_rmssd_ms), (720.0, 20.0));
        assert_eq!(compute_fatigue(&xs, Some(&b)).unwrap().fatigue_score, 0.0);
    }

    #[test]
    fn zero_rmssd_baseline_is_guarded() {
        let base = BaselineState {
            baseline_rri_ms: 800.0,
            baseline_rmssd_ms: 0.0,
        };
        assert_eq!(fatigue_score(&base, 720.0, 0.0), 5.0);
    }
}
