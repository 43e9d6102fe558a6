//! Posture classification over tumbling acceleration windows and the local
//! dangerous-posture rule.

use super::{EdgeConfig, EdgeError};
use crate::canonical::round_decimals;
use crate::model::{AccelSample, Alert, AlertKind, PostureLabel, PostureObservation, WorkerId};

pub const MIN_WINDOW_SAMPLES: usize = 5;

/// Reported tilt resolution: 0.01°.
pub fn round_tilt(deg: f64) -> f64 {
    let r = (deg * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Classifies one window. `window_start` becomes the observation timestamp.
pub fn classify_posture(
    worker: &WorkerId,
    window_start: u64,
    window: &[AccelSample],
    activity_threshold_g: f64,
    seq: u64,
) -> Result<PostureObservation, EdgeError> {
    if window.len() < MIN_WINDOW_SAMPLES {
        return Err(EdgeError::InsufficientWindow {
            samples: window.len(),
            min: MIN_WINDOW_SAMPLES,
        });
    }
    let n = window.len() as f64;
    let (sx, sy, sz) = window
        .iter()
        .fold((0.0, 0.0, 0.0), |a, s| (a.0 + s.ax, a.1 + s.ay, a.2 + s.az));
    let (mx, my, mz) = (sx / n, sy / n, sz / n);
    let norm = (mx * mx + my * my + mz * mz).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(EdgeError::DegenerateWindow);
    }
    let tilt = (my / norm).clamp(-1.0, 1.0).acos().to_degrees();

    let mags: Vec<f64> = window.iter().map(AccelSample::magnitude).collect();
    let mean_mag = mags.iter().sum::<f64>() / n;
    let activity = (mags.iter().map(|m| (m - mean_mag).powi(2)).sum::<f64>() / n).sqrt();

    // Label from the rounded values so it stays a function of the encoded fields.
    let tilt_deg = round_tilt(tilt);
    let activity_g = round_decimals(activity);
    Ok(PostureObservation {
        worker: worker.clone(),
        ts: window_start,
        tilt_deg,
        activity_g,
        label: PostureLabel::classify(tilt_deg, activity_g, activity_threshold_g),
        seq,
    })
}

/// Groups samples into epoch-aligned windows and classifies each one as soon
/// as a sample from a later window arrives.
#[derive(Debug, Clone)]
pub struct PostureWindower {
    worker: WorkerId,
    window_ms: u64,
    activity_threshold_g: f64,
    current: Option<u64>,
    samples: Vec<AccelSample>,
    next_seq: u64,
    skipped: u64,
}

impl PostureWindower {
    pub fn new(worker: WorkerId, config: &EdgeConfig) -> Self {
        Self {
            worker,
            window_ms: config.posture_window_ms,
            activity_threshold_g: config.activity_threshold_g,
            current: None,
            samples: Vec::new(),
            next_seq: 0,
            skipped: 0,
        }
    }

    /// Windows dropped for having too few samples.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn push(&mut self, sample: &AccelSample) -> Option<PostureObservation> {
        let idx = sample.ts / self.window_ms;
        let mut out = None;
        match self.current {
            Some(cur) if cur == idx => {}
            Some(cur) if idx < cur => {
                // Stale sample for an already closed window.
                return None;
            }
            _ => {
                out = self.close();
                self.current = Some(idx);
            }
        }
        self.samples.push(sample.clone());
        out
    }

    /// Classifies the partially filled window at end of stream.
    pub fn finish(&mut self) -> Option<PostureObservation> {
        let out = self.close();
        self.current = None;
        out
    }

    fn close(&mut self) -> Option<PostureObservation> {
        let idx = self.current?;
        let window = std::mem::take(&mut self.samples);
        match classify_posture(
            &self.worker,
            idx * self.window_ms,
            &window,
            self.activity_threshold_g,
            self.next_seq,
        ) {
            Ok(obs) => {
                self.next_seq += 1;
                Some(obs)
            }
            Err(_) => {
                self.skipped += 1;
                None
            }
        }
    }
}

/// Tracks contiguous dangerous-posture runs and raises one alert per run
/// once it has lasted `danger_dwell_ms`.
#[derive(Debug, Clone)]
pub struct DangerMonitor {
    dwell_ms: u64,
    min_tilt_deg: f64,
    run_start: Option<u64>,
    alerted: bool,
}

impl DangerMonitor {
    pub fn new(config: &EdgeConfig) -> Self {
        Self {
            dwell_ms: config.danger_dwell_ms,
            min_tilt_deg: config.danger_tilt_deg,
            run_start: None,
            alerted: false,
        }
    }

    pub fn observe(&mut self, obs: &PostureObservation) -> Option<Alert> {
        if !(obs.label.is_dangerous() && obs.tilt_deg >= self.min_tilt_deg) {
            self.run_start = None;
            self.alerted = false;
            return None;
        }
        let onset = *self.run_start.get_or_insert(obs.ts);
        let dwell = obs.ts.saturating_sub(onset);
        if self.alerted || dwell < self.dwell_ms {
            return None;
        }
        self.alerted = true;
        Some(Alert {
            worker: obs.worker.clone(),
            onset_ts: onset,
            raised_ts: obs.ts,
            kind: AlertKind::DangerousPosture,
            dwell_ms: dwell,
        })
    }
}

/// Batch form of the alert rule over an ordered observation history.
pub fn evaluate_danger(history: &[PostureObservation], config: &EdgeConfig) -> Vec<Alert> {
    let mut monitor = DangerMonitor::new(config);
    history.iter().filter_map(|o| monitor.observe(o)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w() -> WorkerId {
        WorkerId::new("w1").unwrap()
    }

    fn constant(ax: f64, ay: f64, az: f64) -> Vec<AccelSample> {
        (0..25)
            .map(|k| AccelSample {
                worker: w(),
                ts: 40 * k,
                seq: k,
                ax,
                ay,
                az,
            })
            .collect()
    }

    #[test]
    fn tilt_examples() {
        let o = classify_posture(&w(), 0, &constant(0.0, 1.0, 0.0), 0.3, 0).unwrap();
        assert_eq!((o.tilt_deg, o.label), (0.0, PostureLabel::Upright));
        let o = classify_posture(&w(), 0, &constant(0.0, 0.5, 0.866), 0.3, 0).unwrap();
        assert_eq!(o.tilt_deg, 60.0);
        assert_eq!(o.label, PostureLabel::DeepBend);
        let o = classify_posture(&w(), 0, &constant(0.0, 0.0, 1.0), 0.3, 0).unwrap();
        assert_eq!((o.tilt_deg, o.label), (90.0, PostureLabel::LyingOrExtreme));
        assert_eq!(o.activity_g, 0.0);
    }

    #[test]
    fn small_window_rejected() {
        let s = constant(0.0, 1.0, 0.0);
        assert!(matches!(
            classify_posture(&w(), 0, &s[..4], 0.3, 0),
            Err(EdgeError::InsufficientWindow { samples: 4, min: 5 })
        ));
    }

    #[test]
    fn activity_overrides_tilt() {
        let mut s = constant(0.0, 1.0, 0.0);
        for (i, x) in s.iter_mut().enumerate() {
            x.ay = if i % 2 == 0 { 1.8 } else { 0.2 };
        }
        let o = classify_posture(&w(), 0, &s, 0.3, 0).unwrap();
        assert_eq!(o.label, PostureLabel::Active);
    }

    fn obs(ts: u64, label: PostureLabel) -> PostureObservation {
        let tilt = match label {
            PostureLabel::DeepBend => 70.0,
            PostureLabel::LyingOrExtreme => 90.0,
            _ => 0.0,
        };
        PostureObservation {
            worker: w(),
            ts,
            tilt_deg: tilt,
            activity_g: 0.0,
            label,
            seq: ts / 1000,
        }
    }

    #[test]
    fn dwell_reached() {
        let cfg = EdgeConfig::default();
        let h: Vec<_> = [0, 1000, 2000]
            .iter()
            .map(|&t| obs(t, PostureLabel::DeepBend))
            .collect();
        let alerts = evaluate_danger(&h, &cfg);
        assert_eq!(alerts.len(), 1);
        assert_eq!((alerts[0].onset_ts, alerts[0].raised_ts), (0, 2000));
        assert_eq!(alerts[0].dwell_ms, 2000);
    }

    #[test]
    fn short_episode_no_alert() {
        let cfg = EdgeConfig::default();
        let h = vec![
            obs(0, PostureLabel::DeepBend),
            obs(1000, PostureLabel::DeepBend),
            obs(2000, PostureLabel::Upright),
        ];
        assert!(evaluate_danger(&h, &cfg).is_empty());
    }

    #[test]
    fn one_alert_per_episode() {
        let cfg = EdgeConfig::default();
        let mut h = Vec::new();
        for t in 0..4 {
            h.push(obs(t * 1000, PostureLabel::DeepBend));
        }
        h.push(obs(4000, PostureLabel::Upright));
        for t in 5..9 {
            h.push(obs(t * 1000, PostureLabel::LyingOrExtreme));
        }
        let alerts = evaluate_danger(&h, &cfg);
        assert_eq!(alerts.len(), 2);
        assert_eq!(alerts[1].onset_ts, 5000);
        assert_eq!(alerts[1].raised_ts, 7000);
    }

    #[test]
    fn windower_emits_per_window() {
        let cfg = EdgeConfig::default();
        let mut win = PostureWindower::new(w(), &cfg);
        let samples: Vec<AccelSample> = (0..100)
            .map(|k| AccelSample {
                worker: w(),
                ts: 40 * k,
                seq: k,
                ax: 0.0,
                ay: 1.0,
                az: 0.0,
            })
            .collect();
        let mut out: Vec<_> = samples.iter().filter_map(|s| win.push(s)).collect();
        out.extend(win.finish());
        assert_eq!(out.len(), 4);
        assert_eq!(out.iter().map(|o| o.ts).collect::<Vec<_>>(), vec![0, 1000, 2000, 3000]);
        assert_eq!(out.iter().map(|o| o.seq).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }
}
