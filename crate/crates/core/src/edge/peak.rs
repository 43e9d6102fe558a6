//! Streaming R-peak detector in the Pan-Tompkins family.
//!
//! Pipeline per sample: band-pass (cascaded moving averages for the low-pass
//! edge, minus a longer moving average for the high-pass edge), five-point
//! derivative, squaring, 150 ms moving-window integration. Local maxima of
//! the integrated signal are classified against adaptive signal/noise
//! running estimates. Each accepted QRS is located on the raw signal as the
//! maximum within ±40 ms of the delay-compensated threshold crossing.
//!
//! The first two seconds are a learning phase that seeds the thresholds;
//! candidates seen during it are replayed once the thresholds exist, so
//! early beats are not lost. Peaks are released one per call, in order.

use super::EdgeError;
use crate::model::EcgSample;
use std::collections::VecDeque;

pub const REFRACTORY_MS: u64 = 200;
pub const LEARNING_MS: u64 = 2000;
pub const SEARCH_HALF_WIDTH_MS: f64 = 40.0;
const INTEGRATION_MS: f64 = 150.0;
const HISTORY_MS: f64 = 2500.0;

/// Running sum over the last `len` values.
#[derive(Debug, Clone)]
struct MovingSum {
    buf: VecDeque<f64>,
    len: usize,
    sum: f64,
}

impl MovingSum {
    fn new(len: usize) -> Self {
        Self {
            buf: VecDeque::with_capacity(len + 1),
            len,
            sum: 0.0,
        }
    }

    fn push(&mut self, x: f64) -> f64 {
        self.buf.push_back(x);
        self.sum += x;
        if self.buf.len() > self.len {
            self.sum -= self.buf.pop_front().unwrap_or(0.0);
        }
        self.sum
    }

    fn mean(&mut self, x: f64) -> f64 {
        self.push(x) / self.len as f64
    }
}

/// Fixed-length delay line.
#[derive(Debug, Clone)]
struct Delay {
    buf: VecDeque<f64>,
    len: usize,
}

impl Delay {
    fn new(len: usize) -> Self {
        Self {
            buf: VecDeque::from(vec![0.0; len]),
            len,
        }
    }

    fn push(&mut self, x: f64) -> f64 {
        self.buf.push_back(x);
        if self.buf.len() > self.len {
            self.buf.pop_front().unwrap_or(0.0)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
struct BandPass {
    lp1: MovingSum,
    lp2: MovingSum,
    hp_avg: MovingSum,
    hp_delay: Delay,
}

impl BandPass {
    fn new(lp_len: usize, hp_len: usize) -> Self {
        Self {
            lp1: MovingSum::new(lp_len),
            lp2: MovingSum::new(lp_len),
            hp_avg: MovingSum::new(hp_len),
            hp_delay: Delay::new((hp_len - 1) / 2),
        }
    }

    /// Group delay in samples.
    fn delay(&self) -> usize {
        (self.lp1.len - 1) + (self.hp_avg.len - 1) / 2
    }

    fn push(&mut self, x: f64) -> f64 {
        let lp = self.lp2.mean(self.lp1.mean(x));
        let avg = self.hp_avg.mean(lp);
        self.hp_delay.push(lp) - avg
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    /// Sample index of the integrated-signal maximum.
    index: u64,
    value: f64,
}

/// Detector state for one worker's ECG stream.
#[derive(Debug, Clone)]
pub struct PeakDetector {
    fs_hz: f64,
    bandpass: BandPass,
    deriv: [f64; 4],
    integrator: MovingSum,
    filter_delay: u64,
    history_len: usize,
    /// Raw samples (index, ts, value), newest last.
    raw: VecDeque<(u64, u64, f64)>,
    /// Integrated signal, newest last; `mwi_base` is the index of the front.
    mwi: VecDeque<f64>,
    mwi_base: u64,
    next_index: u64,
    last_seq: Option<u64>,
    learning: bool,
    learning_candidates: Vec<Candidate>,
    learn_max: f64,
    learn_sum: f64,
    learn_count: u64,
    spki: f64,
    npki: f64,
    last_peak_ts: Option<u64>,
    pending: VecDeque<u64>,
}

fn odd(n: f64) -> usize {
    let n = n.round().max(1.0) as usize;
    if n.is_multiple_of(2) {
        n + 1
    } else {
        n
    }
}

impl PeakDetector {
    pub fn new(fs_hz: f64) -> Self {
        let lp_len = odd(0.028 * fs_hz);
        let hp_len = odd(0.088 * fs_hz);
        let bandpass = BandPass::new(lp_len, hp_len);
        // Five-point derivative adds two samples of delay.
        let filter_delay = (bandpass.delay() + 2) as u64;
        let win = (INTEGRATION_MS * fs_hz / 1000.0).round().max(1.0) as usize;
        Self {
            fs_hz,
            bandpass,
            deriv: [0.0; 4],
            integrator: MovingSum::new(win),
            filter_delay,
            history_len: (HISTORY_MS * fs_hz / 1000.0) as usize,
            raw: VecDeque::new(),
            mwi: VecDeque::new(),
            mwi_base: 0,
            next_index: 0,
            last_seq: None,
            learning: true,
            learning_candidates: Vec::new(),
            learn_max: 0.0,
            learn_sum: 0.0,
            learn_count: 0,
            spki: 0.0,
            npki: 0.0,
            last_peak_ts: None,
            pending: VecDeque::new(),
        }
    }

    /// Current (signal, noise) running estimates.
    pub fn thresholds(&self) -> (f64, f64) {
        (self.spki, self.npki)
    }

    fn threshold(&self) -> f64 {
        self.npki + 0.25 * (self.spki - self.npki)
    }

    /// Feeds one sample; returns at most one detected R-peak timestamp.
    pub fn push(&mut self, sample: &EcgSample) -> Result<Option<u64>, EdgeError> {
        if let Some(last) = self.last_seq {
            if sample.seq <= last {
                return Err(EdgeError::StreamOrder {
                    last,
                    got: sample.seq,
                });
            }
        }
        self.last_seq = Some(sample.seq);
        let index = self.next_index;
        self.next_index += 1;

        self.raw.push_back((index, sample.ts, sample.value));
        if self.raw.len() > self.history_len {
            self.raw.pop_front();
        }

        let bp = self.bandpass.push(sample.value);
        let [d1, d2, d3, d4] = self.deriv;
        let derivative = (2.0 * bp + d1 - d3 - 2.0 * d4) / 8.0;
        self.deriv = [bp, d1, d2, d3];
        let integrated = self.integrator.mean(derivative * derivative);

        self.mwi.push_back(integrated);
        if self.mwi.len() > self.history_len {
            self.mwi.pop_front();
            self.mwi_base += 1;
        }

        // A local maximum of the integrated signal sits one sample back.
        if self.mwi.len() >= 3 {
            let n = self.mwi.len();
            let (a, b, c) = (self.mwi[n - 3], self.mwi[n - 2], self.mwi[n - 1]);
            if b > a && b >= c {
                let cand = Candidate {
                    index: index - 1,
                    value: b,
                };
                if self.learning {
                    self.learning_candidates.push(cand);
                } else {
                    self.classify(cand);
                }
            }
        }

        if self.learning {
            self.learn_max = self.learn_max.max(integrated);
            self.learn_sum += integrated;
            self.learn_count += 1;
            if sample.ts >= LEARNING_MS {
                self.end_learning();
            }
        }
        Ok(self.pending.pop_front())
    }

    /// Ends the stream: finishes learning if it never completed and returns
    /// every peak not yet released.
    pub fn finish(&mut self) -> Vec<u64> {
        if self.learning {
            self.end_learning();
        }
        self.pending.drain(..).collect()
    }

    fn end_learning(&mut self) {
        self.learning = false;
        let mean = if self.learn_count > 0 {
            self.learn_sum / self.learn_count as f64
        } else {
            0.0
        };
        self.spki = 0.25 * self.learn_max;
        self.npki = 0.5 * mean;
        for cand in std::mem::take(&mut self.learning_candidates) {
            self.classify(cand);
        }
    }

    fn classify(&mut self, cand: Candidate) {
        let thr = self.threshold();
        if cand.value > thr && cand.value > 0.0 {
            if let Some(ts) = self.locate_r_peak(cand.index, thr) {
                let refractory = self
                    .last_peak_ts
                    .is_some_and(|last| ts < last + REFRACTORY_MS);
                if !refractory {
                    self.spki = 0.125 * cand.value + 0.875 * self.spki;
                    self.last_peak_ts = Some(ts);
                    self.pending.push_back(ts);
                }
                return;
            }
        }
        self.npki = 0.125 * cand.value + 0.875 * self.npki;
    }

    /// Finds the raw-signal maximum within ±40 ms of the delay-compensated
    /// threshold crossing that precedes the integrated maximum at `peak_index`.
    fn locate_r_peak(&self, peak_index: u64, thr: f64) -> Option<u64> {
        let mut crossing = peak_index;
        while crossing > self.mwi_base {
            let prev = (crossing - 1 - self.mwi_base) as usize;
            if self.mwi[prev] <= thr {
                break;
            }
            crossing -= 1;
        }
        let center = crossing.saturating_sub(self.filter_delay) as f64;
        let half = SEARCH_HALF_WIDTH_MS * self.fs_hz / 1000.0;
        let (lo, hi) = ((center - half).max(0.0), center + half);

        let front = self.raw.front()?.0;
        let window: Vec<&(u64, u64, f64)> = self
            .raw
            .iter()
            .filter(|(i, _, _)| (*i as f64) >= lo && (*i as f64) <= hi)
            .collect();
        let best = window
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .2.total_cmp(&b.1 .2))
            .map(|(pos, _)| pos)?;
        let (idx, ts, y1) = *window[best];
        // Sub-sample refinement by a parabola through the neighbours.
        if best > 0 && best + 1 < window.len() && idx > front {
            let (_, ts0, y0) = *window[best - 1];
            let (_, ts2, y2) = *window[best + 1];
            let denom = y0 - 2.0 * y1 + y2;
            if denom < 0.0 {
                let delta = (0.5 * (y0 - y2) / denom).clamp(-0.5, 0.5);
                let step = if delta >= 0.0 { ts2 - ts } else { ts - ts0 } as f64;
                return Some((ts as f64 + delta * step).round().max(0.0) as u64);
            }
        }
        Some(ts)
    }
}
