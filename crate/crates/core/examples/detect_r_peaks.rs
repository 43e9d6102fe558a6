// Stream ECG through the R-peak detector and derive RR intervals.

use vitalstream::edge::{PeakDetector, RriTracker};
use vitalstream::model::WorkerId;
use vitalstream::signal_gen::{build_rr_series, synthesize_ecg, EcgOptions, RrProfile};

pub fn run_example() -> anyhow::Result<()> {
    let worker = WorkerId::new("w1")?;
    let rr = build_rr_series(&RrProfile::default(), 30_000)?;
    let (ecg, truth) = synthesize_ecg(&worker, &rr.intervals_ms, &EcgOptions::default())?;

    let mut detector = PeakDetector::new(250.0);
    let mut tracker = RriTracker::new(worker);
    let mut peaks = Vec::new();
    for sample in &ecg {
        peaks.extend(detector.push(sample)?);
    }
    peaks.extend(detector.finish());
    let mut intervals = Vec::new();
    for &p in &peaks {
        intervals.extend(tracker.on_peak(p)?);
    }

    println!("{} true beats, {} detected", truth.r_peak_times_ms.len(), peaks.len());
    for (rri, t) in intervals.iter().zip(&truth.r_peak_times_ms[1..]).take(5) {
        println!("  peak {:>6} ms (truth {:>8.1}) rri {} ms artifact={}", rri.ts, t, rri.rri_ms, rri.artifact);
    }
    anyhow::ensure!(peaks.len().abs_diff(truth.r_peak_times_ms.len()) <= 2);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
