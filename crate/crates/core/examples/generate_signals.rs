// Synthesize a minute of ECG and accelerometer data with ground truth.

use vitalstream::model::WorkerId;
use vitalstream::signal_gen::{
    build_rr_series, synthesize_accel, synthesize_ecg, AccelOptions, EcgOptions, PostureScenario, PostureSegment,
    RrProfile, SegmentPosture,
};

pub fn run_example() -> anyhow::Result<()> {
    let worker = WorkerId::new("w1")?;
    let rr = build_rr_series(&RrProfile::default(), 60_000)?;
    let opts = EcgOptions { duration_ms: Some(60_000), ..EcgOptions::default() };
    let (ecg, truth) = synthesize_ecg(&worker, &rr.intervals_ms, &opts)?;
    println!(
        "{} beats, {} ECG samples, first R-peak at {:.1} ms",
        rr.intervals_ms.len(),
        ecg.len(),
        truth.r_peak_times_ms[0]
    );

    let scenario = PostureScenario::new(vec![
        PostureSegment { duration_ms: 30_000, posture: SegmentPosture::Upright },
        PostureSegment { duration_ms: 20_000, posture: SegmentPosture::DeepBend { theta_deg: 70.0 } },
        PostureSegment { duration_ms: 10_000, posture: SegmentPosture::Active },
    ]);
    let (accel, truth) = synthesize_accel(&worker, &scenario, &AccelOptions::default())?;
    println!("{} accel samples", accel.len());
    for span in &truth.posture_labels {
        println!("  [{:>6}, {:>6}) {:?}", span.start_ms, span.end_ms, span.label);
    }
    anyhow::ensure!(ecg.len() == 15_000 && accel.len() == 1_500);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
