// Classify posture windows and raise a dwell-based danger alert.

use vitalstream::edge::{DangerMonitor, EdgeConfig, PostureWindower};
use vitalstream::model::WorkerId;
use vitalstream::signal_gen::{synthesize_accel, AccelOptions, PostureScenario, PostureSegment, SegmentPosture};

pub fn run_example() -> anyhow::Result<()> {
    let worker = WorkerId::new("w1")?;
    let cfg = EdgeConfig::default();
    let scenario = PostureScenario::new(vec![
        PostureSegment { duration_ms: 10_000, posture: SegmentPosture::Upright },
        PostureSegment { duration_ms: 6_000, posture: SegmentPosture::Lying },
        PostureSegment { duration_ms: 4_000, posture: SegmentPosture::Bent { theta_deg: 35.0 } },
    ]);
    let (accel, _) = synthesize_accel(&worker, &scenario, &AccelOptions::default())?;

    let mut windower = PostureWindower::new(worker, &cfg);
    let mut monitor = DangerMonitor::new(&cfg);
    let mut alerts = Vec::new();
    let mut observations: Vec<_> = accel.iter().filter_map(|s| windower.push(s)).collect();
    observations.extend(windower.finish());
    for obs in &observations {
        println!("{:>6} ms tilt {:>6.2}° {:?}", obs.ts, obs.tilt_deg, obs.label);
        alerts.extend(monitor.observe(obs));
    }
    for a in &alerts {
        println!("alert: onset {} ms, raised {} ms, dwell {} ms", a.onset_ts, a.raised_ts, a.dwell_ms);
    }
    anyhow::ensure!(alerts.len() == 1);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
