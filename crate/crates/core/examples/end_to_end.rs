// A full virtual-time run with an uplink outage and a dangerous posture.

use vitalstream::canonical;
use vitalstream::harness::{run_scenario, FaultKind, FaultSpec, ScenarioConfig};
use vitalstream::signal_gen::{PostureScenario, PostureSegment, SegmentPosture};

pub fn run_example() -> anyhow::Result<()> {
    let mut cfg = ScenarioConfig::single_worker("w1", 130_000);
    cfg.seed = 42;
    cfg.workers[0].posture = Some(PostureScenario::new(vec![
        PostureSegment { duration_ms: 50_000, posture: SegmentPosture::Upright },
        PostureSegment { duration_ms: 8_000, posture: SegmentPosture::DeepBend { theta_deg: 75.0 } },
    ]));
    cfg.faults.push(FaultSpec { kind: FaultKind::UplinkOutage, start_ms: 45_000, end_ms: 75_000 });

    let art = run_scenario(&cfg, None)?;
    let r = art.report.workers.values().next().expect("one worker");
    println!(
        "emitted {} primaries, stored {}, {} fatigue and {} relaxation results, {} alert(s)",
        r.primaries_emitted, r.records_stored, r.fatigue_results, r.relaxation_results, r.alerts_stored
    );
    println!("bandwidth: {}", canonical::encode_string(&art.report.bandwidth));
    for s in &art.results {
        println!("  {} [{}, {}) = {:?}", s.result.metric, s.result.window_start, s.result.window_end, s.result.value);
    }
    anyhow::ensure!(r.conserved() && r.alerts_stored == 1);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
