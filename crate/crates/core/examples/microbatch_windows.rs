// Tumbling-window fatigue and relaxation scores with a watermark.

use vitalstream::analytics::{AnalyticsConfig, MicroBatchEngine};
use vitalstream::model::{RriInterval, WorkerId};
use vitalstream::store::Store;

pub fn run_example() -> anyhow::Result<()> {
    let w = WorkerId::new("w1")?;
    let mut engine = MicroBatchEngine::new(AnalyticsConfig::default())?;
    let store = Store::in_memory();

    // Three minutes where the heart rate creeps up and variability falls.
    let mut ts = 0;
    let mut seq = 0;
    while ts < 180_000 {
        let minute = ts / 60_000;
        let base = 850 - 40 * minute;
        let rri_ms = base + if seq % 2 == 0 { 30 - 10 * minute } else { 0 };
        ts += rri_ms;
        engine.ingest(&RriInterval { worker: w.clone(), ts, rri_ms, artifact: false, seq });
        seq += 1;
    }

    for now in [60_000, 70_000, 130_000, 190_000] {
        for r in engine.run_microbatch_tick(now, &store) {
            let r = r.result;
            println!(
                "tick {now:>6}: {:<10} [{:>6}, {:>6}) value {:?} from {} RRIs",
                r.metric, r.window_start, r.window_end, r.value, r.input_count
            );
        }
    }
    // Too late for the first window, which is already sealed.
    engine.ingest(&RriInterval { worker: w.clone(), ts: 1_000, rri_ms: 800, artifact: false, seq: 9_999 });
    println!("late drops: {}", engine.stats().late_drops(&w));
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
