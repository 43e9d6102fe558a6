// Partitioned topics, consumer groups and redelivery of uncommitted batches.

use std::sync::Arc;
use vitalstream::bus::{partition_for, Bus, BusApi};
use vitalstream::clock::VirtualClock;

pub fn run_example() -> anyhow::Result<()> {
    let bus = Bus::new(Arc::new(VirtualClock::new(0)));
    bus.create_topic("readings", 4)?;
    for (i, key) in ["w1", "w2", "w3", "w1", "w2"].iter().enumerate() {
        let (p, off) = bus.publish("readings", key, format!("{{\"n\":{i}}}").as_bytes())?;
        println!("{key} -> partition {p} offset {off} (expected partition {})", partition_for(key, 4));
    }

    let consumer = bus.subscribe("readings", "printer")?;
    let batch = consumer.poll(10)?;
    println!("first poll: {} envelopes", batch.len());
    // Not committed yet, so the same batch comes back.
    anyhow::ensure!(consumer.poll(10)? == batch);
    consumer.commit_batch(&batch)?;
    println!("after commit: {} envelopes, lag {}", consumer.poll(10)?.len(), bus.lag("readings", "printer")?);

    // A second group has its own offsets.
    println!("other group lag: {}", bus.lag("readings", "audit")?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
