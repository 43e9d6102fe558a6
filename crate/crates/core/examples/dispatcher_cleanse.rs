// Cleanse a messy batch, then dispatch primaries from the bus into the store.

use std::sync::Arc;
use vitalstream::bus::{Bus, BusApi, TOPIC_PRIMARY};
use vitalstream::canonical;
use vitalstream::clock::VirtualClock;
use vitalstream::dispatcher::{cleanse, Dispatcher};
use vitalstream::model::{PrimaryRecord, RriInterval, WorkerId};
use vitalstream::store::{RecordStore, Store};

fn rri(worker: &WorkerId, seq: u64, ts: u64, rri_ms: u64) -> PrimaryRecord {
    PrimaryRecord::Rri(RriInterval {
        worker: worker.clone(),
        ts,
        rri_ms,
        artifact: !(300..=2000).contains(&rri_ms),
        seq,
    })
}

pub fn run_example() -> anyhow::Result<()> {
    let w = WorkerId::new("w1")?;
    let messy = vec![rri(&w, 2, 1600, 800), rri(&w, 1, 800, 800), rri(&w, 2, 1600, 800), rri(&w, 3, 1750, 150)];
    let (clean, report) = cleanse(messy);
    println!("{}", canonical::encode_string(&report));
    anyhow::ensure!(clean.iter().map(PrimaryRecord::seq).collect::<Vec<_>>() == [1, 2]);

    let clock = Arc::new(VirtualClock::new(0));
    let bus = Arc::new(Bus::with_pipeline_topics(clock.clone(), 2)?);
    let store = Arc::new(Store::in_memory());
    for seq in 0..10 {
        let rec = rri(&w, seq, 800 * (seq + 1), 800);
        bus.publish(TOPIC_PRIMARY, w.as_str(), &canonical::encode(&rec))?;
    }
    // Deliver the first records twice, as an at-least-once bus may.
    bus.publish(TOPIC_PRIMARY, w.as_str(), &canonical::encode(&rri(&w, 0, 800, 800)))?;

    let dispatcher = Dispatcher::new(bus, store.clone(), clock);
    dispatcher.step()?;
    let stats = dispatcher.stats();
    println!("inserted {}, duplicates {}, commits {}", stats.inserted, stats.duplicates, stats.commits);
    anyhow::ensure!(store.scan(&w, "primary.rri", 0, u64::MAX).len() == 10);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
