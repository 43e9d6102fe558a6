// Write to the append-only store, tear the tail, and recover.

use std::io::Write;
use vitalstream::model::{PrimaryRecord, RriInterval, WorkerId};
use vitalstream::store::{RecordStore, Store, StoreRecord};

pub fn run_example() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("store.log");
    let w = WorkerId::new("w1")?;
    {
        let store = Store::open(&path)?;
        for seq in 0..5 {
            let rec = PrimaryRecord::Rri(RriInterval { worker: w.clone(), ts: 800 * seq, rri_ms: 800, artifact: false, seq });
            store.put(StoreRecord::primary(&rec, seq))?;
        }
    }
    // A crash halfway through the next append.
    std::fs::OpenOptions::new().append(true).open(&path)?.write_all(b"{\"key\":{\"worker\":\"w1\"")?;

    let store = Store::recover(&path)?;
    let info = store.recovery_info();
    println!("recovered {} entries, truncated {} torn bytes", info.entries, info.torn_bytes);
    for r in store.scan(&w, "primary.rri", 1_000, 3_300) {
        println!("  ts {} -> {}", r.key.ts, r.payload);
    }
    anyhow::ensure!(store.len() == 5 && info.torn_bytes > 0);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
