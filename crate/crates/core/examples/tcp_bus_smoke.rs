// Two workers uploading over HTTP, with the bus and dispatcher on real sockets.

use vitalstream::harness::{run_smoke_tcp, ScenarioConfig, WorkerSpec};

pub fn run_example() -> anyhow::Result<()> {
    let mut cfg = ScenarioConfig::single_worker("w1", 30_000);
    cfg.workers.push(WorkerSpec::new("w2"));
    let report = run_smoke_tcp(&cfg, None)?;
    for (id, w) in &report.workers {
        println!("{id}: emitted {} stored {} results {}", w.emitted, w.stored, w.results);
    }
    println!("took {} ms", report.elapsed_ms);
    anyhow::ensure!(report.conserved());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
