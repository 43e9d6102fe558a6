//! Multi-threaded run over real sockets: HTTP ingest, TCP bus, one
//! dispatcher thread per partition. Timing is wall-clock, so only
//! conservation is checked, not byte-for-byte determinism.

use super::run::generate_streams;
use super::{HarnessError, ScenarioConfig};
use crate::analytics::AnalyticsJob;
use crate::bus::tcp::{BusServer, TcpBusClient};
use crate::bus::{Bus, BusApi, TOPIC_PRIMARY};
use crate::clock::{Clock, WallClock};
use crate::dispatcher::{Dispatcher, DISPATCHER_GROUP};
use crate::edge::{EdgeAgent, HttpUplink};
use crate::ingest::{HttpIngestServer, IngestEndpoint};
use crate::model::{Metric, RecordKind, WorkerId};
use crate::store::{RecordStore, Store};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SmokeWorker {
    pub emitted: u64,
    pub stored: u64,
    pub results: u64,
    pub alerts_raised: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SmokeReport {
    pub workers: BTreeMap<WorkerId, SmokeWorker>,
    pub elapsed_ms: u64,
}

impl SmokeReport {
    /// Every emitted primary record reached the store exactly once.
    pub fn conserved(&self) -> bool {
        self.workers.values().all(|w| w.emitted == w.stored)
    }
}

fn io(e: std::io::Error) -> HarnessError {
    HarnessError::io(Path::new("<socket>"), e)
}

pub fn run_smoke_tcp(cfg: &ScenarioConfig, out_dir: Option<&Path>) -> Result<SmokeReport, HarnessError> {
    cfg.check()?;
    let started = Instant::now();
    let clock: Arc<dyn Clock> = Arc::new(WallClock::new());
    let bus = Arc::new(Bus::with_pipeline_topics(clock.clone(), cfg.bus_partitions)?);
    let bus_server = BusServer::bind("127.0.0.1:0", bus.clone()).map_err(io)?;
    let bus_addr = bus_server.local_addr();
    let client = |()| -> Result<Arc<dyn BusApi>, HarnessError> {
        Ok(Arc::new(TcpBusClient::connect(bus_addr).map_err(io)?))
    };

    let store = Arc::new(match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
            let path = dir.join("store.log");
            if path.exists() {
                std::fs::remove_file(&path).map_err(|e| HarnessError::io(&path, e))?;
            }
            Store::open(&path)?
        }
        None => Store::in_memory(),
    });
    let endpoint = Arc::new(IngestEndpoint::new(client(())?));
    let http = HttpIngestServer::bind("127.0.0.1:0", endpoint).map_err(io)?;
    let http_addr = http.local_addr();
    let dispatcher = Dispatcher::new(client(())?, store.clone(), clock);
    let shutdown = AtomicBool::new(false);

    let mut workers = BTreeMap::new();
    std::thread::scope(|s| -> Result<(), HarnessError> {
        let dispatch = s.spawn(|| dispatcher.dispatch_loop(&shutdown, Duration::from_millis(2)));
        let edges: Vec<_> = cfg
            .workers
            .iter()
            .map(|spec| {
                s.spawn(move || -> Result<(WorkerId, SmokeWorker), HarnessError> {
                    let streams = generate_streams(cfg, spec)?;
                    let mut agent = EdgeAgent::new(spec.id.clone(), cfg.edge.clone(), cfg.ecg.fs_hz)?;
                    let mut uplink = HttpUplink { addr: http_addr };
                    let mut next_upload = cfg.edge.upload_interval_ms;
                    let mut accel = streams.accel.iter().peekable();
                    for e in &streams.ecg {
                        while let Some(a) = accel.next_if(|a| a.ts <= e.ts) {
                            agent.on_accel(a);
                        }
                        agent.on_ecg(e)?;
                        if e.ts >= next_upload || agent.upload_due() {
                            agent.upload(&mut uplink);
                            next_upload = (e.ts / cfg.edge.upload_interval_ms + 1) * cfg.edge.upload_interval_ms;
                        }
                    }
                    for a in accel {
                        agent.on_accel(a);
                    }
                    agent.finish()?;
                    for _ in 0..100 {
                        agent.upload(&mut uplink);
                        if agent.buffered() == 0 {
                            break;
                        }
                        std::thread::sleep(Duration::from_millis(10));
                    }
                    Ok((
                        spec.id.clone(),
                        SmokeWorker {
                            emitted: agent.emitted().len() as u64,
                            alerts_raised: agent.stats().alerts_raised,
                            ..Default::default()
                        },
                    ))
                })
            })
            .collect();
        let mut first_err = None;
        for h in edges {
            match h.join().expect("edge thread panicked") {
                Ok((w, r)) => {
                    workers.insert(w, r);
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        // Let the dispatcher drain the primary topic before stopping it.
        let deadline = Instant::now() + Duration::from_secs(10);
        while bus.lag(TOPIC_PRIMARY, DISPATCHER_GROUP).unwrap_or(0) > 0 && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(5));
        }
        shutdown.store(true, std::sync::atomic::Ordering::SeqCst);
        dispatch.join().expect("dispatcher panicked")?;
        first_err.map_or(Ok(()), Err)
    })?;

    let mut job = AnalyticsJob::new(client(())?, store.clone(), cfg.analytics())?;
    job.tick(cfg.duration_ms + cfg.watermark_ms)?;
    for (w, r) in workers.iter_mut() {
        let count = |m: &str| store.scan(w, m, 0, u64::MAX).len() as u64;
        r.stored = count(RecordKind::Rri.store_metric()) + count(RecordKind::Posture.store_metric());
        r.results = Metric::ALL.iter().map(|m| count(m.as_str())).sum();
    }
    http.shutdown();
    bus_server.shutdown();
    Ok(SmokeReport {
        workers,
        elapsed_ms: started.elapsed().as_millis() as u64,
    })
}
