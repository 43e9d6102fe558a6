use std::sync::Arc;
use vitalstream::bus::tcp::{BusServer, TcpBusClient};
use vitalstream::bus::{Bus, BusApi, BusError, Consumer, TOPIC_PRIMARY};
use vitalstream::clock::{Clock, VirtualClock};
use vitalstream::harness::{run_smoke_tcp, ScenarioConfig, WorkerSpec};

fn serve() -> (Arc<Bus>, BusServer) {
    let clock: Arc<dyn Clock> = Arc::new(VirtualClock::new(0));
    let bus = Arc::new(Bus::with_pipeline_topics(clock, 4).unwrap());
    let server = BusServer::bind("127.0.0.1:0", bus.clone()).unwrap();
    (bus, server)
}

#[test]
fn client_sees_the_same_log_as_the_server() {
    let (bus, server) = serve();
    let client = TcpBusClient::connect(server.local_addr()).unwrap();
    assert_eq!(client.partitions(TOPIC_PRIMARY).unwrap(), 4);
    for i in 0..20 {
        let key = format!("w{}", i % 3);
        client.publish(TOPIC_PRIMARY, &key, format!("{{\"i\":{i}}}").as_bytes()).unwrap();
    }
    let remote = Consumer::new(&client, TOPIC_PRIMARY, "g");
    let local = bus.subscribe(TOPIC_PRIMARY, "g2").unwrap();
    let mut a = remote.poll(100).unwrap();
    let mut b = local.poll(100).unwrap();
    a.sort_by_key(|e| (e.partition, e.offset));
    b.sort_by_key(|e| (e.partition, e.offset));
    assert_eq!(a.len(), 20);
    assert_eq!(a, b);

    remote.commit_batch(&a).unwrap();
    assert!(remote.poll(100).unwrap().is_empty());
    assert_eq!(bus.lag(TOPIC_PRIMARY, "g").unwrap(), 0);
    assert_eq!(bus.lag(TOPIC_PRIMARY, "g2").unwrap(), 20);
    server.shutdown();
}

#[test]
fn uncommitted_batches_are_redelivered_over_tcp() {
    let (_bus, server) = serve();
    let client = TcpBusClient::connect(server.local_addr()).unwrap();
    client.publish(TOPIC_PRIMARY, "w1", b"{}").unwrap();
    let c = Consumer::new(&client, TOPIC_PRIMARY, "g");
    let first = c.poll(10).unwrap();
    let again = c.poll(10).unwrap();
    assert_eq!(first, again);
    server.shutdown();
}

#[test]
fn server_errors_reach_the_client() {
    let (_bus, server) = serve();
    let client = TcpBusClient::connect(server.local_addr()).unwrap();
    let err = client.publish("no.such.topic", "k", b"{}").unwrap_err();
    // Server-side errors cross the wire as text.
    assert!(matches!(&err, BusError::Transport(m) if m.contains("no.such.topic")), "{err:?}");
    server.shutdown();
}

#[test]
fn smoke_run_conserves_records() {
    let mut cfg = ScenarioConfig::single_worker("w1", 90_000);
    cfg.workers.push(WorkerSpec::new("w2"));
    let dir = tempfile::tempdir().unwrap();
    let report = run_smoke_tcp(&cfg, Some(dir.path())).unwrap();
    assert!(report.conserved(), "{report:?}");
    for w in report.workers.values() {
        assert!(w.emitted > 100);
        assert_eq!(w.results, 2, "one fatigue and one relaxation window");
    }
    assert!(dir.path().join("store.log").exists());
}
