//! REST-style ingestion endpoint.
//!
//! `POST /v1/ingest` takes `{"records":[...],"request_id":..,"worker":..}`
//! and answers `{"accepted":n}`, or `{"accepted":0,"duplicate":true}` for a
//! request id it has already accepted. `POST /v1/alerts` is the same shape
//! with an `"alerts"` array. Accepted records are published to the bus keyed
//! by worker.

use crate::bus::{BusApi, BusError, TOPIC_ALERTS, TOPIC_PRIMARY};
use crate::canonical;
use crate::model::{Alert, PrimaryRecord, WorkerId};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

pub const INGEST_PATH: &str = "/v1/ingest";
pub const ALERTS_PATH: &str = "/v1/alerts";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRequest {
    pub request_id: String,
    pub worker: WorkerId,
    pub records: Vec<PrimaryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRequest {
    pub request_id: String,
    pub worker: WorkerId,
    pub alerts: Vec<Alert>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestResponse {
    pub accepted: u64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

impl HttpResponse {
    fn json<T: Serialize>(status: u16, value: &T) -> Self {
        Self {
            status,
            body: canonical::encode(value),
        }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        Self::json(status, &serde_json::json!({ "error": message.into() }))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub requests: u64,
    pub duplicate_requests: u64,
    pub records_accepted: u64,
    pub duplicate_records: u64,
    pub alerts_accepted: u64,
    pub rejected: u64,
    pub per_worker: BTreeMap<WorkerId, WorkerIngestCounts>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerIngestCounts {
    pub records_accepted: u64,
    pub duplicate_records: u64,
}

/// Request handler; dedupes by request id and publishes accepted payloads.
pub struct IngestEndpoint {
    bus: Arc<dyn BusApi>,
    seen: Mutex<HashSet<String>>,
    stats: Mutex<IngestStats>,
}

impl IngestEndpoint {
    pub fn new(bus: Arc<dyn BusApi>) -> Self {
        Self {
            bus,
            seen: Mutex::new(HashSet::new()),
            stats: Mutex::new(IngestStats::default()),
        }
    }

    pub fn stats(&self) -> IngestStats {
        self.stats.lock().clone()
    }

    /// Routes one POST body.
    pub fn handle(&self, path: &str, body: &[u8]) -> HttpResponse {
        let resp = match path {
            INGEST_PATH => self.ingest(body),
            ALERTS_PATH => self.alerts(body),
            _ => HttpResponse::error(404, format!("no route for {path}")),
        };
        if resp.status >= 400 {
            self.stats.lock().rejected += 1;
        }
        resp
    }

    fn ingest(&self, body: &[u8]) -> HttpResponse {
        let req: IngestRequest = match canonical::decode(body) {
            Ok(r) => r,
            Err(e) => return HttpResponse::error(400, e.to_string()),
        };
        if req.records.iter().any(|r| r.worker() != &req.worker) {
            return HttpResponse::error(400, "record worker differs from request worker");
        }
        let payloads: Vec<Vec<u8>> = req.records.iter().map(canonical::encode).collect();
        self.accept(&req.request_id, &req.worker, TOPIC_PRIMARY, payloads, false)
    }

    fn alerts(&self, body: &[u8]) -> HttpResponse {
        let req: AlertRequest = match canonical::decode(body) {
            Ok(r) => r,
            Err(e) => return HttpResponse::error(400, e.to_string()),
        };
        if req.alerts.iter().any(|a| a.worker != req.worker) {
            return HttpResponse::error(400, "alert worker differs from request worker");
        }
        let payloads: Vec<Vec<u8>> = req.alerts.iter().map(canonical::encode).collect();
        self.accept(&req.request_id, &req.worker, TOPIC_ALERTS, payloads, true)
    }

    fn accept(
        &self,
        request_id: &str,
        worker: &WorkerId,
        topic: &str,
        payloads: Vec<Vec<u8>>,
        alerts: bool,
    ) -> HttpResponse {
        // Holding the id set across publication keeps concurrent retries of
        // one request from both publishing.
        let mut seen = self.seen.lock();
        let n = payloads.len() as u64;
        if seen.contains(request_id) {
            let mut st = self.stats.lock();
            st.requests += 1;
            st.duplicate_requests += 1;
            if !alerts {
                st.duplicate_records += n;
                st.per_worker.entry(worker.clone()).or_default().duplicate_records += n;
            }
            return HttpResponse::json(
                200,
                &IngestResponse {
                    accepted: 0,
                    duplicate: true,
                },
            );
        }
        for p in &payloads {
            if let Err(e) = self.bus.publish(topic, worker.as_str(), p) {
                // Nothing is marked seen, so the client retry republishes;
                // downstream dedupe absorbs the partial batch.
                return HttpResponse::error(503, e.to_string());
            }
        }
        seen.insert(request_id.to_string());
        let mut st = self.stats.lock();
        st.requests += 1;
        if alerts {
            st.alerts_accepted += n;
        } else {
            st.records_accepted += n;
            st.per_worker.entry(worker.clone()).or_default().records_accepted += n;
        }
        HttpResponse::json(
            200,
            &IngestResponse {
                accepted: n,
                duplicate: false,
            },
        )
    }
}

impl From<BusError> for HttpResponse {
    fn from(e: BusError) -> Self {
        HttpResponse::error(503, e.to_string())
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        _ => "Service Unavailable",
    }
}

fn handle_http(endpoint: &IngestEndpoint, stream: TcpStream) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let mut parts = line.split_whitespace();
        let method = parts.next().unwrap_or_default().to_string();
        let path = parts.next().unwrap_or_default().to_string();
        let mut content_length = 0usize;
        loop {
            let mut h = String::new();
            if reader.read_line(&mut h)? == 0 {
                return Ok(());
            }
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            if let Some((name, value)) = h.split_once(':') {
                if name.trim().eq_ignore_ascii_case("content-length") {
                    content_length = value.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0u8; content_length];
        reader.read_exact(&mut body)?;
        let resp = if method == "POST" {
            endpoint.handle(&path, &body)
        } else {
            HttpResponse::error(405, "only POST is supported")
        };
        write!(
            writer,
            "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n",
            resp.status,
            reason(resp.status),
            resp.body.len()
        )?;
        writer.write_all(&resp.body)?;
        writer.flush()?;
    }
}

/// Minimal HTTP/1.1 server in front of an [`IngestEndpoint`].
pub struct HttpIngestServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl HttpIngestServer {
    pub fn bind(addr: impl ToSocketAddrs, endpoint: Arc<IngestEndpoint>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = thread::spawn(move || {
            while !flag.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let ep = endpoint.clone();
                        let _ = stream.set_nonblocking(false);
                        let _ = stream.set_nodelay(true);
                        thread::spawn(move || {
                            if let Err(e) = handle_http(&ep, stream) {
                                log::debug!("ingest connection closed: {e}");
                            }
                        });
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                        thread::sleep(Duration::from_millis(5));
                    }
                    Err(e) => {
                        log::error!("ingest accept failed: {e}");
                        break;
                    }
                }
            }
        });
        Ok(Self {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Sends one POST over a fresh connection and returns (status, body).
pub fn http_post(addr: SocketAddr, path: &str, body: &[u8]) -> io::Result<(u16, Vec<u8>)> {
    let mut stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    write!(
        stream,
        "POST {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    )?;
    stream.write_all(body)?;
    stream.flush()?;
    let mut reader = BufReader::new(stream);
    let mut status_line = String::new();
    reader.read_line(&mut status_line)?;
    let status = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "bad status line"))?;
    let mut content_length = 0usize;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h)? == 0 {
            break;
        }
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((name, value)) = h.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    Ok((status, body))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::Bus;
    use crate::clock::VirtualClock;
    use crate::model::RriInterval;

    fn setup() -> (Arc<Bus>, IngestEndpoint) {
        let bus = Arc::new(Bus::with_pipeline_topics(Arc::new(VirtualClock::new(0)), 2).unwrap());
        let ep = IngestEndpoint::new(bus.clone());
        (bus, ep)
    }

    fn request(id: &str, n: u64) -> IngestRequest {
        let worker = WorkerId::new("w1").unwrap();
        IngestRequest {
            request_id: id.into(),
            worker: worker.clone(),
            records: (0..n)
                .map(|seq| {
                    PrimaryRecord::Rri(RriInterval {
                        worker: worker.clone(),
                        ts: 800 * (seq + 2),
                        rri_ms: 800,
                        artifact: false,
                        seq,
                    })
                })
                .collect(),
        }
    }

    #[test]
    fn accepts_then_dedupes() {
        let (bus, ep) = setup();
        let body = canonical::encode(&request("w1-000001", 3));
        let r = ep.handle(INGEST_PATH, &body);
        assert_eq!(r.status, 200);
        assert_eq!(r.body, br#"{"accepted":3}"#);
        let r = ep.handle(INGEST_PATH, &body);
        assert_eq!(r.body, br#"{"accepted":0,"duplicate":true}"#);
        assert_eq!(bus.lag(TOPIC_PRIMARY, "any").unwrap(), 3);
        let st = ep.stats();
        assert_eq!((st.records_accepted, st.duplicate_records), (3, 3));
    }

    #[test]
    fn wire_format() {
        let s = canonical::encode_string(&request("r1", 1));
        assert_eq!(
            s,
            r#"{"records":[{"artifact":false,"kind":"rri","rri_ms":800,"seq":0,"ts":1600,"worker":"w1"}],"request_id":"r1","worker":"w1"}"#
        );
    }

    #[test]
    fn rejects_bad_input() {
        let (_, ep) = setup();
        assert_eq!(ep.handle(INGEST_PATH, b"not json").status, 400);
        assert_eq!(ep.handle("/v2/other", b"{}").status, 404);
        let mut req = request("r", 1);
        req.worker = WorkerId::new("w2").unwrap();
        assert_eq!(ep.handle(INGEST_PATH, &canonical::encode(&req)).status, 400);
    }

    #[test]
    fn http_round_trip() {
        let (bus, ep) = setup();
        let server = HttpIngestServer::bind("127.0.0.1:0", Arc::new(ep)).unwrap();
        let body = canonical::encode(&request("h1", 2));
        let (status, resp) = http_post(server.local_addr(), INGEST_PATH, &body).unwrap();
        assert_eq!(status, 200);
        assert_eq!(resp, br#"{"accepted":2}"#);
        let (_, resp) = http_post(server.local_addr(), INGEST_PATH, &body).unwrap();
        assert_eq!(resp, br#"{"accepted":0,"duplicate":true}"#);
        assert_eq!(bus.lag(TOPIC_PRIMARY, "g").unwrap(), 2);
        server.shutdown();
    }
}
