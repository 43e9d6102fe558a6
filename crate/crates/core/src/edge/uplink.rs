//! Bounded upload buffer, request packaging and the transport seam.

use crate::ingest::{http_post, IngestEndpoint, IngestRequest};
use crate::model::{PrimaryRecord, WorkerId};
use std::collections::VecDeque;
use std::net::SocketAddr;

/// FIFO of records awaiting upload. At capacity the oldest record is
/// dropped and counted; pushes never block.
#[derive(Debug, Clone)]
pub struct UplinkBuffer {
    queue: VecDeque<PrimaryRecord>,
    capacity: usize,
    dropped: u64,
}

impl UplinkBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            queue: VecDeque::new(),
            capacity: capacity.max(1),
            dropped: 0,
        }
    }

    pub fn push(&mut self, record: PrimaryRecord) {
        if self.queue.len() >= self.capacity {
            self.queue.pop_front();
            self.dropped += 1;
        }
        self.queue.push_back(record);
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn drain_front(&mut self, max: usize) -> Vec<PrimaryRecord> {
        let n = max.min(self.queue.len());
        self.queue.drain(..n).collect()
    }
}

/// Drains up to `batch_max` records into one request; `None` when empty.
pub fn package_upload(
    buffer: &mut UplinkBuffer,
    worker: &WorkerId,
    request_id: String,
    batch_max: usize,
) -> Option<IngestRequest> {
    if buffer.is_empty() {
        return None;
    }
    Some(IngestRequest {
        request_id,
        worker: worker.clone(),
        records: buffer.drain_front(batch_max.max(1)),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    /// The request never reached the server.
    #[error("uplink unreachable")]
    Unreachable,
    /// The server received the request but the reply was lost.
    #[error("response lost")]
    ResponseLost,
    #[error("server answered {status}: {message}")]
    Status { status: u16, message: String },
}

impl TransportError {
    /// Whether the request bytes crossed the network.
    pub fn reached_server(&self) -> bool {
        !matches!(self, Self::Unreachable)
    }
}

/// POSTs a JSON body and returns the response body on HTTP 200.
pub trait Uplink {
    fn post(&mut self, path: &str, body: &[u8]) -> Result<Vec<u8>, TransportError>;
}

/// Calls an in-process endpoint directly.
pub struct EndpointUplink<'a> {
    pub endpoint: &'a IngestEndpoint,
}

impl Uplink for EndpointUplink<'_> {
    fn post(&mut self, path: &str, body: &[u8]) -> Result<Vec<u8>, TransportError> {
        let resp = self.endpoint.handle(path, body);
        if resp.status == 200 {
            Ok(resp.body)
        } else {
            Err(TransportError::Status {
                status: resp.status,
                message: String::from_utf8_lossy(&resp.body).into_owned(),
            })
        }
    }
}

/// Real HTTP over TCP.
pub struct HttpUplink {
    pub addr: SocketAddr,
}

impl Uplink for HttpUplink {
    fn post(&mut self, path: &str, body: &[u8]) -> Result<Vec<u8>, TransportError> {
        match http_post(self.addr, path, body) {
            Ok((200, body)) => Ok(body),
            Ok((status, body)) => Err(TransportError::Status {
                status,
                message: String::from_utf8_lossy(&body).into_owned(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::ConnectionRefused => {
                Err(TransportError::Unreachable)
            }
            Err(_) => Err(TransportError::ResponseLost),
        }
    }
}
