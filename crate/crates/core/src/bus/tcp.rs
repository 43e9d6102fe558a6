//! Framed TCP binding for the bus.
//!
//! Each frame is a 4-byte big-endian length followed by that many bytes of
//! canonical JSON. Requests are objects with a `"cmd"` field (`PUBLISH`,
//! `POLL`, `COMMIT`, `PARTITIONS`); replies carry `"ok"` plus either the
//! result fields or `"error"`.

use super::{Bus, BusApi, BusError, Envelope};
use crate::canonical;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

/// Frames larger than this are rejected as corrupt.
pub const MAX_FRAME_BYTES: u32 = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "UPPERCASE")]
pub enum Command {
    Publish {
        topic: String,
        key: String,
        payload: String,
    },
    Poll {
        topic: String,
        group: String,
        partition: u32,
        max: usize,
    },
    Commit {
        topic: String,
        group: String,
        partition: u32,
        offset: u64,
    },
    Partitions {
        topic: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partitions: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelopes: Option<Vec<Envelope>>,
}

pub fn write_frame<W: Write>(w: &mut W, body: &[u8]) -> io::Result<()> {
    let len = u32::try_from(body.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&len.to_be_bytes());
    frame.extend_from_slice(body);
    w.write_all(&frame)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on clean end of stream before a header.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut header = [0u8; 4];
    match r.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(header);
    if len > MAX_FRAME_BYTES {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

fn execute(bus: &Bus, cmd: Command) -> Reply {
    let result = match cmd {
        Command::Publish {
            topic,
            key,
            payload,
        } => bus.publish(&topic, &key, payload.as_bytes()).map(|(p, o)| Reply {
            ok: true,
            partition: Some(p),
            offset: Some(o),
            ..Reply::default()
        }),
        Command::Poll {
            topic,
            group,
            partition,
            max,
        } => bus
            .poll_partition(&topic, &group, partition, max)
            .map(|envelopes| Reply {
                ok: true,
                envelopes: Some(envelopes),
                ..Reply::default()
            }),
        Command::Commit {
            topic,
            group,
            partition,
            offset,
        } => bus.commit(&topic, &group, partition, offset).map(|()| Reply {
            ok: true,
            ..Reply::default()
        }),
        Command::Partitions { topic } => bus.partitions(&topic).map(|n| Reply {
            ok: true,
            partitions: Some(n),
            ..Reply::default()
        }),
    };
    result.unwrap_or_else(|e| Reply {
        ok: false,
        error: Some(e.to_string()),
        ..Reply::default()
    })
}

fn serve_connection(bus: &Bus, mut stream: TcpStream) -> io::Result<()> {
    while let Some(frame) = read_frame(&mut stream)? {
        let reply = match canonical::decode::<Command>(&frame) {
            Ok(cmd) => execute(bus, cmd),
            Err(e) => Reply {
                ok: false,
                error: Some(e.to_string()),
                ..Reply::default()
            },
        };
        write_frame(&mut stream, &canonical::encode(&reply))?;
    }
    Ok(())
}

/// Accept loop serving one bus. Dropping the handle does not stop it; call
/// [`BusServer::shutdown`].
pub struct BusServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl BusServer {
    pub fn bind(addr: impl ToSocketAddrs, bus: Arc<Bus>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = thread::spawn(move || {
            while !flag.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        let bus = bus.clone();
                        let _ = stream.set_nonblocking(false);
                        let _ = stream.set_nodelay(true);
                        thread::spawn(move || {
                            if let Err(e) = serve_connection(&bus, stream) {
                                log::debug!("bus connection {peer} closed: {e}");
                            }
                        });
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                        thread::sleep(Duration::from_millis(5));
                    }
                    Err(e) => {
                        log::error!("bus accept failed: {e}");
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

/// Blocking client; one request in flight per connection.
pub struct TcpBusClient {
    stream: Mutex<TcpStream>,
}

impl TcpBusClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            stream: Mutex::new(stream),
        })
    }

    fn call(&self, cmd: &Command) -> Result<Reply, BusError> {
        let transport = |e: io::Error| BusError::Transport(e.to_string());
        let mut stream = self.stream.lock();
        write_frame(&mut *stream, &canonical::encode(cmd)).map_err(transport)?;
        let frame = read_frame(&mut *stream)
            .map_err(transport)?
            .ok_or_else(|| BusError::Transport("connection closed".into()))?;
        let reply: Reply =
            canonical::decode(&frame).map_err(|e| BusError::Transport(e.to_string()))?;
        if reply.ok {
            Ok(reply)
        } else {
            Err(BusError::Transport(reply.error.unwrap_or_default()))
        }
    }
}

impl BusApi for TcpBusClient {
    fn publish(&self, topic: &str, key: &str, payload: &[u8]) -> Result<(u32, u64), BusError> {
        let payload = std::str::from_utf8(payload)
            .map_err(|_| BusError::InvalidPayload)?
            .to_string();
        let r = self.call(&Command::Publish {
            topic: topic.to_string(),
            key: key.to_string(),
            payload,
        })?;
        match (r.partition, r.offset) {
            (Some(p), Some(o)) => Ok((p, o)),
            _ => Err(BusError::Transport("malformed publish reply".into())),
        }
    }

    fn partitions(&self, topic: &str) -> Result<u32, BusError> {
        self.call(&Command::Partitions {
            topic: topic.to_string(),
        })?
        .partitions
        .ok_or_else(|| BusError::Transport("malformed partitions reply".into()))
    }

    fn poll_partition(
        &self,
        topic: &str,
        group: &str,
        partition: u32,
        max: usize,
    ) -> Result<Vec<Envelope>, BusError> {
        Ok(self
            .call(&Command::Poll {
                topic: topic.to_string(),
                group: group.to_string(),
                partition,
                max,
            })?
            .envelopes
            .unwrap_or_default())
    }

    fn commit(
        &self,
        topic: &str,
        group: &str,
        partition: u32,
        offset: u64,
    ) -> Result<(), BusError> {
        self.call(&Command::Commit {
            topic: topic.to_string(),
            group: group.to_string(),
            partition,
            offset,
        })
        .map(|_| ())
    }
}
