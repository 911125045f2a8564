//! Request/response transports.
//!
//! Every message travels as a 4-byte big-endian length prefix followed by
//! its canonical encoding. [`Loopback`] runs the same encode/decode path
//! in-process; [`TcpServer`] and [`TcpFederation`] carry it over sockets.

use std::collections::BTreeMap;
use std::io::{self, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;

use super::wire::{decode, encode, Message, WireError};
use super::{LocalizeRequest, LocalizeResponse, Registry, RegistryEntry, RegistryQuery, SimulatedService, Status};

pub const MAX_FRAME_LEN: usize = 16 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("request timed out")]
    Timeout,
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("unknown endpoint {0}")]
    UnknownEndpoint(String),
    #[error("unexpected reply type")]
    UnexpectedMessage,
    #[error("frame of {0} bytes exceeds limit")]
    FrameTooLarge(usize),
}

impl From<io::Error> for TransportError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            ErrorKind::TimedOut | ErrorKind::WouldBlock => TransportError::Timeout,
            _ => TransportError::Io(e.to_string()),
        }
    }
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> Result<(), TransportError> {
    if payload.len() > MAX_FRAME_LEN {
        return Err(TransportError::FrameTooLarge(payload.len()));
    }
    w.write_all(&(payload.len() as u32).to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, TransportError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(TransportError::FrameTooLarge(len));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

/// Server-side message dispatch.
pub trait MessageHandler: Send + Sync {
    fn handle_message(&self, msg: Message) -> Message;
}

impl MessageHandler for SimulatedService {
    fn handle_message(&self, msg: Message) -> Message {
        match msg {
            Message::LocalizeRequest(req) => Message::LocalizeResponse(self.handle(&req)),
            _ => Message::LocalizeResponse(LocalizeResponse {
                query_id: String::new(),
                status: Status::Error,
                pose: None,
                confidence: None,
                service_id: self.descriptor().service_id.clone(),
                frame: self.descriptor().frame.clone(),
            }),
        }
    }
}

impl MessageHandler for Registry {
    fn handle_message(&self, msg: Message) -> Message {
        let entries = match msg {
            Message::RegistryQuery(q) => self
                .query(&q)
                .map(|found| found.iter().map(|s| s.entry()).collect())
                .unwrap_or_default(),
            _ => Vec::new(),
        };
        Message::RegistryResult(entries)
    }
}

/// What a client needs from the federation: discovery and localisation.
pub trait Federation: Send + Sync {
    fn discover(&self, q: &RegistryQuery) -> Result<Vec<RegistryEntry>, TransportError>;

    fn localize(
        &self,
        entry: &RegistryEntry,
        req: &LocalizeRequest,
        timeout: Duration,
    ) -> Result<LocalizeResponse, TransportError>;
}

fn expect_response(msg: Message) -> Result<LocalizeResponse, TransportError> {
    match msg {
        Message::LocalizeResponse(r) => Ok(r),
        _ => Err(TransportError::UnexpectedMessage),
    }
}

fn expect_entries(msg: Message) -> Result<Vec<RegistryEntry>, TransportError> {
    match msg {
        Message::RegistryResult(r) => Ok(r),
        _ => Err(TransportError::UnexpectedMessage),
    }
}

/// In-process federation. Messages are still encoded, framed and decoded so
/// that both sides exercise the wire format.
pub struct Loopback {
    registry: Arc<Registry>,
    services: BTreeMap<String, Arc<SimulatedService>>,
    requests: AtomicU64,
}

impl Loopback {
    pub fn new(registry: Arc<Registry>, services: impl IntoIterator<Item = Arc<SimulatedService>>) -> Self {
        Self {
            registry,
            services: services
                .into_iter()
                .map(|s| (s.descriptor().endpoint.clone(), s))
                .collect(),
            requests: AtomicU64::new(0),
        }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn service(&self, endpoint: &str) -> Option<&Arc<SimulatedService>> {
        self.services.get(endpoint)
    }

    pub fn services(&self) -> impl Iterator<Item = &Arc<SimulatedService>> {
        self.services.values()
    }

    /// Localize requests sent through this transport.
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn round_trip(handler: &dyn MessageHandler, msg: &Message) -> Result<Message, TransportError> {
        let mut wire = Vec::new();
        write_frame(&mut wire, &encode(msg))?;
        let inbound = read_frame(&mut wire.as_slice())?.ok_or(TransportError::UnexpectedMessage)?;
        let reply = handler.handle_message(decode(&inbound)?);
        let mut back = Vec::new();
        write_frame(&mut back, &encode(&reply))?;
        let outbound = read_frame(&mut back.as_slice())?.ok_or(TransportError::UnexpectedMessage)?;
        Ok(decode(&outbound)?)
    }
}

impl Federation for Loopback {
    fn discover(&self, q: &RegistryQuery) -> Result<Vec<RegistryEntry>, TransportError> {
        expect_entries(Self::round_trip(
            self.registry.as_ref(),
            &Message::RegistryQuery(q.clone()),
        )?)
    }

    fn localize(
        &self,
        entry: &RegistryEntry,
        req: &LocalizeRequest,
        _timeout: Duration,
    ) -> Result<LocalizeResponse, TransportError> {
        let svc = self
            .services
            .get(&entry.endpoint)
            .ok_or_else(|| TransportError::UnknownEndpoint(entry.endpoint.clone()))?;
        self.requests.fetch_add(1, Ordering::Relaxed);
        expect_response(Self::round_trip(svc.as_ref(), &Message::LocalizeRequest(req.clone()))?)
    }
}

/// Serves one handler on a TCP socket until shut down.
pub struct TcpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl TcpServer {
    pub fn bind(addr: impl ToSocketAddrs, handler: Arc<dyn MessageHandler>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let handler = Arc::clone(&handler);
                std::thread::spawn(move || serve_connection(stream, handler.as_ref()));
            }
        });
        Ok(Self {
            addr,
            stop,
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_thread();
    }

    fn stop_thread(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for TcpServer {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_thread();
        }
    }
}

fn serve_connection(mut stream: TcpStream, handler: &dyn MessageHandler) {
    while let Ok(Some(frame)) = read_frame(&mut stream) {
        let reply = match decode(&frame) {
            Ok(msg) => handler.handle_message(msg),
            Err(_) => break,
        };
        if write_frame(&mut stream, &encode(&reply)).is_err() {
            break;
        }
    }
}

/// Sends one framed message and waits for the reply.
pub fn tcp_call(addr: &str, msg: &Message, timeout: Duration) -> Result<Message, TransportError> {
    let target = addr
        .trim_start_matches("tcp://")
        .to_socket_addrs()
        .map_err(|_| TransportError::UnknownEndpoint(addr.to_string()))?
        .next()
        .ok_or_else(|| TransportError::UnknownEndpoint(addr.to_string()))?;
    let mut stream = TcpStream::connect_timeout(&target, timeout)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    stream.set_nodelay(true)?;
    write_frame(&mut stream, &encode(msg))?;
    let reply = read_frame(&mut stream)?.ok_or(TransportError::UnexpectedMessage)?;
    Ok(decode(&reply)?)
}

/// Federation reached over TCP; endpoints are `host:port` or `tcp://host:port`.
pub struct TcpFederation {
    registry_addr: String,
    discovery_timeout: Duration,
}

impl TcpFederation {
    pub fn new(registry_addr: impl Into<String>) -> Self {
        Self {
            registry_addr: registry_addr.into(),
            discovery_timeout: Duration::from_secs(2),
        }
    }
}

impl Federation for TcpFederation {
    fn discover(&self, q: &RegistryQuery) -> Result<Vec<RegistryEntry>, TransportError> {
        expect_entries(tcp_call(
            &self.registry_addr,
            &Message::RegistryQuery(q.clone()),
            self.discovery_timeout,
        )?)
    }

    fn localize(
        &self,
        entry: &RegistryEntry,
        req: &LocalizeRequest,
        timeout: Duration,
    ) -> Result<LocalizeResponse, TransportError> {
        expect_response(tcp_call(&entry.endpoint, &Message::LocalizeRequest(req.clone()), timeout)?)
    }
}
