//! Publisher/subscriber SDK.
//!
//! [`Connection::connect`] runs the attested handshake, then CONNECT/CONNACK.
//! Inbound messages are dispatched on one reader thread per connection, in
//! arrival order. Writes from any thread are serialized per connection.

mod config;
pub mod ticket_cache;

use std::collections::HashMap;
use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU16, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Sender};
use thiserror::Error;

pub use config::{ClientConfig, ClientConfigFile};

use crate::broker::packet::{self, Connect, Packet, PacketAssembler, PacketError};
use crate::broker::{topic_match, TopicError, TopicFilter, TopicName};
use crate::handshake::{ClientTicket, ContentType, HandshakeError, Mode, OpCounters, PeerIdentity};
use crate::transport::{self, RecordReader, RecordWriter, TransportError};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("handshake failed: {0}")]
    Handshake(HandshakeError),
    #[error("transport: {0}")]
    Transport(TransportError),
    #[error("connect refused by broker (return code {0})")]
    Refused(u8),
    #[error("invalid topic: {0}")]
    Topic(#[from] TopicError),
    #[error("payload of {0} bytes exceeds the limit")]
    PayloadTooLarge(usize),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("timed out waiting for the broker")]
    Timeout,
    #[error("connection closed")]
    Closed,
}

impl ClientError {
    /// The handshake abort reason, when the failure was one.
    pub fn handshake_error(&self) -> Option<&HandshakeError> {
        match self {
            ClientError::Handshake(e) | ClientError::Transport(TransportError::Handshake(e)) => Some(e),
            _ => None,
        }
    }

    /// CONNACK return code 5.
    pub fn is_not_authorized(&self) -> bool {
        matches!(self, ClientError::Refused(packet::RC_NOT_AUTHORIZED))
    }
}

impl From<TransportError> for ClientError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Handshake(h) => ClientError::Handshake(h),
            other => ClientError::Transport(other),
        }
    }
}

impl From<PacketError> for ClientError {
    fn from(e: PacketError) -> Self {
        ClientError::Protocol(e.to_string())
    }
}

/// Callback for delivered messages: `(topic, payload)`.
pub type Handler = Arc<dyn Fn(&str, &[u8]) + Send + Sync>;

/// Wraps a closure as a [`Handler`].
pub fn handler(f: impl Fn(&str, &[u8]) + Send + Sync + 'static) -> Handler {
    Arc::new(f)
}

#[derive(Default)]
struct Shared {
    subs: Mutex<Vec<(TopicFilter, Handler)>>,
    fallback: Mutex<Option<Handler>>,
    acks: Mutex<HashMap<u16, Sender<Packet>>>,
    pings: Mutex<Vec<Sender<Packet>>>,
    closed: AtomicBool,
}

impl Shared {
    fn dispatch(&self, p: Packet) {
        match p {
            Packet::Publish(m) => {
                let h = TopicName::new(&m.topic).ok().and_then(|t| {
                    let subs = self.subs.lock().expect("subs");
                    subs.iter().find(|(f, _)| topic_match(f, &t)).map(|(_, h)| h.clone())
                });
                let h = h.or_else(|| self.fallback.lock().expect("fallback").clone());
                if let Some(h) = h {
                    h(&m.topic, &m.payload);
                }
            }
            Packet::Suback { packet_id, .. } | Packet::Unsuback { packet_id } => {
                if let Some(tx) = self.acks.lock().expect("acks").remove(&packet_id) {
                    let _ = tx.send(p);
                }
            }
            Packet::Pingresp => {
                let mut pings = self.pings.lock().expect("pings");
                if !pings.is_empty() {
                    let _ = pings.remove(0).send(p);
                }
            }
            _ => {}
        }
    }

    fn shut(&self) {
        self.closed.store(true, Ordering::SeqCst);
        self.acks.lock().expect("acks").clear();
        self.pings.lock().expect("pings").clear();
    }
}

/// Facts about how a connection was established.
#[derive(Debug, Clone)]
pub struct ConnectInfo {
    pub mode: Mode,
    /// The broker as authenticated by the handshake.
    pub broker: PeerIdentity,
    pub ops: OpCounters,
    pub session_present: bool,
    /// From TCP connect to CONNACK.
    pub latency: Duration,
}

type Writer = RecordWriter<BufWriter<TcpStream>>;

pub struct Connection {
    writer: Mutex<Writer>,
    stream: TcpStream,
    shared: Arc<Shared>,
    reader: Option<JoinHandle<()>>,
    info: ConnectInfo,
    ticket: ClientTicket,
    next_id: AtomicU16,
    timeout: Duration,
}

impl std::fmt::Debug for Connection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Connection").field("info", &self.info).finish_non_exhaustive()
    }
}

fn resolve_ticket(cfg: &mut ClientConfig) -> Result<(), ClientError> {
    if cfg.handshake.mode != Mode::Psk || cfg.handshake.ticket.is_some() {
        return Ok(());
    }
    let path = cfg
        .ticket_cache
        .as_ref()
        .ok_or_else(|| ClientError::Config("psk mode needs a ticket or a ticket cache".into()))?;
    let ticket = ticket_cache::load(path, cfg.handshake.tee.as_deref())?
        .ok_or_else(|| ClientError::Config(format!("no cached ticket at {}", path.display())))?;
    ticket_cache::discard(path);
    cfg.handshake.ticket = Some(ticket);
    Ok(())
}

impl Connection {
    pub fn connect(cfg: &ClientConfig) -> Result<Connection, ClientError> {
        Self::connect_with(cfg, None)
    }

    /// Like [`Connection::connect`], with a handler for messages that match no
    /// local subscription, such as the backlog of a resumed durable session.
    pub fn connect_with(cfg: &ClientConfig, fallback: Option<Handler>) -> Result<Connection, ClientError> {
        let mut cfg = cfg.clone();
        resolve_ticket(&mut cfg)?;
        let start = Instant::now();
        let addr = cfg
            .broker_addr
            .to_socket_addrs()
            .map_err(|e| ClientError::Config(format!("{}: {e}", cfg.broker_addr)))?
            .next()
            .ok_or_else(|| ClientError::Config(format!("{} resolves to nothing", cfg.broker_addr)))?;
        let io = |e: std::io::Error| ClientError::Transport(TransportError::Io(e));
        let stream = TcpStream::connect_timeout(&addr, cfg.timeout).map_err(io)?;
        stream.set_nodelay(true).map_err(io)?;
        stream.set_read_timeout(Some(cfg.timeout)).map_err(io)?;
        let session = transport::connect(
            BufReader::new(stream.try_clone().map_err(io)?),
            BufWriter::new(stream.try_clone().map_err(io)?),
            &cfg.handshake,
        )?;
        if let Some(path) = &cfg.ticket_cache {
            ticket_cache::store(path, &session.ticket, cfg.handshake.tee.as_deref())?;
        }
        let mut writer = session.writer;
        let mut reader = session.reader;
        let connect = Packet::Connect(Connect {
            client_id: cfg.client_id.clone(),
            clean_session: cfg.clean_session,
            keep_alive: cfg.keep_alive_s,
            will: false,
        });
        writer.send(ContentType::ApplicationData, &connect.encode()).map_err(|e| ClientError::Transport(e.into()))?;

        let mut assembler = PacketAssembler::new();
        let session_present = loop {
            if let Some(p) = assembler.next_packet()? {
                match p {
                    Packet::Connack { return_code: 0, session_present } => break session_present,
                    Packet::Connack { return_code, .. } => return Err(ClientError::Refused(return_code)),
                    other => return Err(ClientError::Protocol(format!("expected CONNACK, got {other:?}"))),
                }
            }
            match reader.recv() {
                Ok((ContentType::ApplicationData, bytes)) => assembler.push(&bytes),
                Ok(_) => return Err(ClientError::Protocol("unexpected record before CONNACK".into())),
                Err(e) => return Err(ClientError::Transport(e.into())),
            }
        };
        let latency = start.elapsed();
        stream.set_read_timeout(None).map_err(io)?;

        let shared = Arc::new(Shared::default());
        *shared.fallback.lock().expect("fallback") = fallback;
        let s = shared.clone();
        let reader = std::thread::Builder::new()
            .name(format!("client-{}", cfg.client_id))
            .spawn(move || read_loop(reader, assembler, s))
            .map_err(io)?;
        let info = ConnectInfo {
            mode: session.finished.keys.mode,
            broker: session.finished.broker.clone(),
            ops: session.finished.ops,
            session_present,
            latency,
        };
        Ok(Connection {
            writer: Mutex::new(writer),
            stream,
            shared,
            reader: Some(reader),
            info,
            ticket: session.ticket,
            next_id: AtomicU16::new(1),
            timeout: cfg.timeout,
        })
    }

    pub fn info(&self) -> &ConnectInfo {
        &self.info
    }

    /// True when the broker's evidence was verified during the handshake.
    pub fn attested_broker(&self) -> bool {
        self.info.broker.attested()
    }

    /// Ticket the broker issued on this connection, for the next resumption.
    pub fn ticket(&self) -> &ClientTicket {
        &self.ticket
    }

    pub fn is_closed(&self) -> bool {
        self.shared.closed.load(Ordering::SeqCst)
    }

    fn send(&self, bytes: &[u8]) -> Result<(), ClientError> {
        if self.is_closed() {
            return Err(ClientError::Closed);
        }
        self.writer.lock().expect("writer").send(ContentType::ApplicationData, bytes).map_err(|_| ClientError::Closed)
    }

    /// Sends a QoS 0 PUBLISH. Returns once the record is handed to the transport.
    pub fn publish(&self, topic: &str, payload: &[u8]) -> Result<(), ClientError> {
        let topic = TopicName::new(topic)?;
        if payload.len() > packet::MAX_PAYLOAD {
            return Err(ClientError::PayloadTooLarge(payload.len()));
        }
        self.send(&packet::encode_publish(topic.as_str(), payload))
    }

    fn packet_id(&self) -> u16 {
        loop {
            let id = self.next_id.fetch_add(1, Ordering::SeqCst);
            if id != 0 {
                return id;
            }
        }
    }

    fn request(&self, packet_id: u16, p: Packet) -> Result<Packet, ClientError> {
        let (tx, rx) = bounded(1);
        self.shared.acks.lock().expect("acks").insert(packet_id, tx);
        self.send(&p.encode())?;
        rx.recv_timeout(self.timeout).map_err(|e| match e {
            crossbeam_channel::RecvTimeoutError::Timeout => ClientError::Timeout,
            crossbeam_channel::RecvTimeoutError::Disconnected => ClientError::Closed,
        })
    }

    /// Subscribes and returns the broker's grant code: `0x00` granted, `0x80`
    /// refused by the ACL. Each delivered PUBLISH invokes exactly one handler:
    /// the one of the earliest local subscription whose filter matches.
    pub fn subscribe(&self, filter: &str, handler: Handler) -> Result<u8, ClientError> {
        let filter = TopicFilter::new(filter)?;
        self.shared.subs.lock().expect("subs").push((filter.clone(), handler.clone()));
        let id = self.packet_id();
        let reply =
            self.request(id, Packet::Subscribe { packet_id: id, filters: vec![(filter.as_str().to_owned(), 0)] });
        let code = match reply {
            Ok(Packet::Suback { codes, .. }) if codes.len() == 1 => codes[0],
            Ok(other) => return Err(ClientError::Protocol(format!("bad SUBACK: {other:?}"))),
            Err(e) => {
                self.remove_handler(&filter, &handler);
                return Err(e);
            }
        };
        if code == packet::SUBACK_FAILURE {
            self.remove_handler(&filter, &handler);
        }
        Ok(code)
    }

    fn remove_handler(&self, filter: &TopicFilter, handler: &Handler) {
        let mut subs = self.shared.subs.lock().expect("subs");
        if let Some(i) = subs.iter().rposition(|(f, h)| f == filter && Arc::ptr_eq(h, handler)) {
            subs.remove(i);
        }
    }

    pub fn unsubscribe(&self, filter: &str) -> Result<(), ClientError> {
        let filter = TopicFilter::new(filter)?;
        let id = self.packet_id();
        self.request(id, Packet::Unsubscribe { packet_id: id, filters: vec![filter.as_str().to_owned()] })?;
        self.shared.subs.lock().expect("subs").retain(|(f, _)| f != &filter);
        Ok(())
    }

    /// Round trip through the broker; returns when PINGRESP arrives.
    pub fn ping(&self) -> Result<Duration, ClientError> {
        let start = Instant::now();
        let (tx, rx) = bounded(1);
        self.shared.pings.lock().expect("pings").push(tx);
        self.send(&Packet::Pingreq.encode())?;
        rx.recv_timeout(self.timeout).map_err(|_| ClientError::Timeout)?;
        Ok(start.elapsed())
    }

    /// Sends DISCONNECT and waits for the broker to finish the stream, so
    /// every message already routed to this session has been dispatched.
    pub fn disconnect(mut self) -> Result<(), ClientError> {
        let r = self.send(&Packet::Disconnect.encode());
        let _ = self.stream.shutdown(Shutdown::Write);
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
        r
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if self.reader.is_some() {
            let _ = self.stream.shutdown(Shutdown::Both);
            if let Some(h) = self.reader.take() {
                let _ = h.join();
            }
        }
    }
}

fn read_loop(mut reader: RecordReader<BufReader<TcpStream>>, mut assembler: PacketAssembler, shared: Arc<Shared>) {
    'outer: loop {
        loop {
            match assembler.next_packet() {
                Ok(Some(p)) => shared.dispatch(p),
                Ok(None) => break,
                Err(_) => break 'outer,
            }
        }
        match reader.recv() {
            Ok((ContentType::ApplicationData, bytes)) => assembler.push(&bytes),
            _ => break,
        }
    }
    shared.shut();
}
