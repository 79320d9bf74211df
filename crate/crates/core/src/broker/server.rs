//! TCP front end: one reader thread and one writer thread per connection.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Sender, TrySendError};

use super::acl::Acl;
use super::config::BrokerConfig;
use super::core::{BrokerCore, Flow, PacketSink};
use super::packet::PacketAssembler;
use super::store::{store_load, store_save, write_atomic};
use super::BrokerError;
use crate::attestation::{EmulatedTee, ReferenceValueStore};
use crate::crypto::KeyRole;
use crate::eventlog::EventLog;
use crate::handshake::{Clock, ContentType, Credentials, ServerHandshakeConfig, TicketTable};
use crate::keyfile;
use crate::transport::{self, RecordWriter};

/// Packets buffered per subscriber before it counts as a slow consumer.
pub const OUTBOUND_QUEUE: usize = 1024;
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);
const COALESCE_LIMIT: usize = 64 * 1024;

/// Where and how often durable sessions are sealed to disk.
#[derive(Debug, Clone)]
pub struct Persistence {
    pub path: PathBuf,
    pub interval: Duration,
}

/// Everything needed to run a broker, built from a config file or in code.
#[derive(Debug, Clone)]
pub struct BrokerSetup {
    pub handshake: ServerHandshakeConfig,
    pub acl: Acl,
    pub queue_cap: usize,
    pub persistence: Option<Persistence>,
    pub log: EventLog,
}

impl BrokerSetup {
    pub fn from_config(cfg: &BrokerConfig, log: EventLog) -> Result<Self, BrokerError> {
        let kf = |e: keyfile::KeyFileError| BrokerError::Config(e.to_string());
        let cert = keyfile::read_certificate(&cfg.cert).map_err(kf)?;
        let key = keyfile::read_keypair(&cfg.key, KeyRole::Signing).map_err(kf)?;
        if key.public() != cert.public_key {
            return Err(BrokerError::Config("broker key does not match its certificate".into()));
        }
        let tee = match &cfg.tee {
            Some(t) => {
                Some(Arc::new(EmulatedTee::load(&t.device, &t.image).map_err(|e| BrokerError::Config(e.to_string()))?))
            }
            None => None,
        };
        let ref_store = ReferenceValueStore::load(&cfg.reference_values, &cfg.attestation_roots)
            .map_err(|e| BrokerError::Config(e.to_string()))?;
        let handshake = ServerHandshakeConfig {
            credentials: Credentials { cert, key },
            ech_key: keyfile::read_keypair(&cfg.ech_key, KeyRole::KeyAgreement).map_err(kf)?,
            ca_anchor: keyfile::read_key32(&cfg.ca_anchor).map_err(kf)?,
            tee,
            ref_store: Arc::new(ref_store),
            tickets: Arc::new(TicketTable::new()),
            require_peer_attestation: cfg.require_peer_attestation,
            max_age_s: cfg.max_evidence_age_s,
            clock: Clock::System,
        };
        Ok(BrokerSetup {
            handshake,
            acl: Acl::load(&cfg.acl)?,
            queue_cap: cfg.queue_cap_bytes,
            persistence: cfg
                .persistence
                .as_ref()
                .map(|p| Persistence { path: p.path.clone(), interval: Duration::from_millis(p.interval_ms.max(10)) }),
            log,
        })
    }
}

enum Outbound {
    Ticket(Vec<u8>),
    Packet(Arc<Vec<u8>>),
    Close,
}

struct ConnSink {
    tx: Sender<Outbound>,
    stream: TcpStream,
    closed: AtomicBool,
}

impl PacketSink for ConnSink {
    fn send(&self, packet: Arc<Vec<u8>>) -> bool {
        match self.tx.try_send(Outbound::Packet(packet)) {
            Ok(()) | Err(TrySendError::Disconnected(_)) => true,
            Err(TrySendError::Full(_)) => false,
        }
    }

    fn close(&self) {
        if !self.closed.swap(true, Ordering::SeqCst) {
            let _ = self.stream.shutdown(Shutdown::Both);
        }
    }
}

struct Shared {
    core: Arc<BrokerCore>,
    handshake: Arc<ServerHandshakeConfig>,
    log: EventLog,
    stop: AtomicBool,
    conns: Mutex<HashMap<u64, (TcpStream, Option<JoinHandle<()>>)>>,
    next_id: AtomicU64,
}

pub struct Broker;

/// A running broker. Dropping it without [`BrokerHandle::shutdown`] leaves it running.
pub struct BrokerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
    saver: Option<JoinHandle<()>>,
    persistence: Option<(Persistence, Arc<EmulatedTee>)>,
}

impl Broker {
    /// Binds `listen`, restores sealed state if configured and starts serving.
    pub fn start(setup: BrokerSetup, listen: &str) -> Result<BrokerHandle, BrokerError> {
        let log = setup.log.clone();
        let core = Arc::new(BrokerCore::new(setup.acl, setup.queue_cap, log.clone()));
        let persistence = match setup.persistence {
            Some(p) => {
                let tee = setup
                    .handshake
                    .tee
                    .clone()
                    .ok_or_else(|| BrokerError::Config("persistence needs a TEE for the sealing key".into()))?;
                restore(&core, &p, &tee, &log);
                Some((p, tee))
            }
            None => None,
        };
        let listener = TcpListener::bind(listen).map_err(|e| BrokerError::Io(listen.to_owned(), e))?;
        let addr = listener.local_addr().map_err(|e| BrokerError::Io(listen.to_owned(), e))?;
        let shared = Arc::new(Shared {
            core,
            handshake: Arc::new(setup.handshake),
            log: log.clone(),
            stop: AtomicBool::new(false),
            conns: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(0),
        });
        let s = shared.clone();
        let accept = std::thread::Builder::new()
            .name("broker-accept".into())
            .spawn(move || accept_loop(listener, s))
            .map_err(|e| BrokerError::Io("spawn".into(), e))?;
        let saver = persistence.clone().map(|(p, tee)| {
            let s = shared.clone();
            std::thread::spawn(move || save_loop(s, p, tee))
        });
        log.info("listening", &[("addr", &addr)]);
        Ok(BrokerHandle { addr, shared, accept: Some(accept), saver, persistence })
    }

    pub fn from_config_file(path: &std::path::Path, log: EventLog) -> Result<BrokerHandle, BrokerError> {
        let cfg = BrokerConfig::load(path)?;
        let setup = BrokerSetup::from_config(&cfg, log)?;
        Self::start(setup, &cfg.listen)
    }
}

fn restore(core: &BrokerCore, p: &Persistence, tee: &EmulatedTee, log: &EventLog) {
    let bytes = match std::fs::read(&p.path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return,
        Err(e) => {
            log.error("store_load_fail", &[("path", &p.path.display()), ("reason", &e)]);
            return;
        }
    };
    match store_load(tee, &bytes) {
        Ok(sessions) => {
            let queued: usize = sessions.iter().map(|s| s.queue.len()).sum();
            log.info("store_loaded", &[("sessions", &sessions.len()), ("queued", &queued)]);
            core.restore(sessions);
        }
        Err(e) => log.error("store_load_fail", &[("path", &p.path.display()), ("reason", &e)]),
    }
}

fn save_now(core: &BrokerCore, p: &Persistence, tee: &EmulatedTee, log: &EventLog, force: bool) {
    let snapshot = if force { Some(core.durable_sessions()) } else { core.take_dirty_snapshot() };
    let Some(sessions) = snapshot else { return };
    let result = store_save(tee, &sessions).and_then(|bytes| write_atomic(&p.path, &bytes));
    if let Err(e) = result {
        core.mark_dirty();
        log.error("store_save_fail", &[("path", &p.path.display()), ("reason", &e)]);
    }
}

fn save_loop(shared: Arc<Shared>, p: Persistence, tee: Arc<EmulatedTee>) {
    let mut last = Instant::now();
    while !shared.stop.load(Ordering::SeqCst) {
        std::thread::sleep(Duration::from_millis(10).min(p.interval));
        if last.elapsed() >= p.interval {
            save_now(&shared.core, &p, &tee, &shared.log, false);
            last = Instant::now();
        }
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    for stream in listener.incoming() {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let Ok(registered) = stream.try_clone() else { continue };
        let id = shared.next_id.fetch_add(1, Ordering::SeqCst);
        let s = shared.clone();
        let mut conns = shared.conns.lock().expect("conn registry");
        let handle = std::thread::Builder::new().name(format!("broker-conn-{id}")).spawn(move || {
            serve(stream, &s);
            s.conns.lock().expect("conn registry").remove(&id);
        });
        match handle {
            Ok(h) => {
                conns.insert(id, (registered, Some(h)));
            }
            Err(e) => shared.log.error("spawn_fail", &[("reason", &e)]),
        }
    }
}

fn serve(stream: TcpStream, shared: &Shared) {
    let peer_addr = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
    let _ = stream.set_nodelay(true);
    let _ = stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT));
    let (Ok(rs), Ok(ws)) = (stream.try_clone(), stream.try_clone()) else { return };
    let session = match transport::accept(BufReader::new(rs), BufWriter::new(ws), &shared.handshake) {
        Ok(s) => s,
        Err(e) => {
            shared.log.warn("handshake_fail", &[("reason", &e.code()), ("addr", &peer_addr)]);
            return;
        }
    };
    let _ = stream.set_read_timeout(None);
    let complete = &session.complete;
    shared.log.info(
        "handshake_ok",
        &[
            ("peer", &complete.peer.subject),
            ("mode", &complete.keys.mode.as_str()),
            ("attested", &complete.peer.attested()),
            ("addr", &peer_addr),
        ],
    );

    let (tx, rx) = bounded(OUTBOUND_QUEUE);
    let _ = tx.send(Outbound::Ticket(complete.ticket_message()));
    let Ok(sink_stream) = stream.try_clone() else { return };
    let sink = Arc::new(ConnSink { tx: tx.clone(), stream: sink_stream, closed: AtomicBool::new(false) });
    let mut conn = shared.core.open(complete.peer.clone(), sink.clone());
    let mut reader = session.reader;
    let writer = session.writer;
    let writer_thread = std::thread::spawn(move || write_loop(writer, rx));

    let mut assembler = PacketAssembler::new();
    let mut clean = false;
    'conn: loop {
        let (ct, bytes) = match reader.recv() {
            Ok(v) => v,
            Err(_) => break,
        };
        if ct != ContentType::ApplicationData {
            break;
        }
        assembler.push(&bytes);
        loop {
            match assembler.next_packet() {
                Ok(None) => break,
                Ok(Some(p)) => match shared.core.handle_packet(&mut conn, p) {
                    Ok(Flow::Continue) => {}
                    Ok(Flow::Close) => {
                        clean = true;
                        break 'conn;
                    }
                    Err(v) => {
                        shared.log.warn("protocol_violation", &[("peer", &conn.peer.subject), ("reason", &v.0)]);
                        break 'conn;
                    }
                },
                Err(e) => {
                    shared.log.warn("protocol_violation", &[("peer", &conn.peer.subject), ("reason", &e)]);
                    break 'conn;
                }
            }
        }
    }
    shared.core.close(&conn);
    if clean {
        // Flush what is queued (e.g. a refusing CONNACK) before closing.
        let _ = tx.send(Outbound::Close);
    } else {
        sink.close();
        let _ = tx.try_send(Outbound::Close);
    }
    drop(tx);
    let _ = writer_thread.join();
    sink.close();
    shared.log.info("disconnect", &[("peer", &conn.peer.subject), ("client_id", &conn.client_id().unwrap_or(""))]);
}

fn write_loop(mut writer: RecordWriter<BufWriter<TcpStream>>, rx: Receiver<Outbound>) {
    let mut batch = Vec::with_capacity(COALESCE_LIMIT);
    while let Ok(first) = rx.recv() {
        let mut closing = false;
        match first {
            Outbound::Ticket(t) => {
                if writer.send(ContentType::Handshake, &t).is_err() {
                    return;
                }
                continue;
            }
            Outbound::Packet(p) => batch.extend_from_slice(&p),
            Outbound::Close => closing = true,
        }
        // Coalesce whatever is already waiting into as few records as possible.
        while !closing && batch.len() < COALESCE_LIMIT {
            match rx.try_recv() {
                Ok(Outbound::Packet(p)) => batch.extend_from_slice(&p),
                Ok(Outbound::Close) => closing = true,
                Ok(Outbound::Ticket(_)) | Err(_) => break,
            }
        }
        if !batch.is_empty() && writer.send(ContentType::ApplicationData, &batch).is_err() {
            return;
        }
        batch.clear();
        if closing {
            let _ = writer.get_ref().get_ref().shutdown(Shutdown::Write);
            return;
        }
    }
}

impl BrokerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn core(&self) -> &Arc<BrokerCore> {
        &self.shared.core
    }

    pub fn handshake_config(&self) -> &ServerHandshakeConfig {
        &self.shared.handshake
    }

    /// Stops accepting, closes every connection, waits for handlers and
    /// writes a final sealed snapshot.
    pub fn shutdown(mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(a) = self.accept.take() {
            let _ = a.join();
        }
        let handles: Vec<JoinHandle<()>> = {
            let mut conns = self.shared.conns.lock().expect("conn registry");
            conns
                .values_mut()
                .filter_map(|(s, h)| {
                    let _ = s.shutdown(Shutdown::Both);
                    h.take()
                })
                .collect()
        };
        for h in handles {
            let _ = h.join();
        }
        if let Some(s) = self.saver.take() {
            let _ = s.join();
        }
        if let Some((p, tee)) = &self.persistence {
            save_now(&self.shared.core, p, tee, &self.shared.log, true);
        }
        self.shared.log.info("shutdown", &[("addr", &self.addr)]);
    }

    /// Blocks until the accept loop ends (it only ends on shutdown).
    pub fn wait(mut self) {
        if let Some(a) = self.accept.take() {
            let _ = a.join();
        }
    }
}
