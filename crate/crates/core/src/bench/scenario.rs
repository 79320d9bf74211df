use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};
use rand::RngCore;

use super::{BenchError, BenchRow, ScenarioKind, ScenarioSpec, Variant};
use crate::broker::{Broker, BrokerHandle};
use crate::client::{handler, ClientConfig, ClientError, ConnectInfo, Connection};
use crate::eventlog::EventLog;
use crate::fixtures::{Fixtures, DEFAULT_BROKER_NAME};
use crate::handshake::{ClientTicket, Mode};

/// Benchmark payloads start with `send_time_ns(u64 BE) || seq(u64 BE)`.
pub(crate) const HEADER_LEN: usize = 16;
const DRAIN_QUIET: Duration = Duration::from_secs(3);

fn epoch() -> Instant {
    static EPOCH: OnceLock<Instant> = OnceLock::new();
    *EPOCH.get_or_init(Instant::now)
}

fn now_ns() -> u64 {
    epoch().elapsed().as_nanos() as u64
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

fn sleep_until(t: Instant) {
    let now = Instant::now();
    if t > now {
        thread::sleep(t - now);
    }
}

const WARM_UP_CONNECTIONS: usize = 20;

fn run_id() -> String {
    format!("{:08x}", rand::rngs::OsRng.next_u32())
}

/// A broker to drive and the client material to reach it.
#[derive(Debug, Clone)]
pub struct BenchTarget {
    /// Template for every bench connection; must carry credentials and a TEE.
    pub base: ClientConfig,
}

impl BenchTarget {
    pub fn new(base: ClientConfig) -> Result<Self, BenchError> {
        if base.handshake.credentials.is_none() || base.handshake.tee.is_none() {
            return Err(BenchError::Parameter("bench client config needs a certificate and a TEE".into()));
        }
        Ok(BenchTarget { base })
    }

    /// From a client config file such as the generated `client.json`.
    pub fn from_client_config(path: &Path, broker_addr: Option<&str>) -> Result<Self, BenchError> {
        let mut base = ClientConfig::load(path)?;
        if let Some(addr) = broker_addr {
            base.broker_addr = addr.to_owned();
        }
        Self::new(base)
    }

    /// Starts a broker on an ephemeral loopback port with fresh fixtures.
    /// Peer attestation is optional there so both variants can connect.
    pub fn in_process(log: EventLog) -> Result<(BenchTarget, BrokerHandle), BenchError> {
        let f = Fixtures::generate(DEFAULT_BROKER_NAME, &mut rand::rngs::OsRng);
        let broker = Broker::start(f.broker_setup(false, log), "127.0.0.1:0")?;
        let base = f.client_config(&broker.addr().to_string(), "bench", Mode::Ecdh, true);
        Ok((BenchTarget::new(base)?, broker))
    }

    pub fn client(&self, variant: Variant, mode: Mode, client_id: &str, ticket: Option<ClientTicket>) -> ClientConfig {
        let mut cfg = self.base.clone();
        cfg.ticket_cache = None;
        cfg.client_id = client_id.to_owned();
        cfg.clean_session = true;
        cfg.handshake.mode = mode;
        cfg.handshake.ticket = ticket;
        if variant == Variant::Plain {
            cfg.handshake.att_required = false;
            cfg.handshake.tee = None;
        } else {
            cfg.handshake.att_required = true;
        }
        cfg
    }

    /// Opens a connection in `mode`, first fetching a ticket over ECDH when
    /// `mode` is PSK.
    pub fn open(&self, variant: Variant, mode: Mode, client_id: &str) -> Result<Connection, ClientError> {
        let ticket = match mode {
            Mode::Ecdh => None,
            Mode::Psk => Some(connect_once(self, variant, Mode::Ecdh, client_id, None)?.1),
        };
        Connection::connect(&self.client(variant, mode, client_id, ticket))
    }
}

/// One connect/CONNACK/disconnect cycle. Returns the connection facts and
/// the ticket issued for the next resumption.
pub fn connect_once(
    target: &BenchTarget,
    variant: Variant,
    mode: Mode,
    client_id: &str,
    ticket: Option<ClientTicket>,
) -> Result<(ConnectInfo, ClientTicket), ClientError> {
    let conn = Connection::connect(&target.client(variant, mode, client_id, ticket))?;
    let out = (conn.info().clone(), conn.ticket().clone());
    conn.disconnect()?;
    Ok(out)
}

/// Unmeasured connections that fault in code paths, thread stacks and
/// allocator pools so the first sweep point is not charged for them.
pub fn warm_up(target: &BenchTarget, variant: Variant, mode: Mode, connections: usize) -> Result<(), BenchError> {
    let id = run_id();
    let mut ticket = None;
    for i in 0..connections {
        let m = if ticket.is_some() { mode } else { Mode::Ecdh };
        let (_, next) = connect_once(target, variant, m, &format!("bench-{id}-warm-{i}"), ticket.take())
            .map_err(BenchError::Unreachable)?;
        ticket = (mode == Mode::Psk).then_some(next);
    }
    Ok(())
}

/// Latencies of `rate` fresh connections per second for `duration`.
#[derive(Debug, Clone, Default)]
pub struct ConnectReport {
    pub latencies_ms: Vec<f64>,
    pub failures: u64,
}

pub fn measure_connect_rate(
    target: &BenchTarget,
    variant: Variant,
    mode: Mode,
    rate: u32,
    duration: Duration,
) -> Result<ConnectReport, BenchError> {
    let total = (rate as f64 * duration.as_secs_f64()).round() as u64;
    let id = run_id();
    // Resumption consumes a ticket and yields the next one, so a pool of
    // single-use tickets a little larger than the rate keeps every slot fed.
    let (pool_tx, pool_rx) = unbounded::<ClientTicket>();
    if mode == Mode::Psk {
        for i in 0..rate as usize + 2 {
            let (_, t) = connect_once(target, variant, Mode::Ecdh, &format!("bench-{id}-seed-{i}"), None)
                .map_err(BenchError::Unreachable)?;
            pool_tx.send(t).expect("pool open");
        }
    }

    let (tx, rx) = unbounded::<Result<f64, ClientError>>();
    let start = Instant::now() + Duration::from_millis(20);
    let mut workers = Vec::with_capacity(total as usize);
    for i in 0..total {
        sleep_until(start + Duration::from_secs_f64(i as f64 / rate as f64));
        let (target, tx, pool_tx, pool_rx) = (target.clone(), tx.clone(), pool_tx.clone(), pool_rx.clone());
        let client_id = format!("bench-{id}-{i}");
        workers.push(thread::spawn(move || {
            let ticket = match mode {
                Mode::Ecdh => None,
                Mode::Psk => match pool_rx.recv_timeout(Duration::from_secs(10)) {
                    Ok(t) => Some(t),
                    Err(_) => {
                        let _ = tx.send(Err(ClientError::Timeout));
                        return;
                    }
                },
            };
            let r = connect_once(&target, variant, mode, &client_id, ticket).map(|(info, next)| {
                if mode == Mode::Psk {
                    let _ = pool_tx.send(next);
                }
                ms(info.latency)
            });
            let _ = tx.send(r);
        }));
    }
    drop(tx);
    for w in workers {
        let _ = w.join();
    }
    let mut report = ConnectReport::default();
    for r in rx {
        match r {
            Ok(l) => report.latencies_ms.push(l),
            Err(_) => report.failures += 1,
        }
    }
    Ok(report)
}

/// Publishers and subscribers on one broker. Every subscriber uses the same
/// wildcard filter, so each message is delivered `subscribers` times.
#[derive(Debug, Clone)]
pub struct StreamSetup {
    pub variant: Variant,
    pub mode: Mode,
    pub publishers: usize,
    pub subscribers: usize,
    pub rate_per_publisher: u32,
    pub duration: Duration,
    pub payload_bytes: usize,
}

#[derive(Debug, Clone, Default)]
pub struct StreamReport {
    pub sent: u64,
    pub received: u64,
    /// One sample per delivery, publish call to handler.
    pub latencies_ms: Vec<f64>,
    /// Deliveries that arrived with a sequence number not above the previous
    /// one from the same publisher at the same subscriber.
    pub reordered: u64,
}

impl StreamReport {
    pub fn expected(&self, subscribers: usize) -> u64 {
        self.sent * subscribers as u64
    }

    pub fn loss(&self, subscribers: usize) -> u64 {
        self.expected(subscribers).saturating_sub(self.received)
    }
}

struct Delivery {
    subscriber: usize,
    publisher: usize,
    seq: u64,
    latency_ns: u64,
}

pub fn measure_streams(target: &BenchTarget, setup: &StreamSetup) -> Result<StreamReport, BenchError> {
    let id = run_id();
    let prefix = format!("bench/{id}");
    let (tx, rx): (Sender<Delivery>, Receiver<Delivery>) = unbounded();

    let mut subs = Vec::with_capacity(setup.subscribers);
    for s in 0..setup.subscribers {
        let conn = target.open(setup.variant, setup.mode, &format!("bench-{id}-sub-{s}"))?;
        let tx = tx.clone();
        let h = handler(move |topic, payload| {
            let now = now_ns();
            let Some(publisher) = topic.rsplit('/').next().and_then(|p| p.parse().ok()) else { return };
            if payload.len() < HEADER_LEN {
                return;
            }
            let sent = u64::from_be_bytes(payload[..8].try_into().expect("8 bytes"));
            let seq = u64::from_be_bytes(payload[8..16].try_into().expect("8 bytes"));
            let _ = tx.send(Delivery { subscriber: s, publisher, seq, latency_ns: now.saturating_sub(sent) });
        });
        let code = conn.subscribe(&format!("{prefix}/+"), h)?;
        if code != 0 {
            return Err(BenchError::Parameter(format!("subscription refused by the broker (code {code:#04x})")));
        }
        subs.push(conn);
    }
    drop(tx);

    let mut pubs = Vec::with_capacity(setup.publishers);
    for p in 0..setup.publishers {
        pubs.push(target.open(setup.variant, setup.mode, &format!("bench-{id}-pub-{p}"))?);
    }

    let per_pub = (setup.rate_per_publisher as f64 * setup.duration.as_secs_f64()).round() as u64;
    let interval = Duration::from_secs_f64(1.0 / setup.rate_per_publisher as f64);
    let stagger = interval / setup.publishers.max(1) as u32;
    let start = Instant::now() + Duration::from_millis(50);
    let workers: Vec<_> = pubs
        .into_iter()
        .enumerate()
        .map(|(p, conn)| {
            let topic = format!("{prefix}/{p}");
            let mut payload = vec![0u8; setup.payload_bytes];
            rand::rngs::OsRng.fill_bytes(&mut payload);
            let first = start + stagger * p as u32;
            thread::spawn(move || {
                let mut sent = 0u64;
                for seq in 0..per_pub {
                    sleep_until(first + interval * seq as u32);
                    payload[..8].copy_from_slice(&now_ns().to_be_bytes());
                    payload[8..16].copy_from_slice(&seq.to_be_bytes());
                    if conn.publish(&topic, &payload).is_err() {
                        break;
                    }
                    sent += 1;
                }
                let _ = conn.disconnect();
                sent
            })
        })
        .collect();
    let sent: u64 = workers.into_iter().map(|w| w.join().unwrap_or(0)).sum();

    let expected = sent * setup.subscribers as u64;
    let mut report = StreamReport { sent, ..Default::default() };
    let mut last: HashMap<(usize, usize), u64> = HashMap::new();
    while report.received < expected {
        let Ok(d) = rx.recv_timeout(DRAIN_QUIET) else { break };
        report.received += 1;
        report.latencies_ms.push(d.latency_ns as f64 / 1e6);
        if let Some(prev) = last.insert((d.subscriber, d.publisher), d.seq) {
            if d.seq <= prev {
                report.reordered += 1;
            }
        }
    }
    for s in subs {
        let _ = s.disconnect();
    }
    Ok(report)
}

/// Runs every sweep point of `spec` against `target`, one row per point.
pub fn run_scenario(spec: &ScenarioSpec, target: &BenchTarget) -> Result<Vec<BenchRow>, BenchError> {
    spec.validate()?;
    connect_once(target, spec.variant, Mode::Ecdh, &format!("bench-{}-probe", run_id()), None)
        .map_err(BenchError::Unreachable)?;
    if spec.kind == ScenarioKind::ConnectRate {
        warm_up(target, spec.variant, spec.mode, WARM_UP_CONNECTIONS)?;
    }
    let name = spec.kind.as_str();
    let mut rows = Vec::with_capacity(spec.sweep.len());
    for &n in &spec.sweep {
        let row = match spec.kind {
            ScenarioKind::ConnectRate => {
                let r = measure_connect_rate(target, spec.variant, spec.mode, n, spec.duration)?;
                BenchRow::from_samples(name, n, &r.latencies_ms, r.failures)
            }
            ScenarioKind::Throughput | ScenarioKind::PublisherScaling => {
                let (publishers, subscribers, rate) = match spec.kind {
                    ScenarioKind::Throughput => (1, 1, n),
                    _ => (n as usize, spec.subscribers, spec.rate_per_publisher),
                };
                let setup = StreamSetup {
                    variant: spec.variant,
                    mode: spec.mode,
                    publishers,
                    subscribers,
                    rate_per_publisher: rate,
                    duration: spec.duration,
                    payload_bytes: spec.payload_bytes,
                };
                let r = measure_streams(target, &setup)?;
                BenchRow::from_samples(name, n, &r.latencies_ms, r.loss(subscribers))
            }
        };
        rows.push(row);
    }
    Ok(rows)
}
