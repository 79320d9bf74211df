//! End-to-end helpers over real TCP.

use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use attested_pubsub::broker::{Broker, BrokerHandle};
use attested_pubsub::client::{handler, Connection, Handler};
use attested_pubsub::eventlog::EventLog;
use attested_pubsub::fixtures::Fixtures;
use attested_pubsub::handshake::Mode;

pub type Inbox = Arc<Mutex<Vec<(String, Vec<u8>)>>>;

pub fn inbox() -> (Inbox, Handler) {
    let inbox: Inbox = Arc::default();
    let i = inbox.clone();
    (inbox, handler(move |t, p| i.lock().unwrap().push((t.to_owned(), p.to_vec()))))
}

pub fn wait_until(limit: Duration, mut cond: impl FnMut() -> bool) -> bool {
    let start = Instant::now();
    while start.elapsed() < limit {
        if cond() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    cond()
}

pub fn start(f: &Fixtures, store: Option<&Path>) -> BrokerHandle {
    let mut setup = f.broker_setup(true, EventLog::disabled());
    if let Some(p) = store {
        setup = Fixtures::with_persistence(setup, p, Duration::from_millis(50));
    }
    Broker::start(setup, "127.0.0.1:0").expect("broker starts")
}

const SENTINEL: &[u8] = b"SENTINEL-7f3a9c";
const TOPIC: &str = "vault/durable-topic-q9";

/// A durable subscriber goes offline, messages queue for it, the broker
/// restarts from its sealed store and the subscriber reconnects. Every
/// message must arrive once, in publish order, and the store file must not
/// contain any payload or topic bytes in the clear.
pub fn check_persistence(f: &Fixtures, dir: &Path, before: usize, after: usize) -> Result<(), String> {
    let store = dir.join("broker-store.sealed");
    let broker = start(f, Some(&store));
    let addr = broker.addr().to_string();
    let mut sub_cfg = f.client_config(&addr, "durable-sub", Mode::Ecdh, true);
    sub_cfg.clean_session = false;
    let sub = Connection::connect(&sub_cfg).map_err(|e| format!("subscriber: {e}"))?;
    let (_, h) = inbox();
    sub.subscribe(&format!("{TOPIC}/#"), h).map_err(|e| e.to_string())?;
    sub.disconnect().map_err(|e| e.to_string())?;
    if !wait_until(Duration::from_secs(5), || !broker.core().is_online("durable-sub")) {
        return Err("subscriber still online after disconnect".into());
    }

    let payload = |i: usize| [SENTINEL, format!("-{i:05}").as_bytes()].concat();
    let publisher = Connection::connect(&f.client_config(&addr, "durable-pub", Mode::Ecdh, true))
        .map_err(|e| format!("publisher: {e}"))?;
    for i in 0..before {
        publisher.publish(&format!("{TOPIC}/m"), &payload(i)).map_err(|e| e.to_string())?;
    }
    publisher.disconnect().map_err(|e| e.to_string())?;
    if !wait_until(Duration::from_secs(10), || broker.core().queue_len("durable-sub") == before) {
        return Err(format!("queued {} of {before}", broker.core().queue_len("durable-sub")));
    }
    broker.shutdown();

    let sealed = std::fs::read(&store).map_err(|e| format!("store missing: {e}"))?;
    for needle in [SENTINEL, TOPIC.as_bytes(), b"durable-sub"] {
        if sealed.windows(needle.len()).any(|w| w == needle) {
            return Err(format!("store contains {:?} in the clear", String::from_utf8_lossy(needle)));
        }
    }

    let broker = start(f, Some(&store));
    let addr = broker.addr().to_string();
    if broker.core().queue_len("durable-sub") != before {
        return Err(format!("restored {} of {before} queued", broker.core().queue_len("durable-sub")));
    }
    let publisher = Connection::connect(&f.client_config(&addr, "durable-pub", Mode::Ecdh, true))
        .map_err(|e| format!("publisher after restart: {e}"))?;
    for i in before..before + after {
        publisher.publish(&format!("{TOPIC}/m"), &payload(i)).map_err(|e| e.to_string())?;
    }
    let total = before + after;
    if !wait_until(Duration::from_secs(10), || broker.core().queue_len("durable-sub") == total) {
        return Err(format!("queued {} of {total} after restart", broker.core().queue_len("durable-sub")));
    }

    sub_cfg.broker_addr = addr;
    let (got, h) = inbox();
    let sub = Connection::connect_with(&sub_cfg, Some(h)).map_err(|e| format!("resume: {e}"))?;
    if !sub.info().session_present {
        return Err("session_present not set on resume".into());
    }
    wait_until(Duration::from_secs(10), || got.lock().unwrap().len() >= total);
    std::thread::sleep(Duration::from_millis(100));
    let got = got.lock().unwrap().clone();
    let want: Vec<Vec<u8>> = (0..total).map(payload).collect();
    let got_payloads: Vec<Vec<u8>> = got.iter().map(|(_, p)| p.clone()).collect();
    let _ = sub.disconnect();
    let _ = publisher.disconnect();
    broker.shutdown();
    if got_payloads != want {
        let first_bad = got_payloads.iter().zip(&want).position(|(a, b)| a != b);
        return Err(format!("received {} of {total}, first divergence at {first_bad:?}", got_payloads.len()));
    }
    Ok(())
}
