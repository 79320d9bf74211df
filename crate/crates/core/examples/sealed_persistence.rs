// Durable sessions across a broker restart. Messages for an offline
// subscriber are queued, sealed to disk under the broker's device key and
// delivered in order when it comes back.

use std::error::Error;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use attested_pubsub::broker::{Broker, BrokerHandle};
use attested_pubsub::client::{handler, Connection};
use attested_pubsub::eventlog::EventLog;
use attested_pubsub::fixtures::{Fixtures, DEFAULT_BROKER_NAME};
use attested_pubsub::handshake::Mode;
use rand::rngs::OsRng;

fn start(f: &Fixtures, store: &std::path::Path) -> Result<BrokerHandle, Box<dyn Error>> {
    let setup =
        Fixtures::with_persistence(f.broker_setup(true, EventLog::disabled()), store, Duration::from_millis(100));
    Ok(Broker::start(setup, "127.0.0.1:0")?)
}

pub fn run() -> Result<(), Box<dyn Error>> {
    let dir = std::env::temp_dir().join(format!("attested-pubsub-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let store = dir.join("broker-store.sealed");
    let f = Fixtures::generate(DEFAULT_BROKER_NAME, &mut OsRng);

    let broker = start(&f, &store)?;
    let mut sub_cfg = f.client_config(&broker.addr().to_string(), "archiver", Mode::Ecdh, true);
    sub_cfg.clean_session = false;
    let sub = Connection::connect(&sub_cfg)?;
    sub.subscribe("audit/#", handler(|_, _| {}))?;
    sub.disconnect()?;

    let publisher = Connection::connect(&f.client_config(&broker.addr().to_string(), "auditor", Mode::Ecdh, true))?;
    for i in 0..5 {
        publisher.publish("audit/events", format!("event {i}").as_bytes())?;
    }
    publisher.disconnect()?;
    while broker.core().queue_len("archiver") < 5 {
        std::thread::sleep(Duration::from_millis(10));
    }
    broker.shutdown();

    let sealed = std::fs::read(&store)?;
    let leaked = sealed.windows(5).any(|w| w == b"event");
    println!("store: {} bytes, plaintext visible: {leaked}", sealed.len());

    let broker = start(&f, &store)?;
    sub_cfg.broker_addr = broker.addr().to_string();
    let got = Arc::new(Mutex::new(Vec::new()));
    let g = got.clone();
    let sub = Connection::connect_with(
        &sub_cfg,
        Some(handler(move |_, p| g.lock().unwrap().push(String::from_utf8_lossy(p).into_owned()))),
    )?;
    println!("session present after restart: {}", sub.info().session_present);
    for _ in 0..500 {
        if got.lock().unwrap().len() == 5 {
            break;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    println!("delivered after restart: {:?}", got.lock().unwrap());
    sub.disconnect()?;
    broker.shutdown();
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
