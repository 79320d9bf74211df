// A broker on a loopback port and two attested clients exchanging messages
// through it, the second one resuming with a ticket.

use std::error::Error;
use std::sync::mpsc;
use std::time::Duration;

use attested_pubsub::broker::Broker;
use attested_pubsub::client::{handler, Connection};
use attested_pubsub::eventlog::EventLog;
use attested_pubsub::fixtures::{Fixtures, DEFAULT_BROKER_NAME};
use attested_pubsub::handshake::Mode;
use rand::rngs::OsRng;

pub fn run() -> Result<(), Box<dyn Error>> {
    let f = Fixtures::generate(DEFAULT_BROKER_NAME, &mut OsRng);
    let broker = Broker::start(f.broker_setup(true, EventLog::disabled()), "127.0.0.1:0")?;
    let addr = broker.addr().to_string();

    let sub = Connection::connect(&f.client_config(&addr, "dashboard", Mode::Ecdh, true))?;
    let (tx, rx) = mpsc::channel();
    let tx = std::sync::Mutex::new(tx);
    let code = sub.subscribe(
        "plant/+/temperature",
        handler(move |topic, payload| {
            let _ = tx.lock().unwrap().send(format!("{topic} = {}", String::from_utf8_lossy(payload)));
        }),
    )?;
    println!("subscribed, SUBACK code {code:#04x}; broker attested: {}", sub.attested_broker());

    let first = Connection::connect(&f.client_config(&addr, "sensor", Mode::Ecdh, true))?;
    first.publish("plant/boiler/temperature", b"81.5")?;
    let ticket = first.ticket().clone();
    first.disconnect()?;

    let mut cfg = f.client_config(&addr, "sensor", Mode::Psk, true);
    cfg.handshake.ticket = Some(ticket);
    let resumed = Connection::connect(&cfg)?;
    println!("resumed in {:?} mode with {} DH operations", resumed.info().mode, resumed.info().ops.dh);
    resumed.publish("plant/chiller/temperature", b"6.2")?;
    resumed.publish("plant/chiller/pressure", b"ignored by the filter")?;

    for _ in 0..2 {
        println!("received {}", rx.recv_timeout(Duration::from_secs(5))?);
    }
    resumed.disconnect()?;
    sub.disconnect()?;
    broker.shutdown();
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
