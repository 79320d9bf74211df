// Writes a complete deployment (CA, broker and peer credentials, emulated
// devices, reference values, ACL and config files) and starts a broker
// from it. Pass a directory to keep the output.

use std::error::Error;

use attested_pubsub::broker::{Broker, BrokerConfig, BrokerSetup};
use attested_pubsub::client::{ClientConfig, Connection};
use attested_pubsub::eventlog::EventLog;
use attested_pubsub::fixtures::{Fixtures, DEFAULT_BROKER_NAME};
use rand::rngs::OsRng;

pub fn run() -> Result<(), Box<dyn Error>> {
    run_in(None)
}

fn run_in(keep: Option<String>) -> Result<(), Box<dyn Error>> {
    let dir = match &keep {
        Some(d) => d.into(),
        None => std::env::temp_dir().join(format!("attested-pubsub-keygen-{}", std::process::id())),
    };
    let written = Fixtures::generate(DEFAULT_BROKER_NAME, &mut OsRng).write(&dir, false)?;
    for p in &written {
        println!("wrote {}", p.display());
    }

    let mut cfg = BrokerConfig::load(&dir.join("broker.json"))?;
    cfg.listen = "127.0.0.1:0".into();
    cfg.persistence = None;
    let broker = Broker::start(BrokerSetup::from_config(&cfg, EventLog::disabled())?, &cfg.listen)?;
    let mut client = ClientConfig::load(&dir.join("client.json"))?;
    client.broker_addr = broker.addr().to_string();
    client.ticket_cache = None;
    let conn = Connection::connect(&client)?;
    println!("connected to {} with the generated files", conn.info().broker.subject);
    conn.disconnect()?;
    broker.shutdown();
    if keep.is_none() {
        std::fs::remove_dir_all(&dir)?;
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_in(std::env::args().nth(1))
}
