// A short benchmark against an in-process broker, printed as CSV: connect
// rate for each handshake variant and a small throughput sweep.

use std::error::Error;
use std::time::Duration;

use attested_pubsub::bench::{run_scenario, write_csv, BenchTarget, ScenarioKind, ScenarioSpec, Variant};
use attested_pubsub::eventlog::EventLog;
use attested_pubsub::handshake::Mode;

pub fn run() -> Result<(), Box<dyn Error>> {
    let (target, broker) = BenchTarget::in_process(EventLog::disabled())?;
    let mut rows = Vec::new();
    for (variant, mode) in
        [(Variant::Plain, Mode::Ecdh), (Variant::Attested, Mode::Ecdh), (Variant::Attested, Mode::Psk)]
    {
        let mut spec = ScenarioSpec::new(ScenarioKind::ConnectRate, variant, mode, vec![5])?;
        spec.duration = Duration::from_secs(1);
        let mut r = run_scenario(&spec, &target)?;
        for row in &mut r {
            row.scenario = format!("{}_{}_{}", row.scenario, variant.as_str(), mode.as_str());
        }
        rows.extend(r);
    }
    let mut spec = ScenarioSpec::new(ScenarioKind::Throughput, Variant::Attested, Mode::Ecdh, vec![50, 100])?;
    spec.duration = Duration::from_secs(1);
    rows.extend(run_scenario(&spec, &target)?);
    broker.shutdown();
    write_csv(std::io::stdout().lock(), &rows)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
