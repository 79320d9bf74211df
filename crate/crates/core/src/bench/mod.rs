//! Desk-scale load generator for the three experiments: connection rate,
//! single-stream throughput and publisher scaling.
//!
//! Latency in every scenario is measured against one monotonic clock shared
//! by the sending and receiving side of this process.

mod scenario;
mod stats;

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

pub use scenario::{
    connect_once, measure_connect_rate, measure_streams, run_scenario, warm_up, BenchTarget, ConnectReport,
    StreamReport, StreamSetup,
};
pub use stats::{percentile, read_csv, write_csv, BenchRow, CSV_HEADER};

use crate::client::ClientError;
use crate::fixtures::FixtureError;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("broker unreachable: {0}")]
    Unreachable(ClientError),
    #[error("client: {0}")]
    Client(#[from] ClientError),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("fixtures: {0}")]
    Fixtures(#[from] FixtureError),
    #[error("broker: {0}")]
    Broker(#[from] crate::broker::BrokerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    ConnectRate,
    Throughput,
    PublisherScaling,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::ConnectRate => "connect_rate",
            ScenarioKind::Throughput => "throughput",
            ScenarioKind::PublisherScaling => "publisher_scaling",
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "connect_rate" => Ok(ScenarioKind::ConnectRate),
            "throughput" => Ok(ScenarioKind::Throughput),
            "publisher_scaling" => Ok(ScenarioKind::PublisherScaling),
            other => Err(format!("unknown scenario {other:?}")),
        }
    }
}

/// Whether bench clients attest and demand attestation of the broker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Plain,
    Attested,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Attested => "attested",
        }
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(Variant::Plain),
            "attested" => Ok(Variant::Attested),
            other => Err(format!("unknown variant {other:?} (expected plain or attested)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub variant: Variant,
    pub mode: crate::handshake::Mode,
    /// Connections per second, messages per second or publisher counts.
    pub sweep: Vec<u32>,
    pub duration: Duration,
    pub payload_bytes: usize,
    pub subscribers: usize,
    pub rate_per_publisher: u32,
}

impl ScenarioSpec {
    pub const DEFAULT_DURATION: Duration = Duration::from_secs(10);
    pub const DEFAULT_PAYLOAD: usize = 16 * 1024;
    pub const DEFAULT_SUBSCRIBERS: usize = 25;
    pub const DEFAULT_RATE_PER_PUBLISHER: u32 = 5;

    pub fn new(
        kind: ScenarioKind,
        variant: Variant,
        mode: crate::handshake::Mode,
        sweep: Vec<u32>,
    ) -> Result<Self, BenchError> {
        let spec = ScenarioSpec {
            kind,
            variant,
            mode,
            sweep,
            duration: Self::DEFAULT_DURATION,
            payload_bytes: Self::DEFAULT_PAYLOAD,
            subscribers: Self::DEFAULT_SUBSCRIBERS,
            rate_per_publisher: Self::DEFAULT_RATE_PER_PUBLISHER,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.sweep.is_empty() {
            return Err(BenchError::Parameter("sweep is empty".into()));
        }
        if self.sweep.contains(&0) || self.sweep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BenchError::Parameter("sweep must be positive and strictly ascending".into()));
        }
        if self.duration.is_zero() || self.rate_per_publisher == 0 || self.subscribers == 0 {
            return Err(BenchError::Parameter("duration, rate and subscriber count must be positive".into()));
        }
        if self.payload_bytes < scenario::HEADER_LEN || self.payload_bytes > crate::broker::packet::MAX_PAYLOAD {
            return Err(BenchError::Parameter(format!("payload of {} bytes out of range", self.payload_bytes)));
        }
        Ok(())
    }
}

/// Parses `5,10,20,40`.
pub fn parse_sweep(s: &str) -> Result<Vec<u32>, String> {
    s.split(',').map(|v| v.trim().parse::<u32>().map_err(|e| format!("{v:?}: {e}"))).collect()
}

/// Writes fixture files for a broker named `broker_name` into `out`.
pub fn keygen_fixtures(out: &std::path::Path, broker_name: &str, force: bool) -> Result<Vec<PathBuf>, BenchError> {
    let f = crate::fixtures::Fixtures::generate(broker_name, &mut rand::rngs::OsRng);
    Ok(f.write(out, force)?)
}
