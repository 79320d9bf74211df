//! `attested-pubsub`: broker daemon, benchmark runner and the `apub` / `asub`
//! command-line clients. Invoked through a symlink named after a subcommand
//! (`broker`, `bench`, `apub`, `asub`), it behaves as that subcommand.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::RngCore;

use attested_pubsub::bench::{
    keygen_fixtures, parse_sweep, run_scenario, write_csv, BenchRow, BenchTarget, ScenarioKind, ScenarioSpec, Variant,
};
use attested_pubsub::broker::Broker;
use attested_pubsub::client::{handler, ClientConfig, Connection};
use attested_pubsub::eventlog::{EventLog, Level};
use attested_pubsub::fixtures::DEFAULT_BROKER_NAME;
use attested_pubsub::handshake::Mode;

const SUBCOMMANDS: [&str; 4] = ["broker", "bench", "apub", "asub"];
/// Exit status when a benchmark lost messages or connections.
const EXIT_LOSS: u8 = 3;

#[derive(Parser)]
#[command(name = "attested-pubsub", version, about = "Mutually attested publish/subscribe")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the broker until interrupted.
    Broker {
        #[arg(long)]
        config: PathBuf,
        /// Also log DEBUG records.
        #[arg(long)]
        verbose: bool,
    },
    /// Generate fixtures or run a benchmark scenario.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Publish messages.
    Apub(PubArgs),
    /// Subscribe and print messages.
    Asub(SubArgs),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Write a CA, broker certificate, ECH key, emulated devices, reference
    /// values, ACLs and config files.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(long, default_value = DEFAULT_BROKER_NAME)]
        broker_name: String,
    },
    /// Run one scenario over a sweep and write CSV rows.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: ScenarioKind,
    #[arg(long, default_value = "attested")]
    variant: Variant,
    #[arg(long, default_value = "ecdh")]
    mode: Mode,
    /// Comma-separated, ascending: conn/s, msg/s or publisher counts.
    #[arg(long, value_parser = parse_sweep)]
    sweep: std::vec::Vec<u32>,
    /// Output file; rows go to stdout when omitted.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    duration_s: u64,
    #[arg(long, default_value_t = ScenarioSpec::DEFAULT_PAYLOAD)]
    payload_bytes: usize,
    #[arg(long, default_value_t = ScenarioSpec::DEFAULT_SUBSCRIBERS)]
    subscribers: usize,
    #[arg(long, default_value_t = ScenarioSpec::DEFAULT_RATE_PER_PUBLISHER)]
    rate_per_publisher: u32,
    /// Client config for an external broker. Without it an in-process
    /// broker with fresh fixtures is used.
    #[arg(long)]
    client_config: Option<PathBuf>,
    /// Overrides the broker address of --client-config.
    #[arg(long, requires = "client_config")]
    broker: Option<String>,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("payload").required(true))]
struct PubArgs {
    #[arg(long)]
    config: PathBuf,
    /// Defaults to the config's client id with a `-pub` suffix.
    #[arg(long)]
    client_id: Option<String>,
    #[arg(long)]
    topic: String,
    #[arg(long, group = "payload")]
    payload_file: Option<PathBuf>,
    /// Random payload of this size, starting with a send-time and sequence header.
    #[arg(long, group = "payload")]
    payload_size: Option<usize>,
    #[arg(long, default_value_t = 1)]
    count: u64,
    /// Messages per second; 0 sends as fast as possible.
    #[arg(long, default_value_t = 0.0)]
    rate: f64,
    /// Print the connect latency and the time spent publishing.
    #[arg(long)]
    print_latency: bool,
}

#[derive(Args)]
struct SubArgs {
    #[arg(long)]
    config: PathBuf,
    /// Defaults to the config's client id with a `-sub` suffix.
    #[arg(long)]
    client_id: Option<String>,
    #[arg(long)]
    filter: String,
    /// Exit after this many messages; 0 runs until interrupted.
    #[arg(long, default_value_t = 0)]
    count: u64,
    /// Print per-message latency from the header written by `apub --payload-size`.
    #[arg(long)]
    print_latency: bool,
}

fn unix_ns() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0)
}

/// Rewrites `argv` so `apub --topic x` behaves like `attested-pubsub apub --topic x`.
fn multicall_args() -> Vec<String> {
    let mut args: Vec<String> = std::env::args().collect();
    let invoked =
        args.first().and_then(|a| Path::new(a).file_stem()).and_then(|s| s.to_str()).unwrap_or_default().to_owned();
    if SUBCOMMANDS.contains(&invoked.as_str()) {
        args.insert(1, invoked);
    }
    args
}

fn main() -> ExitCode {
    let cli = Cli::parse_from(multicall_args());
    let result = match cli.command {
        Command::Broker { config, verbose } => run_broker(&config, verbose),
        Command::Bench { command: BenchCommand::Keygen { out, force, broker_name } } => {
            keygen_fixtures(&out, &broker_name, force).map_err(|e| e.to_string()).map(|files| {
                for f in files {
                    println!("{}", f.display());
                }
                ExitCode::SUCCESS
            })
        }
        Command::Bench { command: BenchCommand::Run(args) } => run_bench(args),
        Command::Apub(args) => run_pub(args),
        Command::Asub(args) => run_sub(args),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })
}

fn run_broker(config: &Path, verbose: bool) -> Result<ExitCode, String> {
    let log = EventLog::stderr().with_min_level(if verbose { Level::Debug } else { Level::Info });
    let handle = Broker::from_config_file(config, log).map_err(|e| e.to_string())?;
    let (tx, rx) = crossbeam_channel::bounded(1);
    ctrlc::set_handler(move || {
        let _ = tx.try_send(());
    })
    .map_err(|e| e.to_string())?;
    let _ = rx.recv();
    handle.shutdown();
    Ok(ExitCode::SUCCESS)
}

fn run_bench(a: RunArgs) -> Result<ExitCode, String> {
    let spec = ScenarioSpec {
        kind: a.scenario,
        variant: a.variant,
        mode: a.mode,
        sweep: a.sweep,
        duration: Duration::from_secs(a.duration_s),
        payload_bytes: a.payload_bytes,
        subscribers: a.subscribers,
        rate_per_publisher: a.rate_per_publisher,
    };
    spec.validate().map_err(|e| e.to_string())?;
    let (target, broker) = match &a.client_config {
        Some(path) => (BenchTarget::from_client_config(path, a.broker.as_deref()).map_err(|e| e.to_string())?, None),
        None => {
            let (t, b) = BenchTarget::in_process(EventLog::disabled()).map_err(|e| e.to_string())?;
            (t, Some(b))
        }
    };
    let rows = run_scenario(&spec, &target);
    if let Some(b) = broker {
        b.shutdown();
    }
    let rows = rows.map_err(|e| e.to_string())?;
    for r in &rows {
        eprintln!(
            "{} {}={} samples={} mean={:.3}ms p50={:.3}ms p95={:.3}ms p99={:.3}ms loss={}",
            r.scenario,
            sweep_unit(spec.kind),
            r.param,
            r.samples,
            r.mean_ms,
            r.p50_ms,
            r.p95_ms,
            r.p99_ms,
            r.loss_count
        );
    }
    match &a.csv {
        Some(path) => {
            let f = std::fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
            write_csv(f, &rows).map_err(|e| e.to_string())?;
        }
        None => write_csv(std::io::stdout().lock(), &rows).map_err(|e| e.to_string())?,
    }
    let loss: u64 = rows.iter().map(|r: &BenchRow| r.loss_count).sum();
    Ok(if loss == 0 { ExitCode::SUCCESS } else { ExitCode::from(EXIT_LOSS) })
}

fn sweep_unit(kind: ScenarioKind) -> &'static str {
    match kind {
        ScenarioKind::ConnectRate => "conn_per_s",
        ScenarioKind::Throughput => "msg_per_s",
        ScenarioKind::PublisherScaling => "publishers",
    }
}

fn connect(config: &Path, client_id: Option<String>, role: &str) -> Result<Connection, String> {
    let mut cfg = ClientConfig::load(config).map_err(|e| e.to_string())?;
    cfg.client_id = client_id.unwrap_or_else(|| format!("{}-{role}", cfg.client_id));
    Connection::connect(&cfg).map_err(|e| e.to_string())
}

fn run_pub(a: PubArgs) -> Result<ExitCode, String> {
    let mut payload = match (&a.payload_file, a.payload_size) {
        (Some(p), _) => std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))?,
        (None, Some(n)) if n >= 16 => {
            let mut v = vec![0u8; n];
            rand::rngs::OsRng.fill_bytes(&mut v);
            v
        }
        _ => return Err("--payload-size must be at least 16 bytes to hold the timing header".into()),
    };
    let conn = connect(&a.config, a.client_id.clone(), "pub")?;
    if a.print_latency {
        println!("connect_ms={:.3} mode={}", conn.info().latency.as_secs_f64() * 1000.0, conn.info().mode.as_str());
    }
    let start = Instant::now();
    for seq in 0..a.count {
        if a.rate > 0.0 {
            let due = start + Duration::from_secs_f64(seq as f64 / a.rate);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        if a.payload_size.is_some() {
            payload[..8].copy_from_slice(&unix_ns().to_be_bytes());
            payload[8..16].copy_from_slice(&seq.to_be_bytes());
        }
        conn.publish(&a.topic, &payload).map_err(|e| e.to_string())?;
    }
    if a.print_latency {
        println!("published={} elapsed_ms={:.3}", a.count, start.elapsed().as_secs_f64() * 1000.0);
    }
    conn.disconnect().map_err(|e| e.to_string())?;
    Ok(ExitCode::SUCCESS)
}

fn run_sub(a: SubArgs) -> Result<ExitCode, String> {
    let conn = connect(&a.config, a.client_id.clone(), "sub")?;
    let (tx, rx) = crossbeam_channel::unbounded::<(String, Vec<u8>, u64)>();
    let code = conn
        .subscribe(
            &a.filter,
            handler(move |topic, payload| {
                let _ = tx.send((topic.to_owned(), payload.to_vec(), unix_ns()));
            }),
        )
        .map_err(|e| e.to_string())?;
    if code != 0 {
        return Err(format!("subscription to {} refused (code {code:#04x})", a.filter));
    }
    let mut out = std::io::stdout().lock();
    let mut seen = 0u64;
    while a.count == 0 || seen < a.count {
        let Ok((topic, payload, at)) = rx.recv() else { break };
        seen += 1;
        let line = if a.print_latency && payload.len() >= 16 {
            let sent = u64::from_be_bytes(payload[..8].try_into().expect("8 bytes"));
            let seq = u64::from_be_bytes(payload[8..16].try_into().expect("8 bytes"));
            format!("{topic} seq={seq} latency_ms={:.3}", at.saturating_sub(sent) as f64 / 1e6)
        } else {
            match std::str::from_utf8(&payload) {
                Ok(s) if !s.contains(char::is_control) => format!("{topic} {s}"),
                _ => format!("{topic} <{} bytes>", payload.len()),
            }
        };
        if writeln!(out, "{line}").and_then(|_| out.flush()).is_err() {
            break;
        }
    }
    conn.disconnect().map_err(|e| e.to_string())?;
    Ok(ExitCode::SUCCESS)
}
