use serde::{Deserialize, Serialize};

use super::BenchError;

/// Nearest-rank percentile: the value at 1-based rank `ceil(q/100 * n)` of
/// the ascending sort.
pub fn percentile(samples: &[f64], q: f64) -> Result<f64, BenchError> {
    if samples.is_empty() {
        return Err(BenchError::Parameter("percentile of an empty sample list".into()));
    }
    if !(q > 0.0 && q <= 100.0) {
        return Err(BenchError::Parameter(format!("percentile {q} outside (0, 100]")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(nearest_rank(&sorted, q))
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let rank = (q / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// One CSV row: latency summary for one sweep value. Latencies are kept at
/// nanosecond resolution, six decimals in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scenario: String,
    pub param: u32,
    pub samples: u64,
    #[serde(serialize_with = "ms6")]
    pub mean_ms: f64,
    #[serde(serialize_with = "ms6")]
    pub p50_ms: f64,
    #[serde(serialize_with = "ms6")]
    pub p95_ms: f64,
    #[serde(serialize_with = "ms6")]
    pub p99_ms: f64,
    pub loss_count: u64,
}

fn ms6<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:.6}"))
}

fn to_ns(ms: f64) -> f64 {
    (ms * 1e6).round() / 1e6
}

pub const CSV_HEADER: &str = "scenario,param,samples,mean_ms,p50_ms,p95_ms,p99_ms,loss_count";

impl BenchRow {
    /// Summarises latencies in milliseconds. An empty list yields zeros.
    pub fn from_samples(scenario: &str, param: u32, samples_ms: &[f64], loss_count: u64) -> Self {
        let mut sorted = samples_ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (mean, p50, p95, p99) = if sorted.is_empty() {
            (0.0, 0.0, 0.0, 0.0)
        } else {
            (
                sorted.iter().sum::<f64>() / sorted.len() as f64,
                nearest_rank(&sorted, 50.0),
                nearest_rank(&sorted, 95.0),
                nearest_rank(&sorted, 99.0),
            )
        };
        BenchRow {
            scenario: scenario.to_owned(),
            param,
            samples: sorted.len() as u64,
            mean_ms: to_ns(mean),
            p50_ms: to_ns(p50),
            p95_ms: to_ns(p95),
            p99_ms: to_ns(p99),
            loss_count,
        }
    }

    pub fn percentiles_monotone(&self) -> bool {
        self.p50_ms <= self.p95_ms && self.p95_ms <= self.p99_ms
    }
}

pub fn write_csv<W: std::io::Write>(out: W, rows: &[BenchRow]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| BenchError::Io("csv".into(), e))?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<BenchRow>, BenchError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(BenchError::Parameter(format!("unexpected CSV header {header:?}")));
    }
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
