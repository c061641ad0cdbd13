//! Per-run reports and their machine-readable emission.
//!
//! `docs/report-schema.md` documents both formats. Emission is a pure
//! function of the report: identical reports produce byte-identical files,
//! and discrete-event runs of one config produce identical reports.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use super::config::{Paradigm, RunConfig, RunMode, WorkloadSource};
use super::histogram::{percentile_of_buckets, HistogramError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Percentiles {
    pub p15_ns: f64,
    pub p50_ns: f64,
    pub p99_ns: f64,
    pub p100_ns: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBucket {
    pub upper_ns: f64,
    pub count: u64,
}

/// Probe accounting for bypass runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BypassStats {
    pub mean_probes_per_get: f64,
    pub version_retries: u64,
}

/// Input statistics for trace-driven runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceStats {
    pub records: u64,
    pub unique_keys: u64,
    pub mean_value_bytes: f64,
    pub max_value_bytes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format `{other}` (csv | json)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub paradigm: Paradigm,
    pub mode: RunMode,
    /// Completed ops per second: virtual time in discrete-event mode,
    /// wall-clock time in real-time mode.
    pub iops: f64,
    /// Measured-phase duration (ns), from the post-preload barrier to the
    /// final measured completion.
    pub duration_ns: u64,
    pub completed_ops: u64,
    pub completed_gets: u64,
    pub completed_puts: u64,
    /// RDMA operations per completed request, all parties included.
    pub mean_round_trips: f64,
    /// `(round_trips, requests)` pairs, ascending.
    pub round_trip_histogram: Vec<(u32, u64)>,
    pub percentiles: Percentiles,
    /// RDMA ops issued by the server NIC over the whole run.
    pub server_nic_ops: u64,
    /// The saturated resource, e.g. `server_inbound_iops`,
    /// `server_outbound_iops`, `server_inbound_bandwidth`,
    /// `client_outbound`, `worker_cpu`; `not_modeled` in real-time mode.
    pub bottleneck: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bypass: Option<BypassStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_stats: Option<TraceStats>,
    pub latency_histogram: Vec<HistogramBucket>,
    pub config: RunConfig,
}

pub const CSV_HEADER: &str = "paradigm,mode,server_workers,client_threads,client_machines,\
key_size,value_size,get_fraction,distribution,rfs,ring_depth,ops,seed,iops,mean_round_trips,\
p15_ns,p50_ns,p99_ns,p100_ns,server_nic_ops,completed_gets,completed_puts,bottleneck";

impl RunReport {
    /// Latency quantile from the embedded histogram.
    pub fn percentile(&self, q: f64) -> Result<f64, HistogramError> {
        let buckets: Vec<(f64, u64)> = self
            .latency_histogram
            .iter()
            .map(|b| (b.upper_ns, b.count))
            .collect();
        percentile_of_buckets(&buckets, q)
    }

    pub fn csv_row(&self) -> String {
        let (key_size, value_size, get_fraction, distribution, ops, seed) = match &self.config
            .workload
        {
            WorkloadSource::Synthetic(s) => (
                s.key_size,
                s.value_size,
                s.get_fraction,
                s.distribution.to_string(),
                s.ops,
                s.seed,
            ),
            WorkloadSource::Trace { get_fraction, ops, seed, .. } => {
                (0, 0, *get_fraction, "trace".to_string(), *ops, *seed)
            }
        };
        let mut row = String::new();
        let _ = write!(
            row,
            "{},{},{},{},{},{},{},{:.6},{},{},{},{},{},{:.3},{:.6},{:.1},{:.1},{:.1},{:.1},{},{},{},{}",
            self.paradigm,
            self.mode,
            self.config.server_workers,
            self.config.client_threads,
            self.config.client_machines,
            key_size,
            value_size,
            get_fraction,
            distribution,
            self.config.rfs,
            self.config.ring_depth,
            ops,
            seed,
            self.iops,
            self.mean_round_trips,
            self.percentiles.p15_ns,
            self.percentiles.p50_ns,
            self.percentiles.p99_ns,
            self.percentiles.p100_ns,
            self.server_nic_ops,
            self.completed_gets,
            self.completed_puts,
            self.bottleneck,
        );
        row
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}\n", self.csv_row())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => self.to_json(),
        }
    }

    pub fn write(&self, path: &Path, format: OutputFormat) -> std::io::Result<()> {
        write_atomically(path, self.render(format).as_bytes())
    }

    /// One-line human summary for the CLI.
    pub fn summary(&self) -> String {
        format!(
            "{} {}: {:.3} Mops/s, mean round trips {:.3}, p50 {:.1} ns, p99 {:.1} ns, \
             server NIC ops {}, bottleneck {}",
            self.paradigm,
            self.mode,
            self.iops / 1e6,
            self.mean_round_trips,
            self.percentiles.p50_ns,
            self.percentiles.p99_ns,
            self.server_nic_ops,
            self.bottleneck
        )
    }
}

/// Combined table for sweeps: one header, one row per run.
pub fn combined_csv(reports: &[RunReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn write_combined(
    reports: &[RunReport],
    path: &Path,
    format: OutputFormat,
) -> std::io::Result<()> {
    let content = match format {
        OutputFormat::Csv => combined_csv(reports),
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(reports).expect("report serialization");
            s.push('\n');
            s
        }
    };
    write_atomically(path, content.as_bytes())
}

/// Write via a temp file and rename, so a failed run never leaves a partial
/// report behind.
fn write_atomically(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
