//! Experiment harness: run configs through the emulated transport under any
//! of the three paradigms, measure IOPS, latency, and round trips, and emit
//! machine-readable reports.

pub mod config;
pub mod histogram;
pub mod live;
pub mod report;
pub mod sim;
pub mod sweep;

use thiserror::Error;

pub use config::{ConfigError, Paradigm, RunConfig, RunMode, WorkloadSource};
pub use histogram::{HistogramError, LatencyHistogram};
pub use report::{
    combined_csv, write_combined, BypassStats, OutputFormat, Percentiles, RunReport, CSV_HEADER,
};
pub use sweep::{sweep, SweepAxis, SweepPoint};

use crate::baselines::bypass::BypassError;
use crate::protocol::frame::FrameError;
use crate::protocol::session::ProtocolError;
use crate::rdma::IssueError;
use crate::store::StoreError;
use crate::workload::WorkloadError;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Transport(#[from] IssueError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Bypass(#[from] BypassError),
    #[error("bypass fetch gave up after {attempts} version-mismatch retries")]
    RetryExhausted { attempts: u32 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("run invariant violated: {0}")]
    Corruption(String),
}

/// Run one experiment end to end: preload, measure, report.
pub fn run(config: &RunConfig) -> Result<RunReport, BenchError> {
    config.validate()?;
    match config.mode {
        RunMode::DiscreteEvent => sim::run_discrete(config),
        RunMode::RealTime => live::run_live(config),
    }
}
