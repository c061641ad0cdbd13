//! Run configuration and validation.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{request_frame_len, OpCode, RESPONSE_HEADER};
use crate::protocol::session::SessionConfig;
use crate::rdma::{NicProfile, ProfileError};
use crate::workload::{WorkloadError, WorkloadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    Rfp,
    ServerReply,
    Bypass,
}

impl std::fmt::Display for Paradigm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Paradigm::Rfp => "rfp",
            Paradigm::ServerReply => "server-reply",
            Paradigm::Bypass => "bypass",
        })
    }
}

impl FromStr for Paradigm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rfp" => Ok(Paradigm::Rfp),
            "server-reply" => Ok(Paradigm::ServerReply),
            "bypass" => Ok(Paradigm::Bypass),
            other => Err(format!("unknown paradigm `{other}` (rfp | server-reply | bypass)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    DiscreteEvent,
    RealTime,
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunMode::DiscreteEvent => "sim",
            RunMode::RealTime => "live",
        })
    }
}

impl FromStr for RunMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sim" => Ok(RunMode::DiscreteEvent),
            "live" => Ok(RunMode::RealTime),
            other => Err(format!("unknown mode `{other}` (sim | live)")),
        }
    }
}

/// Where operations come from: a synthetic spec or a trace file replayed
/// with a configured GET fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadSource {
    Synthetic(WorkloadSpec),
    Trace {
        path: PathBuf,
        get_fraction: f64,
        ops: u64,
        seed: u64,
    },
}

impl WorkloadSource {
    pub fn ops(&self) -> u64 {
        match self {
            WorkloadSource::Synthetic(spec) => spec.ops,
            WorkloadSource::Trace { ops, .. } => *ops,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            WorkloadSource::Synthetic(spec) => spec.seed,
            WorkloadSource::Trace { seed, .. } => *seed,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub paradigm: Paradigm,
    pub mode: RunMode,
    pub server_workers: usize,
    pub client_threads: usize,
    /// Client NIC groups; threads are spread round-robin across them.
    pub client_machines: usize,
    pub rfs: usize,
    pub ring_depth: usize,
    /// Explicit response-slot size; sized from the workload when absent.
    pub slot_capacity: Option<usize>,
    /// Explicit request-buffer size; sized from the workload when absent.
    pub request_capacity: Option<usize>,
    pub workload: WorkloadSource,
    pub profile: NicProfile,
    /// Serial CPU time a worker spends on one request.
    pub worker_process_ns: u64,
    /// Bypass: buckets probed before concluding a key is absent.
    pub probe_depth: usize,
    /// Bypass: version-mismatch retries before giving up on a GET.
    pub max_fetch_attempts: u32,
    /// Per-partition store bound; unbounded by default.
    pub store_capacity_bytes: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paradigm: Paradigm::Rfp,
            mode: RunMode::DiscreteEvent,
            server_workers: 4,
            client_threads: 35,
            client_machines: 7,
            rfs: 36,
            ring_depth: 8,
            slot_capacity: None,
            request_capacity: None,
            workload: WorkloadSource::Synthetic(WorkloadSpec::default()),
            profile: NicProfile::default(),
            worker_process_ns: 100,
            probe_depth: 64,
            max_fetch_attempts: 8,
            store_capacity_bytes: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.server_workers == 0 {
            return Err(ConfigError::Invalid("server_workers must be >= 1".into()));
        }
        if self.client_threads == 0 {
            return Err(ConfigError::Invalid("client_threads must be >= 1".into()));
        }
        if self.client_machines == 0 {
            return Err(ConfigError::Invalid("client_machines must be >= 1".into()));
        }
        if self.rfs < RESPONSE_HEADER + 1 {
            return Err(ConfigError::Invalid(format!(
                "rfs must be at least {}",
                RESPONSE_HEADER + 1
            )));
        }
        if self.ring_depth == 0 {
            return Err(ConfigError::Invalid("ring_depth must be >= 1".into()));
        }
        if self.workload.ops() == 0 {
            return Err(ConfigError::Invalid("measured ops must be >= 1".into()));
        }
        if self.probe_depth == 0 || self.max_fetch_attempts == 0 {
            return Err(ConfigError::Invalid(
                "probe_depth and max_fetch_attempts must be >= 1".into(),
            ));
        }
        match &self.workload {
            WorkloadSource::Synthetic(spec) => spec.validate()?,
            WorkloadSource::Trace { get_fraction, .. } => {
                if !(0.0..=1.0).contains(get_fraction) {
                    return Err(ConfigError::Invalid("get_fraction out of range".into()));
                }
            }
        }
        let session = self.session_config(self.max_value_hint(), self.max_key_hint());
        if self.rfs > session.slot_capacity {
            return Err(ConfigError::Invalid(format!(
                "rfs {} exceeds slot capacity {}",
                self.rfs, session.slot_capacity
            )));
        }
        Ok(())
    }

    fn max_value_hint(&self) -> usize {
        match &self.workload {
            WorkloadSource::Synthetic(spec) => spec.value_size,
            WorkloadSource::Trace { .. } => 1024,
        }
    }

    fn max_key_hint(&self) -> usize {
        match &self.workload {
            WorkloadSource::Synthetic(spec) => spec.key_size,
            WorkloadSource::Trace { .. } => 64,
        }
    }

    /// Buffer sizes for sessions: explicit settings win, otherwise the
    /// classic 1040-byte buffers grown as needed so the configured key and
    /// value sizes actually fit.
    pub fn session_config(&self, max_value: usize, max_key: usize) -> SessionConfig {
        let slot = self
            .slot_capacity
            .unwrap_or_else(|| 1040usize.max(RESPONSE_HEADER + 2 + max_value));
        let request = self
            .request_capacity
            .unwrap_or_else(|| 1040usize.max(request_frame_len(OpCode::Put, max_key, max_value)));
        SessionConfig {
            ring_depth: self.ring_depth,
            slot_capacity: slot,
            request_capacity: request,
            rfs: self.rfs,
        }
    }

    /// NIC group of a client thread.
    pub fn machine_of(&self, client: usize) -> usize {
        client % self.client_machines
    }

    /// Threads sharing one client NIC group.
    pub fn threads_on_machine(&self, machine: usize) -> u32 {
        let c = self.client_threads;
        let m = self.client_machines;
        (c / m + usize::from(machine < c % m)) as u32
    }
}
