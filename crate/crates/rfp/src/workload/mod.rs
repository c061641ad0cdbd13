//! Workload generation: synthetic GET/PUT streams over uniform or Zipf key
//! popularity, plus trace replay and the trace-key digest tool.
//!
//! Streams are deterministic functions of their seed: the RNG is a fixed
//! ChaCha stream and samplers draw from it in a fixed order, so the same
//! spec and seed reproduce the same operation sequence everywhere.

pub mod digest;
pub mod trace;
pub mod zipf;

use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use digest::{key_digest, md5, md5_hex};
pub use trace::{load_trace, read_trace, TraceReader, TraceRecord};
pub use zipf::ZipfTable;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {0} is malformed (expected key<TAB>value)")]
    MalformedLine(usize),
    #[error("trace line {line}: value of {len} bytes exceeds the storable bound")]
    ValueTooLarge { line: usize, len: usize },
    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Uniform,
    Zipf { theta: f64 },
}

impl std::fmt::Display for Distribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Distribution::Uniform => write!(f, "uniform"),
            Distribution::Zipf { theta } => write!(f, "zipf:{theta}"),
        }
    }
}

impl FromStr for Distribution {
    type Err = String;

    /// `uniform` or `zipf:THETA`.
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(Distribution::Uniform),
            _ => match s.split_once(':') {
                Some(("zipf", theta)) => {
                    let theta: f64 = theta
                        .parse()
                        .map_err(|e| format!("bad zipf theta `{theta}`: {e}"))?;
                    if theta <= 0.0 {
                        return Err("zipf theta must be positive".into());
                    }
                    Ok(Distribution::Zipf { theta })
                }
                _ => Err(format!("unknown distribution `{s}` (uniform | zipf:THETA)")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub key_count: u64,
    pub key_size: usize,
    pub value_size: usize,
    pub get_fraction: f64,
    pub distribution: Distribution,
    pub ops: u64,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            key_count: 1_000_000,
            key_size: 16,
            value_size: 32,
            get_fraction: 0.95,
            distribution: Distribution::Uniform,
            ops: 1_000_000,
            seed: 1,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.key_count == 0 {
            return Err(WorkloadError::InvalidSpec("key_count must be >= 1".into()));
        }
        if self.key_size == 0 {
            return Err(WorkloadError::InvalidSpec("key_size must be >= 1".into()));
        }
        if self.key_size < 8 && self.key_count > 256u64.saturating_pow(self.key_size as u32) {
            return Err(WorkloadError::InvalidSpec(format!(
                "{} keys do not fit in {}-byte encodings",
                self.key_count, self.key_size
            )));
        }
        if !(0.0..=1.0).contains(&self.get_fraction) {
            return Err(WorkloadError::InvalidSpec(
                "get_fraction must be within [0, 1]".into(),
            ));
        }
        if let Distribution::Zipf { theta } = self.distribution {
            if theta <= 0.0 {
                return Err(WorkloadError::InvalidSpec("zipf theta must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Fixed-width key encoding: the key index in big-endian, right-aligned in
/// a zero-padded field of `key_size` bytes. Only the size of keys matters
/// to the protocol; the encoding just has to be injective.
pub fn encode_key(index: u64, key_size: usize) -> Vec<u8> {
    let mut key = vec![0u8; key_size];
    let be = index.to_be_bytes();
    let n = key_size.min(8);
    key[key_size - n..].copy_from_slice(&be[8 - n..]);
    key
}

/// Deterministic value bytes for PUT number `seq` of key `index`.
pub fn encode_value(index: u64, seq: u64, value_size: usize) -> Vec<u8> {
    let mut value = vec![(index as u8) ^ 0xA5; value_size];
    let stamp = seq.to_le_bytes();
    let n = value_size.min(8);
    value[..n].copy_from_slice(&stamp[..n]);
    value
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Get { key: Vec<u8> },
    Put { key: Vec<u8>, value: Vec<u8> },
}

impl Op {
    pub fn key(&self) -> &[u8] {
        match self {
            Op::Get { key } | Op::Put { key, .. } => key,
        }
    }
}

/// Deterministic operation stream for one client.
pub struct Generator {
    spec: WorkloadSpec,
    rng: ChaCha8Rng,
    zipf: Option<Arc<ZipfTable>>,
    emitted: u64,
    put_seq: u64,
}

impl Generator {
    pub fn new(spec: WorkloadSpec) -> Result<Self, WorkloadError> {
        spec.validate()?;
        let zipf = match spec.distribution {
            Distribution::Uniform => None,
            Distribution::Zipf { theta } => Some(Arc::new(ZipfTable::new(theta, spec.key_count))),
        };
        Ok(Self::with_table(spec, zipf, 0))
    }

    /// Build a stream that shares a (possibly large) Zipf table with other
    /// streams; `stream` distinguishes per-client substreams of one seed.
    pub fn with_table(spec: WorkloadSpec, zipf: Option<Arc<ZipfTable>>, stream: u64) -> Self {
        debug_assert_eq!(
            zipf.is_some(),
            matches!(spec.distribution, Distribution::Zipf { .. })
        );
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&spec.seed.to_le_bytes());
        seed[8..16].copy_from_slice(&stream.to_le_bytes());
        Generator {
            rng: ChaCha8Rng::from_seed(seed),
            spec,
            zipf,
            emitted: 0,
            put_seq: 0,
        }
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    /// Key index draw only, for distribution-level checks.
    pub fn sample_index(&mut self) -> u64 {
        match &self.zipf {
            None => self.rng.random_range(0..self.spec.key_count),
            Some(z) => z.sample(&mut self.rng) - 1,
        }
    }

    /// Next operation, ignoring the configured `ops` budget.
    pub fn next_op(&mut self) -> Op {
        let is_get = self.rng.random::<f64>() < self.spec.get_fraction;
        let index = self.sample_index();
        let key = encode_key(index, self.spec.key_size);
        if is_get {
            Op::Get { key }
        } else {
            self.put_seq += 1;
            Op::Put {
                key,
                value: encode_value(index, self.put_seq, self.spec.value_size),
            }
        }
    }
}

impl Iterator for Generator {
    type Item = Op;

    fn next(&mut self) -> Option<Op> {
        if self.emitted >= self.spec.ops {
            return None;
        }
        self.emitted += 1;
        Some(self.next_op())
    }
}
