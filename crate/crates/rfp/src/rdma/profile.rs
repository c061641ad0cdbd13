//! NIC calibration profile and the per-operation cost model.
//!
//! A NIC serves two very different kinds of traffic. Operations *issued by*
//! the NIC (out-bound) require it to keep per-request state until the remote
//! side acknowledges, so the aggregate rate depends on how many threads are
//! issuing and is not monotonic in that number. Operations *served by* the
//! NIC (in-bound) carry almost no state and drain through a single fast FIFO.
//! The profile captures both sides plus the link bandwidth, and
//! [`NicProfile::service_time`] turns them into deterministic virtual-time
//! costs.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which side of which verb an operation exercises, as seen by the NIC
/// whose cost is being charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceKind {
    InboundRead,
    InboundWrite,
    OutboundRead,
    OutboundWrite,
}

impl ServiceKind {
    pub fn is_inbound(self) -> bool {
        matches!(self, ServiceKind::InboundRead | ServiceKind::InboundWrite)
    }
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("i/o error reading profile: {0}")]
    Io(#[from] std::io::Error),
    #[error("profile line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid profile: {0}")]
    Invalid(String),
}

/// Calibration parameters for one NIC model.
///
/// All rates are aggregate operations per second; bandwidth is bytes per
/// second. `outbound_curve` maps an active-issuer-thread count to the
/// aggregate out-bound rate those threads achieve together. The table is a
/// lookup, not a law: measured curves peak at a few threads and fall off
/// beyond that, and the model preserves whatever shape the table has.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NicProfile {
    /// Aggregate in-bound service rate (ops/s), shared by all remote issuers.
    pub inbound_rate: f64,
    /// `(threads, aggregate ops/s)` points, strictly increasing in threads.
    pub outbound_curve: Vec<(u32, f64)>,
    /// Link bandwidth in bytes/s.
    pub bandwidth: f64,
    /// Largest write payload that may travel inlined in the request.
    pub inline_threshold: usize,
    /// Informative: transfer size beyond which bandwidth, not per-op cost,
    /// dominates. Not used in any computation.
    pub bandwidth_crossover: usize,
    /// Extra cost charged to writes too large to inline (models the DMA
    /// fetch of the payload). Zero by default.
    pub non_inline_write_surcharge_ns: u64,
}

impl Default for NicProfile {
    /// Calibrated for a 40 Gbps adapter: 11.26 Mops/s in-bound, out-bound
    /// peaking at 2.11 Mops/s with four issuer threads and degrading past
    /// that as issuers contend for NIC state.
    fn default() -> Self {
        NicProfile {
            inbound_rate: 11.26e6,
            outbound_curve: vec![
                (1, 0.62e6),
                (2, 1.12e6),
                (4, 2.11e6),
                (8, 1.50e6),
                (16, 0.886e6),
            ],
            bandwidth: 5e9,
            inline_threshold: 256,
            bandwidth_crossover: 1536,
            non_inline_write_surcharge_ns: 0,
        }
    }
}

impl NicProfile {
    /// Aggregate out-bound rate for `issuers` active threads, interpolating
    /// piecewise-linearly between table points and clamping at the extremes.
    pub fn outbound_rate(&self, issuers: u32) -> f64 {
        let curve = &self.outbound_curve;
        let (first, last) = (curve[0], curve[curve.len() - 1]);
        if issuers <= first.0 {
            return first.1;
        }
        if issuers >= last.0 {
            return last.1;
        }
        let hi = curve.partition_point(|&(t, _)| t < issuers);
        let (t1, r1) = curve[hi - 1];
        let (t2, r2) = curve[hi];
        if t1 == issuers {
            return r1;
        }
        let frac = (issuers - t1) as f64 / (t2 - t1) as f64;
        r1 + frac * (r2 - r1)
    }

    /// Best aggregate out-bound rate over the whole curve. This is the rate
    /// the NIC sustains when requests are posted asynchronously instead of
    /// each issuer blocking on its own completion.
    pub fn outbound_peak(&self) -> f64 {
        self.outbound_curve
            .iter()
            .map(|&(_, r)| r)
            .fold(f64::MIN, f64::max)
    }

    /// Virtual-time cost of one operation in nanoseconds.
    ///
    /// The per-op overhead is `issuers / outbound_rate(issuers)` for
    /// out-bound kinds (the latency one blocking issuer observes when
    /// `issuers` threads share the NIC) and `1 / inbound_rate` for in-bound
    /// kinds (one slot of the shared service FIFO). Whichever of that
    /// overhead and the `length / bandwidth` wire time is larger wins.
    pub fn service_time(&self, kind: ServiceKind, length: usize, active_issuers: u32) -> u64 {
        let issuers = active_issuers.max(1);
        let overhead_ns = if kind.is_inbound() {
            1e9 / self.inbound_rate
        } else {
            issuers as f64 * 1e9 / self.outbound_rate(issuers)
        };
        let wire_ns = length as f64 * 1e9 / self.bandwidth;
        (overhead_ns.max(wire_ns).round() as u64).max(1)
    }

    /// Service slot for one op drained from an asynchronously fed out-bound
    /// queue: the NIC runs at its peak aggregate rate.
    pub fn posted_outbound_ns(&self, length: usize) -> u64 {
        let overhead_ns = 1e9 / self.outbound_peak();
        let wire_ns = length as f64 * 1e9 / self.bandwidth;
        (overhead_ns.max(wire_ns).round() as u64).max(1)
    }

    /// One slot of the in-bound FIFO.
    pub fn inbound_ns(&self, length: usize) -> u64 {
        self.service_time(ServiceKind::InboundRead, length, 1)
    }

    fn validate(self) -> Result<Self, ProfileError> {
        if self.outbound_curve.is_empty() {
            return Err(ProfileError::Invalid("outbound_curve is empty".into()));
        }
        if !self.outbound_curve.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err(ProfileError::Invalid(
                "outbound_curve thread counts must be strictly increasing".into(),
            ));
        }
        if self.outbound_curve.iter().any(|&(t, r)| t == 0 || r <= 0.0) {
            return Err(ProfileError::Invalid(
                "outbound_curve entries must have threads >= 1 and rate > 0".into(),
            ));
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.inbound_rate) || !positive(self.bandwidth) {
            return Err(ProfileError::Invalid(
                "inbound_rate and bandwidth must be positive".into(),
            ));
        }
        if self.inbound_rate <= self.outbound_peak() {
            return Err(ProfileError::Invalid(
                "inbound_rate must exceed the outbound curve maximum".into(),
            ));
        }
        Ok(self)
    }

    /// Parse the plain-text key/value profile format:
    ///
    /// ```text
    /// # rates in ops/s, bandwidth in B/s
    /// inbound_rate = 11.26e6
    /// outbound_curve = 1:0.62e6 2:1.12e6 4:2.11e6 8:1.50e6
    /// bandwidth = 5e9
    /// inline_threshold = 256
    /// bandwidth_crossover = 1536
    /// non_inline_write_surcharge_ns = 0
    /// ```
    ///
    /// Blank lines and `#` comments are ignored; curve pairs may be
    /// separated by whitespace or commas. Missing keys keep their defaults.
    pub fn from_config_str(text: &str) -> Result<Self, ProfileError> {
        let mut profile = NicProfile::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ProfileError::Parse {
                line,
                msg: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let parse_f64 = |v: &str| {
                v.parse::<f64>().map_err(|e| ProfileError::Parse {
                    line,
                    msg: format!("bad number `{v}`: {e}"),
                })
            };
            match key {
                "inbound_rate" => profile.inbound_rate = parse_f64(value)?,
                "bandwidth" => profile.bandwidth = parse_f64(value)?,
                "inline_threshold" => {
                    profile.inline_threshold =
                        value.parse().map_err(|e| ProfileError::Parse {
                            line,
                            msg: format!("bad integer `{value}`: {e}"),
                        })?
                }
                "bandwidth_crossover" => {
                    profile.bandwidth_crossover =
                        value.parse().map_err(|e| ProfileError::Parse {
                            line,
                            msg: format!("bad integer `{value}`: {e}"),
                        })?
                }
                "non_inline_write_surcharge_ns" => {
                    profile.non_inline_write_surcharge_ns =
                        value.parse().map_err(|e| ProfileError::Parse {
                            line,
                            msg: format!("bad integer `{value}`: {e}"),
                        })?
                }
                "outbound_curve" => {
                    let mut curve = Vec::new();
                    for pair in value.split(|c: char| c == ',' || c.is_whitespace()) {
                        if pair.is_empty() {
                            continue;
                        }
                        let (t, r) = pair.split_once(':').ok_or_else(|| ProfileError::Parse {
                            line,
                            msg: format!("bad curve pair `{pair}`, expected threads:rate"),
                        })?;
                        let threads = t.parse::<u32>().map_err(|e| ProfileError::Parse {
                            line,
                            msg: format!("bad thread count `{t}`: {e}"),
                        })?;
                        curve.push((threads, parse_f64(r)?));
                    }
                    profile.outbound_curve = curve;
                }
                other => {
                    return Err(ProfileError::Parse {
                        line,
                        msg: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        profile.validate()
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        Self::from_config_str(&std::fs::read_to_string(path)?)
    }

    /// Copy of this profile with every out-bound curve rate multiplied by
    /// `factor`. Used for bottleneck-attribution experiments.
    pub fn with_outbound_scaled(&self, factor: f64) -> Self {
        let mut p = self.clone();
        for (_, r) in &mut p.outbound_curve {
            *r *= factor;
        }
        p
    }
}

impl fmt::Display for NicProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "inbound {:.2} Mops/s, outbound peak {:.2} Mops/s, {:.1} GB/s",
            self.inbound_rate / 1e6,
            self.outbound_peak() / 1e6,
            self.bandwidth / 1e9
        )
    }
}
