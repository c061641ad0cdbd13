//! Parameter sweeps: one run per point along a single axis, sharing the
//! base config (seed included) unless the point overrides it.

use std::str::FromStr;

use crate::workload::Distribution;

use super::config::{ConfigError, Paradigm, RunConfig, WorkloadSource};
use super::report::RunReport;
use super::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    GetFraction,
    ValueSize,
    ClientThreads,
    Rfs,
    Distribution,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::GetFraction => "get-fraction",
            SweepAxis::ValueSize => "value-size",
            SweepAxis::ClientThreads => "client-threads",
            SweepAxis::Rfs => "rfs",
            SweepAxis::Distribution => "distribution",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "get-fraction" => Ok(SweepAxis::GetFraction),
            "value-size" => Ok(SweepAxis::ValueSize),
            "client-threads" => Ok(SweepAxis::ClientThreads),
            "rfs" => Ok(SweepAxis::Rfs),
            "distribution" => Ok(SweepAxis::Distribution),
            other => Err(format!(
                "unknown axis `{other}` (get-fraction | value-size | client-threads | rfs | distribution)"
            )),
        }
    }
}

/// One sweep point, parsed from its CLI string form.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepPoint {
    Number(f64),
    Dist(Distribution),
}

impl SweepPoint {
    pub fn parse(axis: SweepAxis, s: &str) -> Result<SweepPoint, ConfigError> {
        match axis {
            SweepAxis::Distribution => s
                .parse::<Distribution>()
                .map(SweepPoint::Dist)
                .map_err(ConfigError::Invalid),
            _ => s
                .parse::<f64>()
                .map(SweepPoint::Number)
                .map_err(|e| ConfigError::Invalid(format!("bad point `{s}`: {e}"))),
        }
    }
}

/// Apply one point to a copy of the base config.
pub fn apply_point(
    base: &RunConfig,
    axis: SweepAxis,
    point: &SweepPoint,
) -> Result<RunConfig, ConfigError> {
    let mut cfg = base.clone();
    fn synthetic(cfg: &mut RunConfig) -> Result<&mut crate::workload::WorkloadSpec, ConfigError> {
        match &mut cfg.workload {
            WorkloadSource::Synthetic(spec) => Ok(spec),
            WorkloadSource::Trace { .. } => Err(ConfigError::Invalid(
                "this axis requires a synthetic workload".into(),
            )),
        }
    }
    match (axis, point) {
        (SweepAxis::GetFraction, SweepPoint::Number(v)) => match &mut cfg.workload {
            WorkloadSource::Synthetic(spec) => spec.get_fraction = *v,
            WorkloadSource::Trace { get_fraction, .. } => *get_fraction = *v,
        },
        (SweepAxis::ValueSize, SweepPoint::Number(v)) => {
            synthetic(&mut cfg)?.value_size = *v as usize;
        }
        (SweepAxis::ClientThreads, SweepPoint::Number(v)) => {
            cfg.client_threads = *v as usize;
        }
        (SweepAxis::Rfs, SweepPoint::Number(v)) => {
            if cfg.paradigm != Paradigm::Rfp {
                return Err(ConfigError::Invalid(
                    "the rfs axis only applies to the rfp paradigm".into(),
                ));
            }
            cfg.rfs = *v as usize;
        }
        (SweepAxis::Distribution, SweepPoint::Dist(d)) => {
            synthetic(&mut cfg)?.distribution = *d;
        }
        (axis, point) => {
            return Err(ConfigError::Invalid(format!(
                "point {point:?} does not fit axis {axis}"
            )))
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run the base config once per point; reports come back in point order.
pub fn sweep(
    base: &RunConfig,
    axis: SweepAxis,
    points: &[SweepPoint],
) -> Result<Vec<RunReport>, BenchError> {
    if points.is_empty() {
        return Err(BenchError::Config(ConfigError::Invalid(
            "sweep needs at least one point".into(),
        )));
    }
    let configs: Vec<RunConfig> = points
        .iter()
        .map(|p| apply_point(base, axis, p))
        .collect::<Result<_, _>>()?;
    configs.iter().map(super::run).collect()
}
