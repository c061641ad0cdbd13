//! Benchmark CLI: single runs and parameter sweeps over the emulated
//! transport. See the repo README for examples and docs/report-schema.md
//! for the output formats.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rfp::bench::{
    self, sweep, OutputFormat, Paradigm, RunConfig, RunMode, SweepAxis, SweepPoint,
    WorkloadSource,
};
use rfp::rdma::NicProfile;
use rfp::workload::{Distribution, WorkloadSpec};

#[derive(Parser)]
#[command(name = "bench", about = "Key-value benchmark over emulated RDMA", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One experiment: preload, measure, write a report.
    Run(RunArgs),
    /// Several experiments along one axis, sharing the base config.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long, default_value = "rfp")]
    paradigm: Paradigm,
    #[arg(long, default_value_t = 4)]
    server_workers: usize,
    /// Total client threads.
    #[arg(long, default_value_t = 35)]
    clients: usize,
    /// Client NIC groups; threads spread round-robin.
    #[arg(long, default_value_t = 7)]
    client_machines: usize,
    /// Value size in bytes (synthetic workloads).
    #[arg(long, default_value_t = 32)]
    value_size: usize,
    /// Key size in bytes (synthetic workloads).
    #[arg(long, default_value_t = 16)]
    key_size: usize,
    /// GET fraction in [0, 1].
    #[arg(long, default_value_t = 0.95)]
    get_frac: f64,
    /// Key popularity: uniform | zipf:THETA.
    #[arg(long, default_value = "uniform")]
    dist: Distribution,
    /// Remote fetching size in bytes.
    #[arg(long, default_value_t = 36)]
    rfs: usize,
    #[arg(long, default_value_t = 8)]
    ring_depth: usize,
    /// Measured operations.
    #[arg(long, default_value_t = 1_000_000)]
    ops: u64,
    /// Distinct keys, all preloaded before measurement.
    #[arg(long, default_value_t = 1_000_000)]
    keys: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// NIC calibration profile file (see docs/nic-profile.md).
    #[arg(long)]
    nic_profile: Option<PathBuf>,
    /// sim = discrete-event virtual time; live = real threads, no cost model.
    #[arg(long, default_value = "sim")]
    mode: RunMode,
    /// Replay a key<TAB>value trace instead of a synthetic workload.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Report path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// get-fraction | value-size | client-threads | rfs | distribution.
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated points, e.g. `0.05,0.5,0.95` or `uniform,zipf:0.99`.
    #[arg(long)]
    points: String,
}

fn build_config(args: &CommonArgs) -> Result<RunConfig, String> {
    let profile = match &args.nic_profile {
        Some(path) => NicProfile::load(path).map_err(|e| e.to_string())?,
        None => NicProfile::default(),
    };
    let workload = match &args.trace {
        Some(path) => WorkloadSource::Trace {
            path: path.clone(),
            get_fraction: args.get_frac,
            ops: args.ops,
            seed: args.seed,
        },
        None => WorkloadSource::Synthetic(WorkloadSpec {
            key_count: args.keys,
            key_size: args.key_size,
            value_size: args.value_size,
            get_fraction: args.get_frac,
            distribution: args.dist,
            ops: args.ops,
            seed: args.seed,
        }),
    };
    let config = RunConfig {
        paradigm: args.paradigm,
        mode: args.mode,
        server_workers: args.server_workers,
        client_threads: args.clients,
        client_machines: args.client_machines,
        rfs: args.rfs,
        ring_depth: args.ring_depth,
        workload,
        profile,
        ..RunConfig::default()
    };
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("bench: configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Run(msg)) => {
            eprintln!("bench: {msg}");
            ExitCode::FAILURE
        }
    }
}

enum CliError {
    Config(String),
    Run(String),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let config = build_config(&args.common).map_err(CliError::Config)?;
            let report = bench::run(&config).map_err(|e| CliError::Run(e.to_string()))?;
            report
                .write(&args.common.out, args.common.format)
                .map_err(|e| CliError::Run(format!("writing report: {e}")))?;
            println!("{}", report.summary());
            println!("report written to {}", args.common.out.display());
            Ok(())
        }
        Command::Sweep(args) => {
            let config = build_config(&args.common).map_err(CliError::Config)?;
            let axis = args.axis;
            let points: Vec<SweepPoint> = args
                .points
                .split(',')
                .map(|p| SweepPoint::parse(axis, p.trim()).map_err(|e| e.to_string()))
                .collect::<Result<_, _>>()
                .map_err(CliError::Config)?;
            let reports =
                sweep(&config, axis, &points).map_err(|e| CliError::Run(e.to_string()))?;
            bench::write_combined(&reports, &args.common.out, args.common.format)
                .map_err(|e| CliError::Run(format!("writing report: {e}")))?;
            for r in &reports {
                println!("{}", r.summary());
            }
            println!("combined report written to {}", args.common.out.display());
            Ok(())
        }
    }
}
