//! `h2s`: simulate, ingest, sample (full or two-stage) and compare.
//!
//! Exit codes: 0 success, 2 usage, 3 input or format error, 4 numerical
//! failure. `H2S_SEED` overrides a seed from `--config` but not `--seed`.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use h2s_core::H2sError;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "h2s", version, about = "Two-stage parallel MCMC for nested hierarchical models")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset and its true parameters.
    Simulate(SimulateArgs),
    /// Validate a dataset CSV and print its summary.
    Ingest(IngestArgs),
    /// Full-data Gibbs sampler (the reference chain).
    Full(FullArgs),
    /// Stage 1: per-group sample banks, one worker per group.
    Stage1(Stage1Args),
    /// Stage 2: rebuild the full posterior from the banks alone.
    Stage2(Stage2Args),
    /// Compare a two-stage chain with a reference chain.
    Compare(CompareArgs),
    /// Dump a bank file as CSV.
    BankExport(BankExportArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct SimulateArgs {
    /// Model depth, 3 or 4.
    #[arg(long, default_value_t = 3)]
    pub depth: u8,
    #[arg(long)]
    pub groups: usize,
    /// Observations per group (depth 3).
    #[arg(long, default_value_t = 2000)]
    pub per_group: usize,
    /// Cells per group (depth 4).
    #[arg(long, default_value_t = 7)]
    pub cells: usize,
    /// Observations per cell (depth 4).
    #[arg(long, default_value_t = 500)]
    pub per_cell: usize,
    #[arg(long, default_value_t = 25.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.5)]
    pub tau2: f64,
    #[arg(long, default_value_t = 10.0)]
    pub sigma2_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2_var: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[serde(skip)]
    #[arg(long, default_value = "h2s-sim")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct IngestArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Expected depth; inferred from the header when omitted.
    #[arg(long)]
    pub depth: Option<u8>,
    /// Also write the validated dataset (sorted by group and cell) here.
    #[serde(skip)]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Model options shared by the samplers.
#[derive(Args, Debug, Clone, Serialize)]
pub struct ModelArgs {
    /// Model depth; inferred from the data or banks when omitted.
    #[arg(long)]
    pub depth: Option<u8>,
    /// JSON model specification overriding the default priors.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Variance of the detached stage-1 prior on each theta_i.
    #[arg(long)]
    pub stage1_prior_variance: Option<f64>,
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct FullArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 20_000)]
    pub iterations: u64,
    /// Defaults to 10% of the iterations.
    #[arg(long)]
    pub burn_in: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub thin: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Update group blocks in parallel (same chain either way).
    #[arg(long)]
    pub parallel: bool,
    #[serde(skip)]
    #[arg(long, default_value = "h2s-full")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct Stage1Args {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Retained draws per group: one value, or one per group in id order.
    #[arg(long, value_delimiter = ',', default_value = "20000")]
    pub draws: Vec<u64>,
    #[arg(long, default_value_t = 2_000)]
    pub burn_in: u64,
    #[arg(long, default_value_t = 1)]
    pub thin: u64,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[serde(skip)]
    #[arg(long, default_value = "h2s-banks")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct Stage2Args {
    #[arg(long)]
    pub banks: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 20_000)]
    pub iterations: u64,
    /// Defaults to 10% of the iterations.
    #[arg(long)]
    pub burn_in: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub thin: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// `exact` keeps the stage-1 prior terms in the ratio, `uniform` drops them.
    #[arg(long, default_value = "exact")]
    pub mode: String,
    #[arg(long)]
    pub parallel: bool,
    #[serde(skip)]
    #[arg(long, default_value = "h2s-stage2")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct CompareArgs {
    /// Reference (full-data) chain directory.
    #[arg(long)]
    pub reference: PathBuf,
    /// Two-stage chain directory.
    #[arg(long)]
    pub alternative: PathBuf,
    #[arg(long, default_value_t = h2s_core::metrics::DEFAULT_GRID_SIZE)]
    pub grid: usize,
    #[serde(skip)]
    #[arg(long, default_value = "h2s-compare")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true)]
pub struct BankExportArgs {
    #[arg(long)]
    pub bank: PathBuf,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(e: &H2sError) -> u8 {
    match e {
        H2sError::Numerical(_) | H2sError::Stage1Failed { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let user_args: Vec<OsString> = std::env::args_os().collect();
    let args = match config::expand(user_args.clone()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let env_seed = if config::given(&user_args, "--seed") {
        None
    } else {
        match std::env::var("H2S_SEED") {
            Ok(s) => match s.trim().parse::<u64>() {
                Ok(v) => Some(v),
                Err(_) => {
                    eprintln!("error: H2S_SEED must be an unsigned 64-bit integer, got {s:?}");
                    return ExitCode::from(2);
                }
            },
            Err(_) => None,
        }
    };
    let result = match cli.command {
        Command::Simulate(mut a) => {
            a.seed = env_seed.unwrap_or(a.seed);
            commands::simulate(&a)
        }
        Command::Ingest(a) => commands::ingest(&a),
        Command::Full(mut a) => {
            a.seed = env_seed.unwrap_or(a.seed);
            commands::full(&a)
        }
        Command::Stage1(mut a) => {
            a.seed = env_seed.unwrap_or(a.seed);
            commands::stage1(&a)
        }
        Command::Stage2(mut a) => {
            a.seed = env_seed.unwrap_or(a.seed);
            commands::stage2(&a)
        }
        Command::Compare(a) => commands::compare(&a),
        Command::BankExport(a) => commands::bank_export(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
