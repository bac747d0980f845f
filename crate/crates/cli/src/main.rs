//! Command-line entry point: data generation, meta-training, evaluation,
//! and baseline runs, each driven by a JSON config and emitting a
//! manifest that pins the resolved config, seed, and artifact hashes.

mod baseline_cmd;
mod config;
mod data_io;
mod eval_cmd;
mod gen_cmd;
mod manifest;
mod train_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Exit codes: 0 ok, 2 config error, 3 data error, 4 runtime error.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

pub type CliResult<T> = Result<T, CliError>;

pub fn config_err(msg: impl ToString) -> CliError {
    CliError { code: 2, msg: msg.to_string() }
}

pub fn data_err(msg: impl ToString) -> CliError {
    CliError { code: 3, msg: msg.to_string() }
}

pub fn run_err(msg: impl ToString) -> CliError {
    CliError { code: 4, msg: msg.to_string() }
}

/// Core errors surfacing mid-run keep their cause class: bad values are
/// config errors, malformed or structurally broken inputs are data
/// errors, everything else is a runtime failure.
pub fn core_err(e: fedunroll::Error) -> CliError {
    use fedunroll::Error as E;
    match e {
        E::Parameter(_) | E::Config(_) => config_err(e),
        E::Format { .. } | E::Structure(_) => data_err(e),
        _ => run_err(e),
    }
}

impl CliError {
    fn class(&self) -> &'static str {
        match self.code {
            2 => "config",
            3 => "data",
            _ => "runtime",
        }
    }
}

#[derive(Parser)]
#[command(name = "fedunroll", version, about = "Decentralized learning-to-optimize simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Dgd,
    Dsgd,
    Dfedavgm,
    FedavgStar,
}

impl MethodArg {
    pub fn to_core(self) -> fedunroll::baselines::Method {
        use fedunroll::baselines::Method;
        match self {
            MethodArg::Dgd => Method::Dgd,
            MethodArg::Dsgd => Method::Dsgd,
            MethodArg::Dfedavgm => Method::Dfedavgm,
            MethodArg::FedavgStar => Method::FedavgStar,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic federated meta-datasets
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Meta-train the unrolled optimizer
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Drop the descending-gradient-norm constraints (ablation arm)
        #[arg(long)]
        no_constraints: bool,
        /// Continue from out_dir/checkpoint.json
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on the meta-test datasets
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Evaluation seed (initial weights, batches, stale sets)
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated stale-agent counts, e.g. 0,5,10,20
        #[arg(long = "async", value_delimiter = ',')]
        async_counts: Option<Vec<usize>>,
    },
    /// Run a classical optimizer over the meta-test datasets
    Baseline {
        #[arg(long)]
        method: MethodArg,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::GenData { config, out_dir, seed } => gen_cmd::run(&config, &out_dir, seed),
        Cmd::Train { config, data_dir, out_dir, seed, no_constraints, resume } => {
            train_cmd::run(&config, &data_dir, &out_dir, seed, no_constraints, resume)
        }
        Cmd::Eval { checkpoint, data_dir, out_dir, seed, async_counts } => {
            eval_cmd::run(&checkpoint, &data_dir, &out_dir, seed, async_counts.as_deref())
        }
        Cmd::Baseline { method, config, data_dir, out_dir, seed } => {
            baseline_cmd::run(method.to_core(), &config, &data_dir, &out_dir, seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let one_line = e.msg.replace('\n', " ");
            eprintln!("error[{}]: {}", e.class(), one_line);
            ExitCode::from(e.code)
        }
    }
}
