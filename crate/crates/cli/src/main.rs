//! `poisonbench`: fit, attack, defend, sweep and report from the command line.
//!
//! Exit codes: 0 on success, 1 when a computation fails, 2 on invalid usage.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use poisonbench::harness::{AttackKind, DefenseKind};
use poisonbench::regress::Family;

use config::{FloatList, LambdaArg, List, SyntheticArg};

#[derive(Debug, Parser)]
#[command(name = "poisonbench", version, about = "Poisoning attacks and defenses for linear regression")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Config file of `section.key=value` lines; flags override it
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed for all randomness [default: 1592598561]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: $POISONBENCH_OUT, else ./poisonbench-out]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; 1 runs everything sequentially [default: all cores]
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// More progress output on stderr (repeatable)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    /// Suppress progress output
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Args, Clone, Default)]
pub struct DataArgs {
    /// CSV dataset with a header row
    #[arg(long, value_name = "CSV")]
    pub data: Option<PathBuf>,
    /// Response column name or zero-based index (required with --data)
    #[arg(long)]
    pub target: Option<String>,
    /// Comma-separated columns to one-hot encode
    #[arg(long)]
    pub categorical: Option<List<String>>,
    /// Synthetic dataset, e.g. d=5,n=300,noise=0.1[,seed=7]
    #[arg(long, value_name = "SPEC")]
    pub synthetic: Option<SyntheticArg>,
    /// Keep only the first K features
    #[arg(long, value_name = "K")]
    pub max_features: Option<usize>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ModelArgs {
    /// ols, ridge, lasso or elasticnet [default: ols]
    #[arg(long)]
    pub family: Option<Family>,
    /// Regularization weight, or `auto` to pick it on a validation split [default: auto]
    #[arg(long)]
    pub lambda: Option<LambdaArg>,
    /// Elastic-net L1 share [default: 0.5]
    #[arg(long)]
    pub rho: Option<f64>,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Fit a model and write it as JSON
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Generate poison points against a dataset
    Attack {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// nopt or opt [default: nopt]
        #[arg(long)]
        method: Option<AttackKind>,
        /// Poisoning rate in (0, 0.2] [default: 0.2]
        #[arg(long)]
        alpha: Option<f64>,
        /// Outer-loop convergence threshold [default: 1e-6]
        #[arg(long)]
        epsilon_conv: Option<f64>,
        /// Maximum outer iterations [default: 100]
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Select a trusted subset of a (possibly poisoned) dataset
    Defend {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// proda or trim [default: proda]
        #[arg(long)]
        method: Option<DefenseKind>,
        /// Proda group size, at least d+1 [default: d+1]
        #[arg(long)]
        gamma: Option<usize>,
        /// Proda failure probability [default: 1e-5]
        #[arg(long)]
        epsilon: Option<f64>,
        /// Assumed poisoning rate [default: 0.2]
        #[arg(long, alias = "alpha-assumed")]
        alpha: Option<f64>,
        /// TRIM iteration cap [default: 400]
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Run a seeded grid of attacks and defenses
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        /// Dataset label used in outputs [default: derived from the source]
        #[arg(long)]
        name: Option<String>,
        /// Comma-separated model families [default: ols]
        #[arg(long, alias = "families")]
        family: Option<List<Family>>,
        /// Regularization weight or `auto` [default: auto]
        #[arg(long)]
        lambda: Option<LambdaArg>,
        /// Elastic-net L1 share [default: 0.5]
        #[arg(long)]
        rho: Option<f64>,
        /// Comma-separated attacks: none, opt, nopt [default: nopt]
        #[arg(long)]
        attack: Option<List<AttackKind>>,
        /// Comma-separated defenses: none, trim, proda [default: none]
        #[arg(long)]
        defense: Option<List<DefenseKind>>,
        /// Poisoning rates, `a,b,c` or `start:stop:step` [default: 0.04:0.20:0.04]
        #[arg(long)]
        alphas: Option<FloatList>,
        /// Comma-separated Proda group sizes [default: d+1]
        #[arg(long)]
        gammas: Option<List<usize>>,
        /// Defender's assumed poisoning rate [default: 0.2]
        #[arg(long)]
        alpha_assumed: Option<f64>,
        /// Proda failure probability [default: 1e-5]
        #[arg(long)]
        epsilon: Option<f64>,
        /// Attack convergence threshold [default: 1e-6]
        #[arg(long)]
        epsilon_conv: Option<f64>,
        /// Attack outer-iteration cap [default: 100]
        #[arg(long)]
        max_iters: Option<usize>,
        /// TRIM iteration cap [default: 400]
        #[arg(long)]
        trim_max_iters: Option<usize>,
        /// Repeats per cell [default: 5]
        #[arg(long)]
        repeats: Option<usize>,
        /// Attacker sees a resample of this fraction of the training fold [default: full fold]
        #[arg(long)]
        surrogate_fraction: Option<f64>,
        /// Use only the first K training rows [default: all]
        #[arg(long, value_name = "K")]
        train_subsample: Option<usize>,
        /// Rate used to convert iteration counts to modeled seconds [default: 1e9]
        #[arg(long)]
        iterations_per_second: Option<f64>,
    },
    /// Summarize records files into CSV tables, plots and a text report
    Report {
        /// Records files written by `sweep`
        #[arg(long = "records", required = true, num_args = 1..)]
        records: Vec<PathBuf>,
    },
}

/// Invalid input; reported as a single line naming the offending flag.
#[derive(Debug)]
pub struct UsageError {
    pub flag: String,
    pub message: String,
}

impl UsageError {
    pub fn new(flag: &str, message: impl Into<String>) -> Self {
        UsageError {
            flag: flag.to_string(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.flag, self.message)
    }
}

pub enum Failure {
    Usage(UsageError),
    Compute(anyhow::Error),
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Compute(e)
    }
}

impl From<poisonbench::Error> for Failure {
    fn from(e: poisonbench::Error) -> Self {
        Failure::Compute(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    ExitCode::from(2)
                }
                _ => {
                    let rendered = e.render().to_string();
                    eprintln!("{}", rendered.lines().next().unwrap_or("error: invalid arguments"));
                    ExitCode::from(2)
                }
            };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
