//! Command-line front end: `synth`, `train`, `eval`, `sweep`, `gradcheck`.
//!
//! Every command reads an optional flat `key = value` file (`--config`) and
//! then applies its flags on top, so a flag always wins over the file.
//! Keys a command does not understand are rejected.

pub mod bundle;
mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_eval, cmd_gradcheck, cmd_sweep, cmd_synth, cmd_train, Outcome};

#[derive(Debug, Parser)]
#[command(name = "cascade", version, about = "Train and evaluate shallow detection cascades")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (optionally with a stratified split).
    Synth(SynthArgs),
    /// Train one architecture at one λ and save the model.
    Train(TrainArgs),
    /// Hard-classify a dataset with a saved model.
    Eval(EvalArgs),
    /// Train every (architecture, λ, seed) combination and report tradeoffs.
    Sweep(SweepArgs),
    /// Compare analytic and finite-difference gradients on a random cascade.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat `key = value` file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub n_total: Option<usize>,
    #[arg(long)]
    pub positive_fraction: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub cheap_dim: Option<usize>,
    #[arg(long)]
    pub cheap_separable_fraction: Option<f64>,
    /// Also write train.csv / test.csv with this many training cases ...
    #[arg(long)]
    pub train_count: Option<usize>,
    /// ... of which this many are positive.
    #[arg(long)]
    pub train_pos: Option<usize>,
}

/// Optimizer, objective and cascade-shape flags shared by `train` and `sweep`.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Training CSV (header of feature names, `label` last).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    /// `adaptive_moment` or `plain_gd`.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// `self_gated` or `soft_cascade`.
    #[arg(long)]
    pub objective: Option<String>,
    #[arg(long)]
    pub pos_weight: Option<f64>,
    /// Gate sharpness.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Explicit per-stage costs, comma separated (default: FLOP-proportional).
    #[arg(long)]
    pub kappa: Option<String>,
    /// Leading columns read by the first stage.
    #[arg(long)]
    pub cheap_dim: Option<usize>,
    /// `ROLL,PITCH` column names; the first stage then reads their
    /// quadratic expansion instead of the leading columns.
    #[arg(long)]
    pub basis: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// single-1lnn, casc2, casc3, casc2-allfeat or casc3-allfeat.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Model file written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Raw (unnormalized) CSV to classify.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Time this many single-instance classifications.
    #[arg(long)]
    pub bench: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Held-out CSV; otherwise `--train-count/--train-pos` split `--data`.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub train_count: Option<usize>,
    #[arg(long)]
    pub train_pos: Option<usize>,
    /// Comma-separated architecture names.
    #[arg(long)]
    pub arch: Option<String>,
    /// Comma-separated λ grid (default: 0 and 12 log-spaced values 1e-5..1e1).
    #[arg(long)]
    pub lambda: Option<String>,
    /// Comma-separated training seeds (default: `--seed`).
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Time this many classifications per point.
    #[arg(long)]
    pub bench: Option<usize>,
    /// Also write the accuracy/cost Pareto front.
    #[arg(long)]
    pub pareto: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Finite-difference step.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub objective: Option<String>,
    /// Largest acceptable relative error.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Perturb the analytic gradient before comparing (negative control).
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

/// Run a parsed command; the returned code is the process exit status.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    };
    match result {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            if outcome.passed {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
