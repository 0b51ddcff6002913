use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lcx_cli::commands::{self, Context};
use lcx_cli::config::{describe_keys, RunConfig};
use lcx_cli::error::Result;

#[derive(Parser)]
#[command(name = "lcx", version, about = "Learning-curve extrapolation with a prior-fitted network and MCMC")]
#[command(after_help = format!("Config keys (file or --set):\n{}", describe_keys()))]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Seed for every random stream of the subcommand.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for evaluation and simulation.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Flat key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path; stdout when omitted (required by train).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override `key=value`, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample noisy curves from the prior (keys: n, m, means_out).
    SamplePrior,
    /// Build prior-equiprobable bin edges (keys: nbins, n_draws, m).
    BuildBins,
    /// Train a network and write a checkpoint (model, training and bin keys).
    Train,
    /// Quantiles of the predicted continuation (keys: checkpoint, curves, cutoff, queries).
    Infer,
    /// Log-likelihood and MSE of methods on curves (keys: methods, curves, cutoffs, chain keys).
    Eval,
    /// Replay model selection under a termination policy (keys: curves, policy, orderings).
    Earlystop,
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for pair in &cli.common.overrides {
        config.apply_override(pair)?;
    }
    let ctx = Context { seed: cli.common.seed, threads: cli.common.threads, out: cli.common.out, config };
    match cli.command {
        Command::SamplePrior => commands::sample_prior(&ctx),
        Command::BuildBins => commands::build_bins(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Infer => commands::infer(&ctx),
        Command::Eval => commands::evaluate(&ctx),
        Command::Earlystop => commands::early_stop(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lcx: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
