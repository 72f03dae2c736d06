use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use entangle_cli::{execute, ExperimentConfig, RunError, RunOptions, Stage};

#[derive(Parser)]
#[command(name = "entangle", version, about = "Decoy-state single-photon entanglement simulation")]
struct Cli {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Divide every sample count by K.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    scale: u64,
    /// Cap on worker threads.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the CHSH-setting batches and write them as CSV.
    Simulate,
    /// Bounded correlation over the phase-difference grid.
    CorrelationScan,
    /// Bounded CHSH value over the threshold grid.
    ChshScan {
        /// Read batches written by `simulate` instead of sampling.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Maximum-likelihood reconstruction of the two-mode state.
    Tomography,
    /// Decoy weights and bounded single-photon coincidence probabilities.
    DecoyEstimate {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Verify that post-selection factorizes on random states.
    FairSamplingCheck {
        /// Keep the odd window overlaps that should vanish.
        #[arg(long)]
        inject_fault: bool,
        /// Truncation for an exploratory, report-only run.
        #[arg(long)]
        cutoff: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<Option<String>, RunError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let mut options = RunOptions::default();
    let stage = match cli.command {
        Command::Simulate => Stage::Simulate,
        Command::CorrelationScan => Stage::CorrelationScan,
        Command::ChshScan { input } => {
            options.input = input;
            Stage::ChshScan
        }
        Command::Tomography => Stage::Tomography,
        Command::DecoyEstimate { input } => {
            options.input = input;
            Stage::DecoyEstimate
        }
        Command::FairSamplingCheck { inject_fault, cutoff } => {
            options.inject_fault = inject_fault;
            if let Some(c) = cutoff {
                config.fair_sampling.cutoff = c;
            }
            Stage::FairSamplingCheck
        }
    };
    let config = config.scaled(cli.scale);
    let workers = cli.workers.map_or(0, |w| w as usize);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RunError::Numerical(format!("thread pool: {e}")))?;
    let report = pool.install(|| execute(stage, &config, &cli.out, &options))?;
    for f in &report.files {
        println!("{}", cli.out.join(f).display());
    }
    Ok(report.breach)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(breach)) => {
            eprintln!("entangle: acceptance breach: {breach}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("entangle: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
