//! `esarb`: data, training, forecasting and backtesting for storage
//! arbitrage in two-settlement markets.
//!
//! Exit codes: 0 ok, 2 config error, 3 data error or missing artifact,
//! 4 numeric failure.

mod commands;
mod config;
mod error;
mod output;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Ctx;
use crate::config::{Overrides, RunConfig};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "esarb", version, about = "Energy storage arbitrage across day-ahead and real-time markets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Restrict to these zones (repeatable).
    #[arg(long)]
    zone: Vec<String>,
    /// Comma-separated participation modes, e.g. RT-F,DA+RT-F.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<String>>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for data-parallel kernels.
    #[arg(long)]
    jobs: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(Common),
    /// Load, gap-fill and validate CSV inputs.
    Ingest(Common),
    /// Price statistics per zone.
    Stats(Common),
    /// Train the configured forecaster.
    Train(Common),
    /// Forecast the test period with a trained model.
    Forecast(Common),
    /// Run the participation modes over the test period.
    Backtest(Common),
    /// Hyperparameter sensitivity sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Number of sampled configurations (overrides the config).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Summarize existing backtest reports.
    Report(Common),
}

fn context(c: &Common) -> Result<Ctx, CliError> {
    if let Some(jobs) = c.jobs {
        set_jobs(jobs)?;
    }
    let overrides = Overrides {
        seed: c.seed,
        zones: (!c.zone.is_empty()).then(|| c.zone.clone()),
        modes: c.modes.clone(),
        out: c.out.clone(),
    };
    Ok(Ctx::new(RunConfig::load(&c.config, &overrides)?))
}

#[cfg(feature = "parallel")]
fn set_jobs(jobs: usize) -> Result<(), CliError> {
    if jobs == 0 {
        return Err(CliError::Config("--jobs must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| CliError::Config(format!("--jobs: {e}")))
}

#[cfg(not(feature = "parallel"))]
fn set_jobs(jobs: usize) -> Result<(), CliError> {
    if jobs == 0 {
        return Err(CliError::Config("--jobs must be positive".into()));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(c) => commands::synth(&context(c)?),
        Command::Ingest(c) => commands::ingest(&context(c)?),
        Command::Stats(c) => commands::stats(&context(c)?),
        Command::Train(c) => commands::train(&context(c)?),
        Command::Forecast(c) => commands::forecast(&context(c)?),
        Command::Backtest(c) => commands::backtest(&context(c)?),
        Command::Sweep { common, n } => sweep::run(&context(common)?, *n),
        Command::Report(c) => commands::report(&context(c)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
