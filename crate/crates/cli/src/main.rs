//! `wavetoken`: batch front end for the tokenize / train / forecast /
//! evaluate pipeline.
//!
//! Settings resolve as flags > `--config` TOML file > built-in defaults.
//! Exit status is 0 on full success, 1 when some items failed (listed on
//! stderr) and 2 when the command could not run.

mod ablate;
mod artifacts;
mod commands;
mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::config::{Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "wavetoken",
    version,
    about = "Wavelet tokenization and forecasting of time series"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    /// Worker threads (default: one per core)
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus of (context + horizon) series
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the quantization codebook on pooled training coefficients
    FitCodebook {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn every series into a token stream and report round-trip error
    Tokenize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild series from token records
    Detokenize {
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the Markov model on tokenized training windows
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample forecast paths for every series
    Forecast {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Forecast the last H points of each series instead of the future
        #[arg(long)]
        holdout: bool,
    },
    /// Score held-out forecasts against the seasonal-naive baseline
    Eval {
        /// Dataset file; repeat for several datasets
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        /// Forecast file for the dataset at the same position
        #[arg(long, required = true)]
        forecasts: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Seasonal period (default: from the dataset frequency)
        #[arg(long)]
        season: Option<usize>,
        #[arg(long, default_value = "wavetoken")]
        model_name: String,
    },
    /// Sweep a grid of settings; resumable
    Ablate {
        /// TOML file mapping config keys to lists of values
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the resolved configuration and its fingerprint
    ShowConfig,
}

fn run(cli: Cli) -> Result<commands::Failures> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = RunConfig::resolve(&cli.overrides)?;
    match cli.command {
        Command::Synth { out } => commands::synth(&cfg, &out),
        Command::FitCodebook { data, out } => commands::fit_codebook(&cfg, &data, &out),
        Command::Tokenize { data, codebook, out } => commands::tokenize(&cfg, &data, &codebook, &out),
        Command::Detokenize { tokens, codebook, out } => commands::detokenize(&cfg, &tokens, &codebook, &out),
        Command::Train { data, codebook, out } => commands::train(&cfg, &data, &codebook, &out),
        Command::Forecast {
            data,
            codebook,
            model,
            out,
            holdout,
        } => commands::forecast(&cfg, &data, &codebook, &model, &out, holdout),
        Command::Eval {
            data,
            forecasts,
            out,
            season,
            model_name,
        } => commands::eval(&cfg, &data, &forecasts, &out, season, &model_name),
        Command::Ablate { grid, data, out } => ablate::ablate(&cfg, &grid, &data, &out),
        Command::ShowConfig => {
            print!("{}", toml::to_string(&cfg)?);
            println!("# fingerprint = \"{}\"", cfg.fingerprint());
            Ok(Vec::new())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            for f in &failures {
                eprintln!("warning: {f}");
            }
            eprintln!("{} item(s) failed", failures.len());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
