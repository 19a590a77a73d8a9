//! Experiment harness for rate-compatible linear block codes.

mod commands;
mod config;
mod error;
mod model;

use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use error::CliError;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rclbc",
    version,
    about = "Train, evaluate, compare and export rate-compatible linear block codes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the code family described by the config's [code] and [train] sections
    Train {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for the model and checkpoints
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Monte Carlo / training worker threads (default: all cores)
        #[arg(long)]
        workers: Option<usize>,
        /// Resume from a training checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Monte Carlo BER sweep of one code (trained model or baseline)
    Eval {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Model file to evaluate (overrides eval.model)
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Sweep the codes in [compare] and report dB gains against the first
    Compare {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Write per-rate alist files, the generator matrix, and decoder weights
    Export {
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated subset of: alist, gmatrix, weights
        #[arg(long, value_delimiter = ',', default_values_t = default_export_items())]
        what: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn default_export_items() -> Vec<String> {
    vec!["alist".into(), "gmatrix".into(), "weights".into()]
}

/// Writes via a temp file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = dir.to_path_buf();
    tmp.push(format!(
        ".{}.tmp-{}",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default(),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

fn set_workers(workers: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::config("--workers must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot size the worker pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, seed, out, workers, resume } => {
            set_workers(workers)?;
            let cfg = ExperimentConfig::load(&config)?;
            commands::cmd_train(&cfg, seed, &out, resume.as_deref())?;
        }
        Command::Eval { config, seed, out, workers, model } => {
            set_workers(workers)?;
            let cfg = ExperimentConfig::load(&config)?;
            commands::cmd_eval(&cfg, seed, &out, model.as_deref())?;
        }
        Command::Compare { config, seed, out, workers } => {
            set_workers(workers)?;
            let cfg = ExperimentConfig::load(&config)?;
            commands::cmd_compare(&cfg, seed, &out)?;
        }
        Command::Export { config, model, what, out } => {
            // The config is loaded for validation and ownership of defaults;
            // the model file itself is self-describing.
            let _cfg = ExperimentConfig::load(&config)?;
            commands::cmd_export(&model, &what, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
