//! `easwin`: dataset generation, training, evaluation, gradient checking,
//! the ablation matrix, and attention-complexity benchmarking, all driven by
//! a JSON run configuration with per-key flag overrides.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure, 5 gradient-check failure. `EASWIN_THREADS` caps worker threads.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::Overrides;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "easwin",
    version,
    about = "Shifted-window detection head over precomputed video embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic embedding dataset and its manifest.
    Gen,
    /// Train across the configured seeds; writes one run dir per seed.
    Train,
    /// Evaluate a checkpoint on a data split.
    Eval {
        /// Checkpoint produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to evaluate: train | val | test.
        #[arg(long, default_value = "val")]
        split: String,
    },
    /// Verify model gradients against 64-bit central finite differences.
    Gradcheck {
        /// Maximum allowed relative error.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Train the base model and all four architecture ablations.
    Ablate,
    /// Count attention multiply-adds for the factorized vs joint paths.
    Bench {
        /// Frame counts to benchmark.
        #[arg(long, alias = "t_list", value_delimiter = ',', default_values_t = vec![8usize, 16, 32, 64])]
        t_list: Vec<usize>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_GRADCHECK: u8 = 5;

fn classify(err: &anyhow::Error) -> u8 {
    use easwin_core::Error as E;
    if let Some(core) = err.downcast_ref::<E>() {
        return match core {
            E::Config(_) | E::Dim(_) | E::Contract(_) | E::Json(_) => EXIT_CONFIG,
            E::Data(_)
            | E::BadMagic { .. }
            | E::BadVersion { .. }
            | E::CrcMismatch { .. }
            | E::Truncated { .. }
            | E::Io(_)
            | E::UndefinedMetric(_) => EXIT_DATA,
            E::Numeric { .. } => EXIT_NUMERIC,
        };
    }
    let text = format!("{err:#}");
    if text.contains("gradcheck failed") {
        EXIT_GRADCHECK
    } else if text.contains("invalid config") || text.contains("parsing config") {
        EXIT_CONFIG
    } else {
        EXIT_DATA
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let resolved = match cli.overrides.resolve() {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("error: {err:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let result = match &cli.command {
        Command::Gen => commands::cmd_gen(resolved),
        Command::Train => commands::cmd_train(resolved),
        Command::Eval { checkpoint, split } => commands::cmd_eval(resolved, checkpoint, split),
        Command::Gradcheck { tol } => commands::cmd_gradcheck(*tol),
        Command::Ablate => commands::cmd_ablate(resolved),
        Command::Bench { t_list } => commands::cmd_bench(resolved, t_list),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}
