//! `ubr` — retrieval-augmented CTR prediction.
//!
//! Subcommands: `synth` generates a planted-pattern dataset, `index` builds
//! and persists the inverted-index archive, `train` runs the alternating
//! training loop, `eval` computes metrics from a checkpoint or a scores CSV,
//! and `retrieve` prints the full retrieval/prediction trace for one target.
//!
//! Verbosity is controlled by the `UBR_LOG` environment variable.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "ubr", version, about = "Retrieval-augmented CTR prediction engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic behavior log, catalog, and ground-truth file.
    Synth {
        /// `key = value` config file (users, categories, seq_len, ...).
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the inverted-index archive from a behavior log and persist it.
    Index {
        /// Behavior log CSV.
        #[arg(long)]
        log: PathBuf,
        /// Snapshot output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint, report CSV, split manifests, and a
    /// run manifest.
    Train {
        /// `key = value` training config; must name `log` and `catalog`.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's mode (ubr | recent_n | sum_pooling |
        /// ubr_sum_pooling).
        #[arg(long)]
        mode: Option<String>,
    },
    /// Evaluate: either a checkpoint against a split, or a scores CSV.
    Eval {
        /// Training config (for data paths and model shape).
        #[arg(long, requires = "checkpoint")]
        config: Option<PathBuf>,
        /// Model checkpoint to score with.
        #[arg(long, requires = "config")]
        checkpoint: Option<PathBuf>,
        /// Split to score: train | valid | test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Scores CSV (`score,label` per line) to evaluate directly.
        #[arg(long, conflicts_with_all = ["config", "checkpoint"])]
        scores: Option<PathBuf>,
    },
    /// Print the selection, retrieval, and prediction trace of one target.
    Retrieve {
        /// Training config (for data paths and model shape).
        #[arg(long)]
        config: PathBuf,
        /// Model checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Target id, e.g. `test-17` or `train-3-neg0`.
        #[arg(long)]
        target: String,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter("UBR_LOG")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Synth { config, out } => commands::synth(&config, &out),
        Command::Index { log, out } => commands::index(&log, &out),
        Command::Train { config, out, mode } => commands::train(&config, &out, mode.as_deref()),
        Command::Eval {
            config,
            checkpoint,
            split,
            scores,
        } => commands::eval(config.as_deref(), checkpoint.as_deref(), &split, scores.as_deref()),
        Command::Retrieve {
            config,
            checkpoint,
            target,
        } => commands::retrieve(&config, &checkpoint, &target),
    }
}
