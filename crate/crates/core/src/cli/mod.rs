//! Command-line entry points.
//!
//! Machine-readable results always go to files; stdout carries only
//! human-readable summaries. Every file is written to a temporary name and
//! renamed into place once complete.

mod commands;
mod overlay;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::Result;

#[derive(Debug, Parser)]
#[command(name = "samp", version, about = "Image composition assessment toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic composition dataset.
    Synth {
        /// Generator spec (TOML); the bundled four-family spec when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute spectral-residual saliency maps for a PNG file or directory.
    Saliency {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the raw map as a single-channel feature file.
        #[arg(long)]
        feat: bool,
    },
    /// Content-bias analysis, loss weights and train/test split.
    Prepare {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (results do not depend on this).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Image ids to evaluate; defaults to `test.txt` in the data directory,
        /// else every annotated image.
        #[arg(long)]
        split: Option<PathBuf>,
        /// Per-image predictions file.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Rater-consistency statistics for a rating table.
    Raters {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = crate::stats::DEFAULT_PERMUTATIONS)]
        permutations: usize,
        #[arg(long, default_value_t = 100)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.05)]
        q: f64,
    },
    /// Saliency, prediction, pattern weights and a dominant-pattern overlay for one image.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Precomputed feature file for models that read features.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Draw this pattern (1-8) instead of the dominant one.
        #[arg(long)]
        pattern: Option<usize>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, seed, out } => commands::synth(spec.as_deref(), seed, &out),
        Command::Saliency { input, out, feat } => commands::saliency(&input, &out, feat),
        Command::Prepare {
            annotations,
            out,
            test_fraction,
            seed,
        } => commands::prepare(&annotations, &out, test_fraction, seed),
        Command::Train {
            config,
            data,
            out,
            seed,
            threads,
        } => with_threads(threads, || commands::train(&config, &data, &out, seed)),
        Command::Eval {
            checkpoint,
            data,
            report,
            split,
            predictions,
            threads,
        } => with_threads(threads, || {
            commands::eval(&checkpoint, &data, &report, split.as_deref(), predictions.as_deref())
        }),
        Command::Raters {
            table,
            out,
            seed,
            permutations,
            batch_size,
            q,
        } => commands::raters(&table, &out, seed, permutations, batch_size, q),
        Command::Visualize {
            checkpoint,
            image,
            out,
            features,
            pattern,
        } => commands::visualize(&checkpoint, &image, &out, features.as_deref(), pattern),
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| crate::Error::invalid(format!("thread pool: {e}")))?;
            pool.install(f)
        }
    }
}
