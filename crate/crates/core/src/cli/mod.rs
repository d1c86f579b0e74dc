//! Command-line front end. Every command writes into `--out`: the resolved
//! `config.json`, its artifacts, and finally `run.json`. A failed run leaves a
//! `FAILED` file with the error message instead of `run.json`.

mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

pub use commands::{run, RunManifest, MANIFEST_NAME};
pub use config::{ConfigSources, DerivedSeeds, RunConfig, StepsTarget};

use crate::error::{Error, Result};
use crate::model::Preset;

pub const THREADS_ENV: &str = "ENBEDKIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "enbedkit", version, about = "Byte-level encoder-decoder transformer for DNA")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    /// Training steps for the command's own training section.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Config override, e.g. `--set pretrain.batch_size=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean FASTA files into a training corpus.
    Corpus {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        fasta: Vec<PathBuf>,
    },
    /// Span-corruption pretraining.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Corpus FASTA files (replace `paths.corpus`).
        fasta: Vec<PathBuf>,
        /// Continue from a checkpoint written by an earlier pretrain run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Fine-tune a classification head on `sequence<TAB>label` files.
    FinetuneClassify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        io: TrainIo,
    },
    /// Fine-tune the decoder on `source<TAB>target` files.
    FinetuneSeq2seq {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        io: TrainIo,
    },
    /// Noise dataset synthesis and detection.
    Noise {
        #[command(subcommand)]
        action: NoiseAction,
    },
    /// Beam-search mutation generation filtered by a noise detector.
    Mutate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        noise_checkpoint: Option<PathBuf>,
        /// `parent[<TAB>truth]` per line.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Top-1/Top-5 and Levenshtein metrics for ranked predictions.
    Eval {
        #[command(flatten)]
        common: Common,
        /// One line per example, tab-separated candidates best first.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// One sequence per line.
        #[arg(long)]
        truths: Option<PathBuf>,
    },
    /// Encoder attention maps as CSV and PGM, one pair per layer and head.
    AttnExport {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Literal input sequence.
        #[arg(long, conflicts_with = "input")]
        sequence: Option<String>,
        /// FASTA whose first record is the input.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct TrainIo {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Pretrained starting point; a fresh model is built when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum NoiseAction {
    /// Balanced clean/noisy read dataset.
    Make {
        #[command(flatten)]
        common: Common,
    },
    /// Noise probability for each read of `--input`.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// `sequence[<TAB>label]` per line.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    serde_json::from_value(Value::String(s.to_ascii_lowercase())).map_err(|_| format!("unknown preset {s:?} (toy, base, large)"))
}

impl Common {
    pub(crate) fn sources(&self, steps: StepsTarget, paths: Vec<(&str, Value)>) -> ConfigSources {
        ConfigSources {
            file: self.config.clone(),
            seed: self.seed,
            preset: self.preset,
            steps: self.steps.map(|n| (steps, n)),
            paths: paths
                .into_iter()
                .map(|(k, v)| (vec!["paths".to_string(), k.to_string()], v))
                .collect(),
            sets: self.sets.clone(),
        }
    }
}

/// Applies `ENBEDKIT_THREADS` to the global worker pool.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config(format!("{THREADS_ENV}={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return 1;
    }
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
