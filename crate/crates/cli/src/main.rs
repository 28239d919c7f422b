mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use slm_ie::eval::DecodeMode;

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "slm-ie",
    version,
    about = "Structured language model for frame and slot extraction"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand; each also reads `SLMIE_<NAME>`.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true, env = "SLMIE_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "SLMIE_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true, env = "SLMIE_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long, global = true, env = "SLMIE_BEAM_WIDTH")]
    pub beam_width: Option<usize>,
    #[arg(long, global = true, env = "SLMIE_NBEST")]
    pub nbest: Option<usize>,
    #[arg(long, global = true, value_enum, env = "SLMIE_MODE")]
    pub mode: Option<Mode>,
    #[arg(long, global = true, env = "SLMIE_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    FrameSet,
    L1,
    Unconstrained,
}

impl From<Mode> for DecodeMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::FrameSet => DecodeMode::FrameSet,
            Mode::L1 => DecodeMode::L1,
            Mode::Unconstrained => DecodeMode::Unconstrained,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic annotated corpus and treebank.
    Generate {
        /// Generator grammar; the built-in one when absent.
        #[arg(long)]
        grammar: Option<PathBuf>,
        /// Training sentences (default: the grammar's `sentences`).
        #[arg(long)]
        sentences: Option<usize>,
        #[arg(long, default_value_t = 500)]
        test_sentences: usize,
    },
    /// Run the four training stages.
    Train {
        /// Skip to stage 4 using the stage-2 model and enriched treebank
        /// already in the output directory.
        #[arg(long)]
        resume_from_stage3: bool,
    },
    /// Decode a test corpus and score it.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Annotated test sentences (default: `data.test` of the config).
        #[arg(long)]
        test: Option<PathBuf>,
        /// Training corpus for the most-frequent-frame baseline report.
        #[arg(long)]
        baseline_train: Option<PathBuf>,
    },
    /// Perplexity of a corpus under a model.
    Perplexity {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = commands::run(cli) {
        eprintln!("slm-ie: {e}");
        std::process::exit(e.exit_code());
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
