//! `swcm`: the command-line front end for `swcm-core`.
//!
//! Exit codes: 0 success, 2 malformed input (checkpoint, corpus, I/O),
//! 3 configuration error, 4 non-finite numeric abort, 5 empty evaluation.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use swcm_core::grafting::NormalLayerMode;
use swcm_core::Error;

#[derive(Parser, Debug)]
#[command(name = "swcm", version, about = "Graft a pretrained encoder into an encoder-decoder, train and evaluate it")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multilingual corpus and its vocabulary.
    GenCorpus {
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated language codes; the first one is the pivot.
        #[arg(long, default_value = "zh,bo")]
        languages: String,
        /// Comma-separated monolingual sentence counts, one per language.
        #[arg(long, default_value = "18000,2000")]
        sizes: String,
        #[arg(long, default_value_t = 2000)]
        parallel: usize,
        #[arg(long, default_value_t = 100)]
        heldout: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build an encoder checkpoint, optionally masked-LM pretrained.
    InitEncoder {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Graft an encoder checkpoint into a full encoder-decoder.
    Graft {
        #[arg(long)]
        encoder_ckpt: PathBuf,
        /// Insert a normal layer after every X custom layers.
        #[arg(long)]
        x: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "insert")]
        normal_layer_mode: NormalLayerMode,
        /// Randomly initialize the decoder instead of copying encoder weights.
        #[arg(long)]
        no_weight_sharing: bool,
        /// Keep custom-layer weights tied to their encoder source during training.
        #[arg(long)]
        tie_decoder: bool,
    },
    /// Multi-task denoising + translation pretraining.
    Pretrain {
        config: PathBuf,
        /// Continue from the latest checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many total steps (the schedule still spans the full run).
        #[arg(long)]
        stop_at_step: Option<u64>,
    },
    /// Finetune on a parallel task corpus.
    Finetune {
        config: PathBuf,
        #[arg(long)]
        resume: bool,
        /// Stop after this many total steps (the schedule still spans the full run).
        #[arg(long)]
        stop_at_step: Option<u64>,
    },
    /// Score greedy generations against references with ROUGE-L.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Parallel TSV: src_lang, tgt_lang, src, tgt.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        max_new_tokens: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
    },
    /// Greedy generation for every line of an input file.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Target language; its token follows `<s>` in every output.
        #[arg(long)]
        lang: String,
        /// Source language (defaults to the target language).
        #[arg(long)]
        src_lang: Option<String>,
        #[arg(long, default_value_t = 64)]
        max_new_tokens: usize,
    },
    /// Finetune and evaluate over a grid of X values and dataset sizes.
    SweepX {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        x_list: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
    },
    /// Print a checkpoint's manifest summary.
    InspectCkpt { ckpt: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Checkpoint(_) | Error::Parse(_) | Error::Io(_) => 2,
        Error::Config(_) | Error::Graft(_) | Error::Domain(_) | Error::Vocabulary { .. } => 3,
        Error::NonFinite(_) => 4,
        Error::EmptyEvaluation => 5,
        Error::Shape(_) | Error::EmptyLoss | Error::NonScalarRoot(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
