//! `vwg`: synthesize documents, encode grids, train, predict, evaluate and
//! run k-fold ablations.

mod commands;
mod manifest;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;
use vwg_core::grid::EncoderKind;

#[derive(Debug, Parser)]
#[command(name = "vwg", version, about = "Key field extraction from document grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled synthetic invoice dataset.
    Synth(SynthArgs),
    /// Rasterize a dataset into grid tensors and target masks.
    Encode(EncodeArgs),
    /// Train a model on an 80/10/10 split and write a checkpoint.
    Train(TrainArgs),
    /// Extract fields from every document of a dataset.
    Predict(PredictArgs),
    /// Score predictions against a dataset's ground truth.
    Evaluate(EvaluateArgs),
    /// Train and evaluate several encoders over k folds and seeds.
    Kfold(KfoldArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantArg {
    Text,
    Visual,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub num: u64,
    #[arg(long, value_enum, default_value = "visual")]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u32).range(16..))]
    pub width: u32,
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u32).range(16..))]
    pub height: u32,
}

/// Grid size and embedding options shared by the commands that rasterize.
#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct GridArgs {
    /// Grid size as ROWSxCOLS.
    #[arg(long, value_parser = parse_grid, default_value = "64x64")]
    pub grid: (usize, usize),
    /// Embedding dimension.
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: u64,
    /// Seed of the hashed n-gram embeddings.
    #[arg(long, default_value_t = 0x5EED_0E3B)]
    pub embed_seed: u64,
    /// Optional pretrained vectors in word2vec text format.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct EncodeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_parser = parse_encoder)]
    pub encoder: EncoderKind,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// Network and optimization options shared by `train` and `kfold`.
#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    /// Epochs without validation mIoU improvement before stopping.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub patience: u64,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(4..))]
    pub base_channels: u64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..=8))]
    pub depth: u64,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_parser = parse_encoder)]
    pub encoder: EncoderKind,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path; the history is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Train and monitor on every document instead of splitting.
    #[arg(long)]
    pub all_docs: bool,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct KfoldArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated encoders.
    #[arg(long, value_delimiter = ',', value_parser = parse_encoder, default_value = "layout,wordgrid,vwg-pad,vwg-2enc")]
    pub encoders: Vec<EncoderKind>,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(2..))]
    pub k: u64,
    /// Comma-separated seeds; each reshuffles the folds and the initialization.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Only run the first N folds of every split.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_folds: Option<u64>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(r)?, parse(c)?))
}

fn parse_encoder(s: &str) -> Result<EncoderKind, String> {
    EncoderKind::parse(s).ok_or_else(|| {
        let names: Vec<&str> = EncoderKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown encoder {s:?}; expected one of {}", names.join(", "))
    })
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("VWG_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| anyhow::anyhow!("VWG_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Encode(a) => commands::encode(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Kfold(a) => commands::kfold(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
