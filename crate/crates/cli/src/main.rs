//! `vtreid`: generate synthetic bimodal data, train and evaluate two-stream
//! encoders, sweep ablations and run the self-check suites.
//!
//! Exit codes: 0 success, 2 usage/config/io error, 3 numeric failure
//! (non-finite loss or a failing verification suite).

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vtreid_core::eval::Direction;
use vtreid_core::trainer::AblationAxis;
use vtreid_core::verify::Suite;

use crate::config::Overrides;

#[derive(Parser, Debug)]
#[command(name = "vtreid", version, about = "Cross-modality re-identification with hetero-center triplet loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic visible/thermal dataset to disk
    Generate(GenerateArgs),
    /// Train a model on a dataset directory
    Train(TrainArgs),
    /// Evaluate a trained run or an embeddings file
    Eval(EvalArgs),
    /// Train one model per value of an ablation axis
    Ablate(AblateArgs),
    /// Run gradient, loss, counting and metric self-checks
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Number of identities
    #[arg(long, default_value_t = 40)]
    pub ids: usize,
    /// Images per identity and modality
    #[arg(long, default_value_t = 20)]
    pub per_modality: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Per-image appearance variation
    #[arg(long)]
    pub appearance_sigma: Option<f32>,
    /// Per-cell sensor noise
    #[arg(long)]
    pub noise: Option<f32>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with default settings; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Run directory written by `train`
    #[arg(long, required_unless_present = "from_embeddings")]
    pub run: Option<PathBuf>,
    /// Checkpoint to load instead of `<run>/model.ck`
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory
    #[arg(long, required_unless_present = "from_embeddings")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "both", value_parser = config::parse_directions)]
    pub direction: Directions,
    /// Write the evaluated embeddings (`.csv` for text, binary otherwise)
    #[arg(long)]
    pub export_embeddings: Option<PathBuf>,
    /// Score a previously exported embeddings file instead of a model
    #[arg(long, conflicts_with_all = ["run", "checkpoint", "data", "export_embeddings"])]
    pub from_embeddings: Option<PathBuf>,
    /// Output directory; defaults to the run directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct Directions(pub Vec<Direction>);

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = config::parse_from_str::<AblationAxis>)]
    pub axis: AblationAxis,
    /// Comma-separated axis values; defaults to the full axis
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<String>>,
    /// Seeds averaged per cell
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value = "all", value_parser = config::parse_from_str::<Suite>)]
    pub suite: Suite,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for the manifest and a JSON report
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Verify(a) => commands::verify(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let numeric = e.chain().any(|c| {
        c.downcast_ref::<vtreid_core::Error>().is_some_and(vtreid_core::Error::is_numeric)
            || c.downcast_ref::<commands::SuiteFailed>().is_some()
    });
    if numeric {
        3
    } else {
        2
    }
}
