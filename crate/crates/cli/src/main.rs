//! `hyperhead` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.

mod commands;
mod manifest;
mod prototypes;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hyperhead::head::HeadMode;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<hyperhead::Error> for CliError {
    fn from(err: hyperhead::Error) -> Self {
        let code = match err {
            hyperhead::Error::Numerical(_) => EXIT_NUMERICAL,
            _ => EXIT_INPUT,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "hyperhead", version, about = "Hyperbolic prototype classification heads on synthetic hierarchies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic hierarchical dataset.
    Generate(GenerateArgs),
    /// Train an encoder and classification head.
    Train(TrainArgs),
    /// Evaluate a checkpoint on its validation split.
    Evaluate(EvaluateArgs),
    /// Train against fixed semantic prototypes and report seen/unseen accuracy.
    ZeroShot(ZeroShotArgs),
    /// k-occurrence and distance histograms of trained prototypes.
    Hubness(HubnessArgs),
    /// Build a prototype bank from a text embedding file.
    ImportPrototypes(ImportArgs),
    /// Write a bank's prototypes as a text embedding file.
    ExportPrototypes(ExportArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// JSON file with generation parameters; flags override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub num_super: Option<usize>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub num_samples: Option<usize>,
    #[arg(long)]
    pub sigma_super: Option<f64>,
    #[arg(long)]
    pub sigma_leaf: Option<f64>,
    /// Per-sample noise; 0 gives a noiseless dataset.
    #[arg(long)]
    pub sigma_x: Option<f64>,
    #[arg(long)]
    pub background_fraction: Option<f64>,
    #[arg(long)]
    pub background_sigma: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated class names removed from the train split.
    #[arg(long, value_delimiter = ',')]
    pub unseen: Vec<String>,
    /// Power-law exponent for a long-tailed train split.
    #[arg(long)]
    pub imbalance: Option<f64>,
    /// Output dataset file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the head mode: hyperbolic, euclidean-linear or euclidean-cosine.
    #[arg(long)]
    pub head: Option<HeadMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from a checkpoint; epoch numbering carries on.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset file; defaults to the one described by the checkpoint's config.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Metrics JSON output.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the top-k predictions of every validation sample (JSON lines).
    #[arg(long)]
    pub top_k_out: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
}

#[derive(Args, Debug)]
pub struct ZeroShotArgs {
    /// Config naming the fixed prototype file and the unseen classes.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct HubnessArgs {
    /// Checkpoint files; repeat for a side-by-side comparison.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    /// Prototype bank files, as an alternative to checkpoints.
    #[arg(long = "bank")]
    pub banks: Vec<PathBuf>,
    #[arg(long, default_value_t = hyperhead::hubness::DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = hyperhead::hubness::DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct ImportArgs {
    /// Text file with lines `name v1 v2 ... vn`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "hyperbolic")]
    pub mode: HeadMode,
    /// Rows are (n+1)-coordinates already on the hyperboloid.
    #[arg(long)]
    pub already_hyperbolic: bool,
    #[arg(long, default_value_t = hyperhead::head::DEFAULT_DELTA)]
    pub delta: f64,
    /// Output bank file (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Write hyperbolic prototypes as tangent coordinates at the origin.
    #[arg(long)]
    pub tangent: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::ZeroShot(a) => commands::zero_shot(a),
        Command::Hubness(a) => commands::hubness(a),
        Command::ImportPrototypes(a) => commands::import_prototypes(a),
        Command::ExportPrototypes(a) => commands::export_prototypes(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}
