//! `cobra` — boundary delineation on single-channel images with an
//! iteratively refined contour. Subcommands cover synthetic data generation,
//! training, prediction, evaluation, uncertainty scoring, and ablations.

mod commands;
mod config;
mod svg;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "cobra",
    version,
    about = "Deep active contour engine for boundary delineation",
    after_help = "The COBRA_THREADS environment variable caps worker parallelism \
                  (default: all available cores)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene dataset (PGM images + GeoJSON truth)
    Generate(GenerateArgs),
    /// Train a model on a dataset directory
    Train(TrainArgs),
    /// Run a trained model on one image
    Predict(PredictArgs),
    /// Evaluate a checkpoint on a dataset split
    Eval(EvalArgs),
    /// Score MC-dropout uncertainty and its correlation with the error
    Uncertainty(UncertaintyArgs),
    /// Retrain along one ablation axis and summarize test errors
    Ablate(AblateArgs),
    /// Write a config file holding every default value
    Config(ConfigArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Output dataset directory
    #[arg(long)]
    pub out: PathBuf,
    /// Number of scenes
    #[arg(long, default_value_t = 500)]
    pub count: usize,
    /// Square image side length (must be divisible by the feature stride)
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Apply multiplicative unit-mean speckle noise
    #[arg(long)]
    pub speckle: bool,
    /// Boundary roughness in [0,1) (default 0.55)
    #[arg(long)]
    pub roughness: Option<f64>,
    /// Intensity gap between the two regions (default 0.4)
    #[arg(long)]
    pub contrast: Option<f64>,
    /// Additive Gaussian noise standard deviation (default 0.08)
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Overwrite a non-empty output directory
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory (as produced by `cobra generate`)
    #[arg(long)]
    pub data: PathBuf,
    /// Run configuration file (see `cobra config`)
    #[arg(long)]
    pub config: PathBuf,
    /// Output checkpoint path
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV training log
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Directory for periodic/best checkpoints during training
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Train/val/test fractions
    #[arg(long, default_value = "0.7,0.15,0.15")]
    pub split_frac: String,
    /// Seed for the split shuffle
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Checkpoint file
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Input PGM image
    #[arg(long)]
    pub image: PathBuf,
    /// Output GeoJSON LineString (pixel coordinates)
    #[arg(long)]
    pub out: PathBuf,
    /// Optional SVG overlay output
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Optional per-iteration GeoJSON FeatureCollection output
    #[arg(long)]
    pub iterations_out: Option<PathBuf>,
    /// Optional ground-truth GeoJSON to draw into the SVG overlay
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Run configuration file (defaults to the built-in configuration)
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint file
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Which split to evaluate
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,
    /// Output CSV report
    #[arg(long)]
    pub out: PathBuf,
    /// Run configuration file (defaults to the built-in configuration)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Train/val/test fractions
    #[arg(long, default_value = "0.7,0.15,0.15")]
    pub split_frac: String,
    /// Seed for the split shuffle
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Args)]
pub struct UncertaintyArgs {
    /// Checkpoint file
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Which split to evaluate
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,
    /// MC-dropout samples per scene
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
    /// Dropout rate used for sampling
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    /// Base seed for the MC samples
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV report
    #[arg(long)]
    pub out: PathBuf,
    /// Run configuration file (defaults to the built-in configuration)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Train/val/test fractions
    #[arg(long, default_value = "0.7,0.15,0.15")]
    pub split_frac: String,
    /// Seed for the split shuffle
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum AblationAxis {
    Loss,
    Vertices,
    Iterations,
    Coord,
    Gradstop,
    Deepsup,
    Shared,
}

impl std::fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AblationAxis::Loss => "loss",
            AblationAxis::Vertices => "vertices",
            AblationAxis::Iterations => "iterations",
            AblationAxis::Coord => "coord",
            AblationAxis::Gradstop => "gradstop",
            AblationAxis::Deepsup => "deepsup",
            AblationAxis::Shared => "shared",
        };
        f.write_str(s)
    }
}

#[derive(Args)]
pub struct AblateArgs {
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Base run configuration file
    #[arg(long)]
    pub config: PathBuf,
    /// Which hyperparameter to sweep
    #[arg(long, value_enum)]
    pub axis: AblationAxis,
    /// Output directory (per-run artifacts + summary.csv)
    #[arg(long)]
    pub out: PathBuf,
    /// Train/val/test fractions
    #[arg(long, default_value = "0.7,0.15,0.15")]
    pub split_frac: String,
    /// Seed for the split shuffle
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Args)]
pub struct ConfigArgs {
    /// Where to write the default configuration
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: &Cli) -> cobra_core::Result<()> {
    match &cli.command {
        Command::Generate(args) => commands::cmd_generate(args),
        Command::Train(args) => commands::cmd_train(args),
        Command::Predict(args) => commands::cmd_predict(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::Uncertainty(args) => commands::cmd_uncertainty(args),
        Command::Ablate(args) => commands::cmd_ablate(args),
        Command::Config(args) => commands::write_default_config(&args.out),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        let msg = e.to_string().replace('\n', " ");
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}
