//! Command-line front-end: dataset synthesis and cropping, pair lists,
//! adversarial and verifier training, depth generation and evaluation.
//!
//! Exit codes: `0` success, `1` runtime failure, `2` usage or
//! configuration error.

pub mod checkpoint;
pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "facedepth", version, about = "Facial depth-map estimation from gray-level images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic paired gray/depth dataset.
    Synth(SynthArgs),
    /// Crop every sample of a dataset to the depth-adaptive face box.
    Crop(CropArgs),
    /// Write a seeded verification pair list.
    MakePairs(MakePairsArgs),
    /// Adversarial training of the generator and discriminator.
    Train(TrainArgs),
    /// Train the Siamese verifier on original depth maps.
    TrainVerifier(TrainVerifierArgs),
    /// Estimate depth maps for every `*_gray.pgm` under a directory.
    Generate(GenerateArgs),
    /// Pixel-wise and verification metrics of predicted depth maps.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub subjects: u32,
    /// Frames per subject.
    #[arg(long)]
    pub frames: u32,
    /// Image side; must be divisible by 16.
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CropArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Horizontal focal length in pixels.
    #[arg(long)]
    pub fx: f64,
    #[arg(long)]
    pub fy: f64,
    /// Average face width in mm.
    #[arg(long, default_value_t = 320.0)]
    pub rx: f64,
    #[arg(long, default_value_t = 320.0)]
    pub ry: f64,
    /// Half-size of the depth window used for the head distance.
    #[arg(long, default_value_t = 5)]
    pub radius: usize,
}

#[derive(Debug, Args)]
pub struct MakePairsArgs {
    /// Dataset root.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub n: usize,
    /// Fraction of same-subject pairs.
    #[arg(long, default_value_t = 0.5)]
    pub balance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Restrict to these subjects (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub subjects: Option<Vec<u32>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Generator checkpoint to continue from; the discriminator checkpoint
    /// of the same epoch is read from the same directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainVerifierArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted depth maps, laid out like the target directory.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Pair list with paths relative to the target directory.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Verifier checkpoint; required with `--pairs`.
    #[arg(long)]
    pub verifier: Option<PathBuf>,
    /// Also report verification accuracy per pose/sequence subset.
    #[arg(long)]
    pub subsets: bool,
    /// `8bit` or `millimeters`.
    #[arg(long, default_value = "8bit")]
    pub value_space: String,
    #[arg(long, default_value_t = 400.0)]
    pub depth_min: f64,
    #[arg(long, default_value_t = 2000.0)]
    pub depth_max: f64,
    /// Directory for `report.csv` (and `subsets.csv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Self {
            code: 2,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        Self {
            code: 1,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<facedepth_core::Error> for Failure {
    fn from(e: facedepth_core::Error) -> Self {
        let code = if matches!(e, facedepth_core::Error::Config(_)) { 2 } else { 1 };
        Self {
            code,
            error: e.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

pub type CmdResult<T = ()> = std::result::Result<T, Failure>;

pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Synth(a) => commands::synth::run(&a),
        Command::Crop(a) => commands::crop::run(&a),
        Command::MakePairs(a) => commands::pairs::run(&a),
        Command::Train(a) => commands::train::run(&a),
        Command::TrainVerifier(a) => commands::verifier::run(&a),
        Command::Generate(a) => commands::generate::run(&a),
        Command::Eval(a) => commands::eval::run(&a),
    }
}
