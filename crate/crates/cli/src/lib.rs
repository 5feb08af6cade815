//! Command-line driver: synthetic sequences, benchmark runs, threshold
//! calibration, factor sweeps and change-propagation analysis.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod report;

/// Exit statuses of the `cbinfer` binary.
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] cbinfer::Error),
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("verification failed: {0}")]
    Verify(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Data(cbinfer::Error::Argument(_)) => EXIT_USAGE,
            CliError::Data(_) | CliError::Csv { .. } => EXIT_DATA,
            CliError::Verify(_) => EXIT_VERIFY,
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "cbinfer",
    version,
    about = "Change-based CNN inference for static-camera video"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic static-camera sequence
    Synth(SynthArgs),
    /// Write synthetic weights for a network spec
    Weights(WeightsArgs),
    /// Run a sequence through one or both engines and report per-frame counters
    Run(RunArgs),
    /// Choose per-layer thresholds within an error budget
    Calibrate(CalibrateArgs),
    /// Scale a threshold vector by several factors and measure each
    Sweep(SweepArgs),
    /// Compare detected changes with worst-case propagation per layer
    AnalyzeProp(AnalyzeArgs),
    /// Print buffer sizes of a network under each memory layout
    Memory(MemoryArgs),
}

#[derive(Args, Debug)]
pub struct NetArgs {
    /// Network spec (JSON)
    #[arg(long)]
    pub net: PathBuf,
    /// Directory holding one weight file per conv layer
    #[arg(long)]
    pub weights: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    /// Sprite as SIZE:VY:VX:INTENSITY (repeatable); start drawn from the seed
    #[arg(long = "sprite", value_parser = parse_sprite)]
    pub sprites: Vec<cbinfer::Sprite>,
    /// Amplitude of additive uniform noise per pixel and frame
    #[arg(long, default_value_t = 0.0)]
    pub noise: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum InitKind {
    /// Zero-mean random filters
    Random,
    /// Smoothing filters and a brightness classifier
    Labeler,
}

#[derive(Args, Debug)]
pub struct WeightsArgs {
    #[arg(long)]
    pub net: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = InitKind::Random)]
    pub init: InitKind,
    /// Mean intensity separating class 0 from class 1 (labeler only)
    #[arg(long, default_value_t = 0.5)]
    pub split: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub seq: PathBuf,
    /// Run only this engine (default: both)
    #[arg(long)]
    pub engine: Option<cbinfer::Engine>,
    /// Override the network file's CBCONV thresholds
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f32>>,
    /// CSV output (default: stdout)
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Compare against the baseline; at all-zero thresholds any difference fails
    #[arg(long)]
    pub verify: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ReferenceKind {
    /// The same network with all thresholds at zero
    Exact,
    /// Ground-truth labels stored with the sequence
    Truth,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long, required = true)]
    pub seq: Vec<PathBuf>,
    /// Allowed error increase in percentage points
    #[arg(long, default_value_t = cbinfer::calibrate::DEFAULT_BUDGET)]
    pub budget: f64,
    #[arg(long, default_value_t = cbinfer::calibrate::DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    #[arg(long, value_enum, default_value_t = ReferenceKind::Exact)]
    pub reference: ReferenceKind,
    /// Per-(layer, threshold) error table
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write the chosen thresholds as a JSON array
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long, required = true)]
    pub seq: Vec<PathBuf>,
    /// Base threshold vector (default: from the network file)
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f32>>,
    /// Factors to apply, comma separated or repeated
    #[arg(long = "factor", value_delimiter = ',', required = true)]
    pub factors: Vec<f32>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub seq: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f32>>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MemoryArgs {
    /// Network spec (JSON); the built-in full-size network when absent
    #[arg(long)]
    pub net: Option<PathBuf>,
}

fn parse_sprite(text: &str) -> Result<cbinfer::Sprite, String> {
    let parts: Vec<&str> = text.split(':').collect();
    let [size, vy, vx, intensity] = parts.as_slice() else {
        return Err("expected SIZE:VY:VX:INTENSITY".into());
    };
    let err = |what: &str| format!("bad {what} in sprite {text:?}");
    Ok(cbinfer::Sprite {
        size: size.parse().map_err(|_| err("size"))?,
        velocity: (
            vy.parse().map_err(|_| err("vy"))?,
            vx.parse().map_err(|_| err("vx"))?,
        ),
        intensity: intensity.parse().map_err(|_| err("intensity"))?,
        start: None,
    })
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Weights(a) => commands::weights(&a),
        Command::Run(a) => commands::run(&a),
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::AnalyzeProp(a) => commands::analyze_propagation(&a),
        Command::Memory(a) => commands::memory(&a),
    }
}
