//! Command-line front end for the rawnet vocoder.
//!
//! Exit codes: 0 on success, 1 for runtime or data errors, 2 for usage
//! errors (including everything clap rejects).

mod commands;
mod error;
pub mod featfile;
pub mod settings;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rawnet::voder::SamplingStrategy;

pub use commands::run;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "rawnet", version, about = "Raw-waveform neural vocoder: train, analyze, synthesize")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train coder and voder jointly on a directory of WAV files.
    Train(TrainArgs),
    /// Extract a feature file from a WAV with a trained coder.
    Analyze(AnalyzeArgs),
    /// Generate a WAV from a feature file with a trained voder.
    Synthesize(SynthesizeArgs),
    /// Analyze then synthesize in one go and report the SNR.
    CopySyn(CopySynArgs),
    /// Zero low-energy frames of a WAV.
    Denoise(DenoiseArgs),
    /// Write a feature file as CSV plus a grayscale PGM image.
    DumpFeatures(DumpFeaturesArgs),
    /// Finite-difference check of every layer's backward pass.
    Gradcheck(GradcheckArgs),
    /// Print every config key with its default value.
    Defaults,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ArchPreset {
    Default,
    Tiny,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of mono 16-bit WAV files.
    pub data_dir: PathBuf,
    /// Checkpoint written periodically and at the end.
    pub checkpoint_out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Architecture preset, overriding the config file. Ignored with --resume.
    #[arg(long, value_enum)]
    pub arch: Option<ArchPreset>,
    /// Total step count to reach (a resumed run counts its earlier steps).
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub clip_samples: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub voder_sigma: Option<f64>,
    #[arg(long)]
    pub coder_sigma: Option<f64>,
    #[arg(long)]
    pub checkpoint_interval: Option<u64>,
    /// Continue from this checkpoint; its architecture and optimizer state win.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub wav_in: PathBuf,
    pub checkpoint: PathBuf,
    pub feat_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SamplerArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub sampler: Option<SamplingStrategy>,
    /// Logit scale on voiced frames for `conditional`.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub pc_gain: Option<f64>,
    /// Seed for the random samplers. Without one a random seed is drawn.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gate silent frames of the output.
    #[arg(long)]
    pub denoise: bool,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    pub feat_in: PathBuf,
    pub checkpoint: PathBuf,
    pub wav_out: PathBuf,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Estimate pitch from this WAV (for the pitch-dependent samplers).
    #[arg(long, conflicts_with = "pitch_file")]
    pub pitch_from: Option<PathBuf>,
    /// Read pitch from a `period,correlation` CSV, one line per frame.
    #[arg(long)]
    pub pitch_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CopySynArgs {
    pub wav_in: PathBuf,
    pub checkpoint: PathBuf,
    pub wav_out: PathBuf,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    pub wav_in: PathBuf,
    pub wav_out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub threshold_db: Option<f64>,
    #[arg(long)]
    pub hangover_frames: Option<usize>,
    #[arg(long)]
    pub frame_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DumpFeaturesArgs {
    pub feat_in: PathBuf,
    /// Writes `<prefix>.csv` and `<prefix>.pgm`.
    pub out_prefix: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GradScale {
    Tiny,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "tiny")]
    pub scale: GradScale,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupt the dense backward pass; the check must then fail.
    #[arg(long, hide = true)]
    pub plant_fault: bool,
}
