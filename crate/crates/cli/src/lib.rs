//! The `imt` command line: argument grammar, subcommands and exit codes.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use imt_core::ImtError;

pub use config::{DataConfig, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_CHECKPOINT: i32 = 4;
pub const EXIT_BASELINE: i32 = 5;

pub fn exit_code(e: &ImtError) -> i32 {
    match e {
        ImtError::Diverged(_) => EXIT_DIVERGED,
        ImtError::CheckpointMismatch(_) => EXIT_CHECKPOINT,
        ImtError::Baseline(_) => EXIT_BASELINE,
        _ => EXIT_INPUT,
    }
}

#[derive(Debug, Parser)]
#[command(name = "imt", version, about = "Complex-valued MRI denoising with an imaging transformer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic complex phantom stacks.
    Phantom(PhantomArgs),
    /// Add g-factor-shaped noise to a clean stack.
    Synth(SynthArgs),
    /// Train a model from a directory of clean stacks.
    Train(TrainArgs),
    /// Denoise a stack with a trained checkpoint.
    Denoise(DenoiseArgs),
    /// Compare a test stack to a reference (PSNR, SSIM, NRMSE).
    Eval(EvalArgs),
    /// Paired reader-score statistics.
    Report(ReportArgs),
    /// Denoise with wavelet shrinkage or an external program at the adjusted sigma.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub slices: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub clean: PathBuf,
    /// g-factor map file (IMTS, real).
    #[arg(long, conflicts_with = "gmap_model")]
    pub gmap: Option<PathBuf>,
    /// `uniform` or `radial:<alpha>`.
    #[arg(long)]
    pub gmap_model: Option<String>,
    #[arg(long)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub json: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Two rater-score CSV files, compared case by case.
    #[arg(long, num_args = 2, required = true)]
    pub scores: Vec<PathBuf>,
    #[arg(long)]
    pub icc: bool,
    /// Write per-case Bland-Altman points to this CSV.
    #[arg(long)]
    pub bland_altman: Option<PathBuf>,
    #[arg(long)]
    pub ttest: bool,
    /// Where to write the statistics; standard output otherwise.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Noise level; the adjusted estimate otherwise.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// External denoiser run as `<program> <in> <out> --sigma <s>`.
    #[arg(long)]
    pub external: Option<PathBuf>,
    #[arg(long, default_value_t = 600)]
    pub timeout_secs: u64,
}
