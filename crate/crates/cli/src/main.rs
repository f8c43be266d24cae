//! `seacolor`: underwater color correction from an image and a range map.
//!
//! Exit codes: 0 success, 2 usage or input error, 1 internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seacolor::synth::RangeProfile;

mod commands;
mod config;

#[derive(Parser, Debug)]
#[command(name = "seacolor", version, about = "Physics-based underwater color correction")]
struct Cli {
    /// Worker threads for pixel reductions; output does not depend on it [default: 1]
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit both stages on one image and write the corrected image
    Correct(CorrectArgs),
    /// Correct a directory of frames, carrying the fit from frame to frame
    Stream(StreamArgs),
    /// Generate a synthetic scene bundle (J.png, Z.pfm, I.png, params.txt)
    Synth(SynthArgs),
    /// Print the gray-patch angular error of an image, in degrees
    Eval(EvalArgs),
    /// Time both fitting stages per iteration
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct CorrectArgs {
    /// Captured image (8- or 16-bit RGB PNG)
    #[arg(long)]
    pub image: PathBuf,
    /// Range map (PFM, or 16-bit PNG with a `.scale` sidecar)
    #[arg(long)]
    pub range: PathBuf,
    /// Output PNG
    #[arg(long)]
    pub out: PathBuf,
    /// Backscatter iterations [default: 500]
    #[arg(long, value_name = "N")]
    pub iters_bs: Option<usize>,
    /// Attenuation iterations [default: 500]
    #[arg(long, value_name = "N")]
    pub iters_at: Option<usize>,
    /// `key = value` config file; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the fitted state here
    #[arg(long)]
    pub state_out: Option<PathBuf>,
    /// Write loss traces and the dark-pixel report here
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StreamArgs {
    /// Directory of frames, processed in filename-stem order
    #[arg(long)]
    pub images: PathBuf,
    /// Directory of range maps paired to frames by stem
    #[arg(long)]
    pub ranges: PathBuf,
    /// Output directory, one `<stem>.png` per frame
    #[arg(long)]
    pub out: PathBuf,
    /// Iterations of each stage per frame [default: 10]
    #[arg(long, value_name = "N")]
    pub iters_per_frame: Option<usize>,
    /// `key = value` config file; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from this fitted state instead of a fresh guess
    #[arg(long)]
    pub state_in: Option<PathBuf>,
    /// Write the final state here
    #[arg(long)]
    pub state_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    /// Range layout: ramp, radial or smooth
    #[arg(long, default_value = "ramp")]
    pub profile: RangeProfile,
    /// Embed a six-patch gray chart and write patches.csv
    #[arg(long)]
    pub chart: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Image to evaluate (PNG)
    #[arg(long)]
    pub image: PathBuf,
    /// Patch rectangles, CSV with header `x,y,w,h`
    #[arg(long)]
    pub patches: PathBuf,
    /// Transfer curve of the image: linear or srgb
    #[arg(long, default_value = "linear")]
    pub transfer: seacolor::io::Transfer,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Image width; with --height, benchmarks one size instead of the 0.7M and 2.4M pair
    #[arg(long, requires = "height")]
    pub width: Option<usize>,
    /// Image height
    #[arg(long, requires = "width")]
    pub height: Option<usize>,
    /// Iterations of each stage per repeat
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    /// Repeats; the median is reported
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Scene seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// A failure with its exit code.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Internal(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Internal(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Correct(args) => commands::correct(&args, cli.threads),
        Command::Stream(args) => commands::stream(&args, cli.threads),
        Command::Synth(args) => commands::synth(&args),
        Command::Eval(args) => commands::eval(&args),
        Command::Bench(args) => commands::bench(&args, cli.threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
