mod commands;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use noisekit::Error;

#[derive(Parser)]
#[command(name = "noisekit", version, about = "Raw sensor noise synthesis, calibration and estimation")]
struct Cli {
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DatasetMode {
    /// Clean/noisy pairs over procedural scenes.
    Pairs,
    /// Flat-field series and dark frames for the oracle estimator.
    Calibration,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Default,
    Toy,
}

#[derive(Subcommand)]
pub enum Command {
    /// Add synthetic noise to a clean tensor.
    Synthesize {
        #[arg(long)]
        clean: PathBuf,
        /// NoiseParams JSON file, or an inline JSON object.
        #[arg(long)]
        params: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Clip the result to [0, white level].
        #[arg(long)]
        clamp: bool,
        #[arg(long, default_value_t = 1023.0)]
        white_level: f64,
        #[arg(long, default_value = "synthetic")]
        camera_id: String,
        #[arg(long)]
        iso: Option<f64>,
    },
    /// Fit a camera model to per-image estimates.
    Calibrate {
        /// CSV with header image_id,K,sigma,mu_c,sigma_r (optionally followed by iso).
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate noise parameters with a trained checkpoint or the flat/dark oracle.
    Estimate {
        #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
        input: Option<PathBuf>,
        #[arg(long, requires = "input")]
        checkpoint: Option<PathBuf>,
        #[arg(long, requires_all = ["flat_series", "dark"])]
        oracle: bool,
        /// Directory of level_<value>/ subdirectories of flat frames.
        #[arg(long)]
        flat_series: Option<PathBuf>,
        /// Directory of dark frames.
        #[arg(long)]
        dark: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also append the tuple to this estimates CSV.
        #[arg(long)]
        append: Option<PathBuf>,
        /// Image id for the appended row (default: input file stem).
        #[arg(long)]
        image_id: Option<String>,
    },
    /// Draw parameter tuples from a camera model.
    SampleParams {
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pin the gain to alpha·ISO.
        #[arg(long)]
        iso: Option<f64>,
        /// Output CSV (default: standard output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a tree of synthetic tensors with manifests.
    GenDataset {
        #[arg(long, value_enum, default_value = "pairs")]
        mode: DatasetMode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Packed height of every tensor.
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 1023.0)]
        white_level: f64,
        /// Camera model JSON (pairs mode).
        #[arg(long)]
        camera: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long)]
        iso: Option<f64>,
        /// NoiseParams JSON file or inline object (calibration mode).
        #[arg(long)]
        params: Option<String>,
        /// Comma-separated flat-field levels (calibration mode).
        #[arg(long, value_delimiter = ',', default_value = "25,50,100,200,400,800")]
        levels: Vec<f64>,
        /// Frames per level and dark frames (calibration mode).
        #[arg(long, default_value_t = 16)]
        frames: usize,
    },
    /// Histogram KL divergence between two noise samples.
    EvalKl {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        /// Subtracted from the reference to isolate its noise.
        #[arg(long)]
        reference_clean: Option<PathBuf>,
        #[arg(long)]
        candidate_clean: Option<PathBuf>,
        #[arg(long, default_value_t = noisekit::metrics::DEFAULT_BINS)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the contrastive estimator on procedural scenes.
    Train {
        /// JSON object of EstimatorConfig fields overriding the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "default")]
        preset: Preset,
        /// Camera model JSON files (default: the built-in virtual bank).
        #[arg(long)]
        camera: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("IO_ERROR: cannot start {n} worker threads: {e}");
            return ExitCode::from(3);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> ExitCode {
    let msg = e.to_string().replace('\n', " ");
    eprintln!("{}: {}", e.code(), msg);
    ExitCode::from(if e.is_validation() { 2 } else { 3 })
}
