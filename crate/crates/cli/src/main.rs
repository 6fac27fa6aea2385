//! `fhss-scope`: synthesize controller captures, detect and group hops, score runs.
//!
//! Exit status: 0 success, 2 configuration error, 3 input/output error,
//! 4 internal invariant breach.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fhss_core::ErrorKind;

#[derive(Parser, Debug)]
#[command(name = "fhss-scope", version, about)]
pub struct Cli {
    /// Pipeline configuration (JSON); flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps; 0 uses all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a scenario to a raw cf32 capture with metadata and ground truth.
    Synth(SynthArgs),
    /// Find hops in a capture and group them by source.
    Detect(DetectArgs),
    /// Score a hops CSV against ground truth.
    Eval(EvalArgs),
    /// Average NMSE over seeds along an SNR, window or distance axis.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Scenario file (JSON); the single-controller default when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Overrides the scenario SNR.
    #[arg(long, allow_negative_numbers = true)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub meta: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// Raw cf32 capture.
    #[arg(long, required_unless_present = "from_mask", requires = "meta")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Resume from a mask dump instead of a capture.
    #[arg(long, conflicts_with_all = ["input", "segment", "dump_spectrogram", "dump_image"])]
    pub from_mask: Option<PathBuf>,
    /// Hops CSV destination.
    #[arg(long)]
    pub out: PathBuf,
    /// STFT window length, or `auto`.
    #[arg(long)]
    pub window: Option<WindowArg>,
    #[arg(long)]
    pub overlap: Option<usize>,
    #[arg(long)]
    pub top_frac: Option<f64>,
    /// Closing kernel as ROWSxCOLS (frequency x time), e.g. 3x5.
    #[arg(long)]
    pub kernel: Option<Kernel>,
    #[arg(long)]
    pub min_dwell_frames: Option<usize>,
    #[arg(long)]
    pub min_bins: Option<usize>,
    /// Congruence tolerance in frames.
    #[arg(long)]
    pub tol_frames: Option<f64>,
    /// Peak admission ratio relative to the period peak.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, value_enum)]
    pub rule: Option<RuleArg>,
    /// Run the sequential code path.
    #[arg(long)]
    pub sequential: bool,
    /// Process consecutive pieces of this many samples.
    #[arg(long)]
    pub segment: Option<usize>,
    #[arg(long)]
    pub dump_spectrogram: Option<PathBuf>,
    /// Grayscale PGM rendering of the spectrogram.
    #[arg(long)]
    pub dump_image: Option<PathBuf>,
    #[arg(long)]
    pub dump_mask: Option<PathBuf>,
    #[arg(long)]
    pub dump_acf: Option<PathBuf>,
    /// JSON summary of the run: configuration, threshold, period and sources.
    #[arg(long)]
    pub run_meta: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub hops: PathBuf,
    /// Run summary from `detect`; its capture id must match the truth.
    #[arg(long)]
    pub run_meta: Option<PathBuf>,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Sweep definition (JSON); replaces the axis flags.
    #[arg(long, conflicts_with_all = ["axis", "values"])]
    pub sweep: Option<PathBuf>,
    #[arg(long, value_enum, requires = "values")]
    pub axis: Option<AxisArg>,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub values: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Distance axis: SNR at the reference distance.
    #[arg(long, default_value_t = 20.0, allow_negative_numbers = true)]
    pub ref_snr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub ref_distance: f64,
    #[arg(long, default_value_t = 2.0)]
    pub path_loss_exponent: f64,
    /// Summary CSV destination.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-trial reports as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowArg {
    Auto,
    Size(usize),
}

impl FromStr for WindowArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(WindowArg::Auto);
        }
        s.parse()
            .map(WindowArg::Size)
            .map_err(|_| format!("expected a window length or `auto`, got `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Kernel {
    pub rows: usize,
    pub cols: usize,
}

impl FromStr for Kernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("expected ROWSxCOLS, got `{s}`");
        let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        Ok(Kernel {
            rows: r.trim().parse().map_err(|_| bad())?,
            cols: c.trim().parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RuleArg {
    Consistent,
    Transitive,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AxisArg {
    Snr,
    Window,
    Distance,
}

fn exit_status(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<fhss_core::Error>()) {
        Some(e) => match e.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Io => 3,
            ErrorKind::Invariant => 4,
        },
        None => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
