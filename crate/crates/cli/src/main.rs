//! `qtn`: train, evaluate and run QuickTumorNet from the command line.

mod cmd;
mod config;
mod overlay;
mod status;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use qtn_core::data::{Split, SplitRatios};
use qtn_core::loss::L2Normalization;
use qtn_core::Precision;

use status::Status;

#[derive(Debug, Parser)]
#[command(name = "qtn", version, about = "Brain-tumour slice segmentation with QuickTumorNet")]
pub struct Cli {
    /// Seed for every random choice; a random one is picked and logged if omitted.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Arithmetic precision.
    #[arg(long, global = true, value_enum, default_value_t = PrecisionArg::F32)]
    pub precision: PrecisionArg,

    /// File of `key = value` lines, one per flag (command-line flags win).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum L2Arg {
    ClassSets,
    FlaggedSets,
}

impl From<L2Arg> for L2Normalization {
    fn from(a: L2Arg) -> Self {
        match a {
            L2Arg::ClassSets => L2Normalization::ClassSets,
            L2Arg::FlaggedSets => L2Normalization::FlaggedSets,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on the train split of a manifest, validating on its val split.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Score a checkpoint on one split and write a report.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Segment a slice file or every image slice in a directory.
    #[command(args_override_self = true)]
    Predict(PredictArgs),
    /// Generate a synthetic labelled dataset with a patient-wise split.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
}

/// `N` or `HxW`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Size(pub usize, pub usize);

impl std::str::FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |p: &str| p.trim().parse::<usize>().map_err(|_| format!("bad size {s:?}"));
        match s.split_once(['x', 'X']) {
            Some((h, w)) => Ok(Size(num(h)?, num(w)?)),
            None => num(s).map(|n| Size(n, n)),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest CSV.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run directory for checkpoints and the learning curve.
    #[arg(long, visible_alias = "checkpoint-dir")]
    pub out: PathBuf,
    #[arg(long, visible_alias = "max-epochs", default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, visible_alias = "learning-rate", default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Feature maps per block.
    #[arg(long, default_value_t = 64)]
    pub base_channels: usize,
    /// Training resolution (`N` or `HxW`); defaults to the first training slice's size.
    #[arg(long)]
    pub size: Option<Size>,
    /// Split applied to manifests without split tags.
    #[arg(long, default_value_t = SplitRatios::default())]
    pub ratios: SplitRatios,
    /// Continue from OUT/last.qtnw.
    #[arg(long)]
    pub resume: bool,
    /// Write zero seconds in the learning curve (byte-reproducible runs).
    #[arg(long)]
    pub no_timing: bool,
    /// Rescale gradients whose global norm exceeds this.
    #[arg(long)]
    pub clip_grad_norm: Option<f64>,
    /// Probability threshold that flags false positives / negatives.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = L2Arg::ClassSets)]
    pub l2_normalization: L2Arg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = Split::Test)]
    pub split: Split,
    /// Directory for report.json, confusion.csv and roc_<class>.csv.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Pixels per class kept for the ROC curve (reservoir-sampled).
    #[arg(long, default_value_t = qtn_core::metrics::DEFAULT_MAX_ROC_SAMPLES)]
    pub max_roc_samples: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Image slice file, or a directory of them.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "predictions")]
    pub out: PathBuf,
    /// Also write a PPM with class-coloured boundaries.
    #[arg(long)]
    pub overlay: bool,
    /// Resample inputs to the network's training size (and masks back).
    #[arg(long)]
    pub resize: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Number of slices.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Side length in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Train, val, test fractions of patients.
    #[arg(long, default_value_t = SplitRatios::default())]
    pub ratios: SplitRatios,
}

/// `--seed` if given, otherwise a fresh one that is logged so the run can be
/// repeated.
pub fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>() >> 11;
        eprintln!("no --seed given; using --seed {s}");
        s
    })
}

fn parse(args: Vec<String>) -> Result<Cli, ExitCode> {
    let args = match config::config_path(&args) {
        Some(path) => match config::expand(args, path.as_ref()) {
            Ok(a) => a,
            Err(e) => {
                eprintln!("error: {e:#}");
                return Err(Status::Usage.into());
            }
        },
        None => args,
    };
    Cli::try_parse_from(args).map_err(|e| {
        let _ = e.print();
        match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
            _ => Status::Usage.into(),
        }
    })
}

fn main() -> ExitCode {
    let cli = match parse(std::env::args().collect()) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match cmd::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.status.into()
        }
    }
}
