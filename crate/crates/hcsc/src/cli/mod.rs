//! The `hcsc` command line.
//!
//! Every subcommand accepts `--config FILE`, a flat `key=value` file whose keys
//! are the subcommand's long flag names. Flags given on the command line win
//! over the file.

mod commands;
mod config;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use crate::dataio::DataError;

pub use config::expand_config;

#[derive(Debug, Parser)]
#[command(
    name = "hcsc",
    version,
    about = "Hierarchical convolutional sparse coding: train, encode, reconstruct, classify and visualize"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn the filter banks from MNIST training images.
    Train(TrainArgs),
    /// Encode images with a trained model and dump the codes.
    Encode(EncodeArgs),
    /// Reconstruct images from their codes and report per-layer errors.
    Reconstruct(ReconstructArgs),
    /// Fit a logistic-regression head on the codes and report accuracy.
    Classify(ClassifyArgs),
    /// Export filter or code montages as PGM images.
    Visualize(VisualizeArgs),
    /// Evaluate a model (and its classifier head, if any) on the test split.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Flat key=value file of flag defaults
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for batch encoding [default: available cores]
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory holding the MNIST IDX files
    #[arg(long, env = "HCSC_MNIST_DIR", default_value = "data/mnist")]
    pub data_dir: PathBuf,
    /// Use only the first N training images
    #[arg(long, value_name = "N")]
    pub train_subset: Option<usize>,
    /// Use only the first N test images
    #[arg(long, value_name = "N")]
    pub test_subset: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    /// Share one (A, B) filter pair across all layers
    #[arg(long, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    pub tied: bool,
    /// Channels of each detail signal u
    #[arg(long, default_value_t = 32)]
    pub detail_channels: usize,
    /// Channels of each scale signal x
    #[arg(long, default_value_t = 1)]
    pub scale_channels: usize,
    /// Square kernel size
    #[arg(long, default_value_t = 5)]
    pub kernel: usize,
    /// Learn the scale filters instead of fixing them to a box filter
    #[arg(long, default_value_t = false, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    pub trainable_scale: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// l1 weight on the detail codes
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Ridge weight on the scale codes
    #[arg(long, default_value_t = 0.01)]
    pub gamma: f64,
    /// FISTA step size
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    /// FISTA iterations per layer
    #[arg(long, default_value_t = 40)]
    pub fista_iters: usize,
}

/// Solver overrides for commands that start from a checkpoint.
#[derive(Debug, Clone, Args)]
pub struct SolverOverrides {
    /// l1 weight on the detail codes [default: from the checkpoint]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Ridge weight on the scale codes [default: from the checkpoint]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// FISTA step size [default: from the checkpoint]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// FISTA iterations per layer [default: from the checkpoint]
    #[arg(long)]
    pub fista_iters: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputNorm {
    /// Zero mean, unit variance over the training pixels
    Standard,
    /// Raw pixels in [0, 1]
    None,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Dictionary learning rate
    #[arg(long, default_value_t = 0.1)]
    pub dict_lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    /// Pixel normalization applied before coding
    #[arg(long, value_enum, default_value_t = InputNorm::Standard)]
    pub input_norm: InputNorm,
    /// Training images whose reconstruction error is reported before training and after every epoch
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub probe: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverOverrides,
    /// Model checkpoint
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverOverrides,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Images to reconstruct (the first N of the split)
    #[arg(long, value_name = "N", default_value_t = 16)]
    pub count: usize,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverOverrides,
    #[arg(long)]
    pub model: PathBuf,
    /// Classifier learning rate
    #[arg(long, default_value_t = 0.1)]
    pub clf_lr: f64,
    /// Classifier epochs
    #[arg(long, default_value_t = 30)]
    pub clf_epochs: usize,
    /// Classifier minibatch size
    #[arg(long, default_value_t = 128)]
    pub clf_batch_size: usize,
    /// L2 penalty on the classifier weights
    #[arg(long, default_value_t = hcsc_core::classifier::FitSettings::default().l2)]
    pub clf_l2: f64,
    /// Use every scale signal x_1..x_L as features, not only x_L
    #[arg(long, default_value_t = false, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    pub all_scales: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum What {
    Filters,
    Codes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BankArg {
    A,
    B,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct VisualizeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverOverrides,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = What::Filters)]
    pub what: What,
    /// Filter bank to draw
    #[arg(long, value_enum, default_value_t = BankArg::B)]
    pub bank: BankArg,
    /// 1-based layer
    #[arg(long, default_value_t = 1)]
    pub layer: usize,
    /// Index of the image whose codes are drawn
    #[arg(long, default_value_t = 0)]
    pub image: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Montage columns [default: next power of two of sqrt(tiles)]
    #[arg(long)]
    pub columns: Option<usize>,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverOverrides,
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(clap::Error),
    Config(String),
    Data(DataError),
    Model(hcsc_core::Error),
    Io(std::io::Error),
}

impl CliError {
    /// Machine-readable class printed in `error[class]`.
    pub fn class(&self) -> String {
        match self {
            CliError::Usage(_) => "usage".into(),
            CliError::Config(_) => "config".into(),
            CliError::Data(DataError::Model(e)) => format!("model:{}", e.class()),
            CliError::Data(e) => format!("data:{}", e.class()),
            CliError::Model(e) => format!("model:{}", e.class()),
            CliError::Io(_) => "io".into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) => write!(
                f,
                "{}",
                e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ")
            ),
            CliError::Config(m) => f.write_str(m),
            CliError::Data(e) => write!(f, "{e}"),
            CliError::Model(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e)
    }
}
impl From<hcsc_core::Error> for CliError {
    fn from(e: hcsc_core::Error) -> Self {
        CliError::Model(e)
    }
}
impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

/// Parses `args` (including the program name), expanding any `--config`
/// file, and runs the selected command, writing reports to `out`.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send)) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = expand_config(args)?;
    let cli = Cli::try_parse_from(args).map_err(CliError::Usage)?;
    commands::dispatch(cli.command, out)
}

/// Entry point of the binary: prints help/version or `error[class]: message`
/// and returns the process exit code (0 success, 2 bad invocation, 1 anything
/// that failed while running).
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut stdout = std::io::stdout();
    match run(args, &mut stdout) {
        Ok(()) => 0,
        Err(CliError::Usage(e))
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            let _ = write!(stdout, "{e}");
            0
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            if let CliError::Usage(u) = &e {
                let text = u.to_string();
                let rest: Vec<&str> = text.lines().skip(1).filter(|l| !l.trim().is_empty()).collect();
                for line in rest {
                    eprintln!("{line}");
                }
            }
            e.exit_code()
        }
    }
}
