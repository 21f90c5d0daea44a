//! Command-line front end: argument parsing, configuration and commands.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gfte_core::model::Variant;
use gfte_core::train::GraphMode;
use gfte_core::{Error, ErrorClass};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "gfte", version, about = "Table structure recognition with a graph network over table cells")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream (generation, shuffling, initialization, sampling).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-table stages; 0 uses every core [default: 1].
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the default configuration file.
    Config,
    /// Generate a synthetic dataset (manifest, tables, images).
    Gen(GenArgs),
    /// Train the horizontal and vertical models.
    Train(TrainArgs),
    /// Score a predictor on a dataset, or run the three-variant ablation.
    Eval(EvalArgs),
    /// Predict same-row and same-column relations for one table.
    Predict(PredictArgs),
    /// Rebuild the grid from relations.
    Recover(RecoverArgs),
    /// Compare analytic gradients of every layer and the full loss with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_tables: Option<usize>,
    #[arg(long)]
    pub merge_probability: Option<f64>,
    #[arg(long)]
    pub dropped_line_probability: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Pos,
    #[value(name = "pos_text", alias = "pos-text")]
    PosText,
    Full,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Pos => Variant::Pos,
            VariantArg::PosText => Variant::PosText,
            VariantArg::Full => Variant::Full,
        }
    }
}

/// Training overrides shared by `train` and `eval --ablation`.
#[derive(Debug, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory (generated or SciTSR layout).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints, loss curves and the summary.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphArg {
    Knn,
    Complete,
}

impl From<GraphArg> for GraphMode {
    fn from(g: GraphArg) -> Self {
        match g {
            GraphArg::Knn => GraphMode::Knn,
            GraphArg::Complete => GraphMode::Complete,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory (generated or SciTSR layout).
    #[arg(long)]
    pub data: PathBuf,
    /// Directory holding `horizontal.ckpt` and `vertical.ckpt`.
    #[arg(long, conflicts_with_all = ["oracle", "ablation"], required_unless_present_any = ["oracle", "ablation"])]
    pub checkpoints: Option<PathBuf>,
    /// Score the ground-truth relations instead of a model.
    #[arg(long, conflicts_with = "ablation")]
    pub oracle: bool,
    /// Train and score all three variants on one split of the dataset.
    #[arg(long)]
    pub ablation: bool,
    #[arg(long, value_enum)]
    pub graph: Option<GraphArg>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Keep every edge prediction in the JSON report.
    #[arg(long)]
    pub keep_edges: bool,
    /// Row label in the results table [default: dataset directory name].
    #[arg(long)]
    pub name: Option<String>,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoints: PathBuf,
    /// Table JSON file.
    #[arg(long)]
    pub table: PathBuf,
    /// Table image (PGM).
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Write the relations here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Html,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    /// Relations JSON written by `predict`.
    #[arg(long, conflicts_with = "checkpoints", required_unless_present = "checkpoints")]
    pub relations: Option<PathBuf>,
    /// Predict the relations with these checkpoints first.
    #[arg(long, requires_all = ["table", "image"])]
    pub checkpoints: Option<PathBuf>,
    /// Table JSON; supplies cell text, and the input when predicting.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Usage => EXIT_USAGE,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numeric => EXIT_NUMERIC,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Results go to `out`; errors and progress go to standard error.
pub fn run<I, T>(args: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
