//! `sram-ageing`: simulate fleets, extract features, tune, train and
//! evaluate usage-time estimators from SRAM startup dumps.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sram_ageing::ErrorKind;

/// Exit codes, stable across releases.
pub mod exit {
    pub const FAILURE: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const INVALID_INPUT: u8 = 3;
    pub const MISSING_INPUT: u8 = 4;
    pub const SCHEMA_MISMATCH: u8 = 5;
    pub const NUMERICAL: u8 = 6;
    pub const IO: u8 = 7;
}

#[derive(Parser, Debug)]
#[command(
    name = "sram-ageing",
    version,
    about = "Usage-time estimation from SRAM startup patterns"
)]
pub struct Cli {
    /// Root seed; every random stream of the run derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all available). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// TOML config file. Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More logging (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic fleet of aged devices (dumps + manifest).
    Simulate(SimulateArgs),
    /// Validate a manifest and summarise every device.
    Ingest(IngestArgs),
    /// Extract the feature table and freeze the frequency selection.
    Features(FeaturesArgs),
    /// Stratified device-level train/test split.
    Split(SplitArgs),
    /// Randomised hyperparameter search with device-level cross-validation.
    Tune(TuneArgs),
    /// Fit a final model with tuned hyperparameters.
    Train(TrainArgs),
    /// Score a trained model on held-out devices.
    Evaluate(EvaluateArgs),
    /// Bit-map images, block-P1 and spectrum tables/plots for devices.
    Render(RenderArgs),
    /// Run the full experiment and write the report.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DriftPreset {
    Strong,
    None,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub devices: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub sram_bytes: Option<usize>,
    #[arg(long)]
    pub usage_min: Option<f64>,
    #[arg(long)]
    pub usage_max: Option<f64>,
    #[arg(long, value_enum)]
    pub drift: Option<DriftPreset>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Summary JSON; printed as a table either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for features.csv, schema.json and split.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Existing split; computed from the seed when absent.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub block_bytes: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long, required_unless_present = "dataset", conflicts_with = "dataset")]
    pub manifest: Option<PathBuf>,
    /// Feature table to take device labels from instead of a manifest.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Regression,
    Classification,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checked against the split tags of the dataset.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "regression")]
    pub task: TaskArg,
    /// Class width in months (classification only).
    #[arg(long)]
    pub resolution: Option<u32>,
    /// Learners to tune (default: those in the config).
    #[arg(long = "learner")]
    pub learners: Vec<String>,
    /// Overrides every learner's candidate budget.
    #[arg(long)]
    pub candidates: Option<usize>,
    /// Drop the spectrum columns (the ablation setting).
    #[arg(long)]
    pub no_spectrum: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output of `tune`.
    #[arg(long)]
    pub tuned: PathBuf,
    /// Which tuned learner to fit (default: the first).
    #[arg(long)]
    pub learner: Option<String>,
    /// Schema the dataset was extracted with; its hash is stored in the model.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PartitionArg {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    pub dataset: Option<PathBuf>,
    /// Extract features from these devices instead of reading a table.
    #[arg(long, requires = "schema")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Restrict manifest devices to the test side of this split.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub partition: PartitionArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Unsorted,
    RowRanked,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Device to draw; give two to compare their spectra.
    #[arg(long = "device", required = true, num_args = 1)]
    pub devices: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "unsorted")]
    pub mode: ModeArg,
    #[arg(long)]
    pub block_bytes: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long, required_unless_present = "from")]
    pub manifest: Option<PathBuf>,
    /// Print the table of an existing report instead of running one.
    #[arg(long, conflicts_with = "manifest")]
    pub from: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub no_regression: bool,
    #[arg(long)]
    pub no_classification: bool,
    #[arg(long)]
    pub candidates: Option<usize>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<sram_ageing::Error>() {
            return match e.kind() {
                ErrorKind::InvalidInput => exit::INVALID_INPUT,
                ErrorKind::MissingInput => exit::MISSING_INPUT,
                ErrorKind::SchemaMismatch => exit::SCHEMA_MISMATCH,
                ErrorKind::Numerical => exit::NUMERICAL,
                ErrorKind::Io => exit::IO,
            };
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            return if e.kind() == std::io::ErrorKind::NotFound {
                exit::MISSING_INPUT
            } else {
                exit::IO
            };
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return exit::INVALID_INPUT;
        }
    }
    exit::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let jobs = cli.jobs;
    match sram_ageing::par::with_jobs(jobs, || commands::run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
