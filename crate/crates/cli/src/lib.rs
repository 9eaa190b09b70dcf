//! `meshforge` command-line front end.

pub mod commands;
pub mod config;

use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;
use thiserror::Error;

pub use config::{validate_config, ConfigFile, DrapeSettings, CONFIG_SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, configuration or input files; exit status 1.
    #[error("{0}")]
    Validation(String),
    /// Failure while running; exit status 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn status(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "meshforge", version, about = "Synthetic clothed-body data generation and recovery")]
pub struct Cli {
    /// JSON run configuration (schema_version, seed, scene, train, interp, drape).
    #[arg(long, global = true, visible_alias = "scene", value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Raise log verbosity (-v info, -vv debug); MESHFORGE_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render annotated sequences from pose files into a dataset directory.
    Generate(GenerateArgs),
    /// Build a sequence bridging the most contrasting poses of two sequences.
    Interp(InterpArgs),
    /// Drape a garment on the rest-pose body and write the equilibrium OBJ.
    Drape(DrapeArgs),
    /// Compare a predicted dataset against ground truth.
    Evaluate(EvaluateArgs),
    /// Train the recovery network on a dataset.
    TrainToy(TrainToyArgs),
    /// Run a trained network over a dataset and write recovery vectors.
    Recover(RecoverArgs),
    /// Drive new scenes with recovered motion.
    Transfer(TransferArgs),
    /// Print the effective configuration.
    Config,
}

#[derive(Debug, Args)]
pub struct TemplateArg {
    /// Body template JSON, or `procedural` / `procedural-low`.
    #[arg(long, default_value = "procedural")]
    pub template: String,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Pose sequence files; each becomes one sequence named after the file stem.
    #[arg(long, required = true, num_args = 1..)]
    pub poses: Vec<PathBuf>,
    #[command(flatten)]
    pub template: TemplateArg,
    /// Garment pattern JSON, or `skirt` / `cape`.
    #[arg(long)]
    pub garment: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Write PGM previews: `silhouette` or `depth`.
    #[arg(long)]
    pub preview: Option<String>,
    /// Preview edge length in pixels.
    #[arg(long, default_value_t = 64)]
    pub preview_size: u32,
    /// Cloth OBJ snapshot period in frames (0 disables).
    #[arg(long, default_value_t = 0)]
    pub cloth_every: usize,
}

#[derive(Debug, Args)]
pub struct InterpArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DrapeArgs {
    /// Garment pattern JSON, or `skirt` / `cape`.
    #[arg(long)]
    pub garment: String,
    #[command(flatten)]
    pub template: TemplateArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Simulated-time budget; overrides drape.max_seconds.
    #[arg(long)]
    pub seconds: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Divide MPVPE by the vertex count (`--normalized false` for the raw sum).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub normalized: bool,
    /// Also write the per-sequence reports as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub template: TemplateArg,
    /// Overrides train.max_steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Parameter file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss curve file.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    /// Trained parameter file; required unless --oracle.
    #[arg(long, required_unless_present = "oracle")]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub template: TemplateArg,
    /// JSON-lines output, one frame per line.
    #[arg(long)]
    pub out: PathBuf,
    /// Emit ground-truth recovery vectors instead of running the network.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// Recovery vectors as written by `recover`.
    #[arg(long)]
    pub phis: PathBuf,
    #[command(flatten)]
    pub template: TemplateArg,
    /// Garment pattern JSON, or `skirt` / `cape`.
    #[arg(long)]
    pub garment: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let env = env_logger::Env::new().filter_or("MESHFORGE_LOG", level);
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `argv`, runs the subcommand and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.status()
        }
    }
}
