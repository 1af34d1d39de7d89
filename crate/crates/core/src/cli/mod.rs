//! Command-line entry point. `run` parses argv, executes one subcommand and
//! maps the outcome to an exit code: 0 success, 1 user error, 2 internal error.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::Serialize;

use crate::models::Architecture;
use crate::Error;

pub use config::{FileConfig, ModelOverrides, TrainOverrides};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "engagement", version, about = "Engagement recognition from face images")]
pub struct Cli {
    /// Base directory for relative paths.
    #[arg(long, global = true, env = "ENGAGEMENT_DATA_ROOT")]
    pub data_root: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Clean and split a FER-2013 CSV.
    PrepareFer(PrepareFerArgs),
    /// Detect, crop and standardize faces in raw frames; writes an annotation pool.
    PrepareEr(PrepareErArgs),
    /// Run the annotation HTTP service.
    AnnotateServe(ServeArgs),
    /// Aggregate exported annotations into a labeled, split manifest.
    AnnotateBuild(BuildArgs),
    /// Pretrain on prepared FER-2013 splits.
    TrainFer(TrainFerArgs),
    /// Train an engagement model on a manifest.
    TrainEr(TrainErArgs),
    /// Train the HOG + linear SVM baseline.
    TrainSvm(TrainSvmArgs),
    /// Evaluate a model on one manifest split.
    Evaluate(EvaluateArgs),
    /// Print metric and confusion tables from saved reports.
    Report(ReportArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct PrepareFerArgs {
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct PrepareErArgs {
    /// JSON lines of `{sample_id, image_path, subject_id, face_box?}`.
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ServeArgs {
    /// Service TOML (roster, pool, log, session).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub bind: Option<String>,
}

#[derive(Args, Debug, Serialize)]
pub struct BuildArgs {
    /// Exported annotation records.
    #[arg(long)]
    pub records: PathBuf,
    /// Pool the records refer to.
    #[arg(long)]
    pub pool: PathBuf,
    /// Output manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainFerArgs {
    /// Directory written by prepare-fer.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "vgg")]
    pub arch: Architecture,
    #[command(flatten)]
    pub train: TrainOverrides,
    #[command(flatten)]
    pub model: ModelOverrides,
}

#[derive(Args, Debug, Serialize)]
#[command(group(ArgGroup::new("mode").required(true).args(["init_from", "scratch", "arch"])))]
pub struct TrainErArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fine-tune from a FER checkpoint.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// VGG variant from random initialization.
    #[arg(long)]
    pub scratch: bool,
    /// Architecture trained from random initialization.
    #[arg(long)]
    pub arch: Option<Architecture>,
    #[command(flatten)]
    pub train: TrainOverrides,
    #[command(flatten)]
    pub model: ModelOverrides,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainSvmArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    /// `.safetensors` checkpoint or `.json` SVM model.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub model_id: Option<String>,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Also write the tables to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Resolves relative paths against the data root.
#[derive(Debug, Clone, Default)]
pub struct Ctx {
    pub root: Option<PathBuf>,
}

impl Ctx {
    pub fn path(&self, p: &Path) -> PathBuf {
        match &self.root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Shape(_) | Error::Training(_) => EXIT_INTERNAL,
        _ => EXIT_USER,
    }
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    let ctx = Ctx { root: cli.data_root };
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| commands::dispatch(&ctx, cli.command))) {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
        Err(_) => {
            eprintln!("error: internal failure (panic)");
            EXIT_INTERNAL
        }
    }
}
