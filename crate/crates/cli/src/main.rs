//! `cmscore`: data generation, training and evaluation of the cross-modal
//! sheet/audio embedding.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(cmscore::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<cmscore::Error> for CliError {
    fn from(e: cmscore::Error) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

#[derive(Parser)]
#[command(name = "cmscore", version, about = "Cross-modal sheet music / audio embedding engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// Flat TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Replace a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Config override, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    GenData(Common),
    /// Train a model on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Audio-to-sheet retrieval metrics on the test split.
    EvalRetrieval(Common),
    /// Piece identification by top-k voting.
    Identify {
        #[command(flatten)]
        common: Common,
        /// Test recording index; all recordings when omitted.
        #[arg(long)]
        recording: Option<usize>,
    },
    /// DTW and linear-baseline alignment of test recordings.
    Align {
        #[command(flatten)]
        common: Common,
        /// Test piece id; all test pieces when omitted.
        #[arg(long)]
        piece: Option<u32>,
        /// Also write cost matrices and paths.
        #[arg(long)]
        matrix_dump: bool,
    },
    /// Train and evaluate one model per augmentation row and seed.
    Ablate(Common),
}

/// Keeps freed training buffers in the heap instead of returning them to
/// the kernel after every batch.
fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts glibc allocator parameters.
    unsafe {
        libc::mallopt(libc::M_MMAP_MAX, 0);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}

fn threads() -> Result<usize, CliError> {
    match std::env::var("CMSCORE_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!("CMSCORE_THREADS must be a positive integer, got `{v}`"))),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tune_allocator();
    let result = threads().and_then(|_| match cli.command {
        Command::GenData(c) => commands::gen_data(&c),
        Command::Train { common, resume } => commands::train(&common, resume),
        Command::EvalRetrieval(c) => commands::eval_retrieval(&c),
        Command::Identify { common, recording } => commands::identify(&common, recording),
        Command::Align {
            common,
            piece,
            matrix_dump,
        } => commands::align(&common, piece, matrix_dump),
        Command::Ablate(c) => commands::ablate(&c),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Run(_) => ExitCode::FAILURE,
            }
        }
    }
}
