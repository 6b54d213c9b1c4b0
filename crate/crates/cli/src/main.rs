mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Failure;

/// Isolated sign-language recognition pipeline.
///
/// Exit codes: 0 success, 2 missing artifact, 3 invalid configuration,
/// 4 runtime failure. Log verbosity follows `RUST_LOG`.
#[derive(Debug, Parser)]
#[command(name = "signlab", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset: raw videos plus gloss annotations.
    Synth,
    /// Cut annotated clips out of raw videos and write the manifest.
    Ingest {
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Directory of `{video_id}.sgnf` files.
        #[arg(long)]
        videos: Option<PathBuf>,
    },
    /// Assign manifest clips to train/val/test or folds.
    Split {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Fine-tune a model; writes the best checkpoint and the loss curve.
    Train {
        /// Cross-validation round for fold-based plans.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Evaluate a checkpoint on one split role.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// `train`, `val` or `test`; for fold plans `val` is the held-out fold.
        #[arg(long, default_value = "test")]
        role: String,
        #[arg(long)]
        fold: Option<usize>,
        /// Emit only the first M classes of the confusion matrix.
        #[arg(long)]
        window: Option<usize>,
    },
    /// Join metrics summaries into a model × dataset comparison table.
    Report {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let run = config::load(cli.config.as_deref(), cli.seed, cli.out, &cli.set)?;
    match cli.command {
        Command::Synth => commands::synth(&run),
        Command::Ingest { annotations, videos } => commands::ingest(&run, annotations, videos),
        Command::Split { manifest } => commands::split(&run, manifest),
        Command::Train { fold } => commands::train(&run, fold),
        Command::Eval {
            checkpoint,
            role,
            fold,
            window,
        } => commands::eval(&run, checkpoint, &role, fold, window),
        Command::Report { metrics } => commands::report(&run, &metrics),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        match cause.downcast_ref::<Failure>() {
            Some(Failure::Missing(_)) => return 2,
            Some(Failure::Config(_)) => return 3,
            None => {}
        }
    }
    4
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
