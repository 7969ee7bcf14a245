//! `ynet-gi`: data generation, training, reconstruction and evaluation for
//! speckle-pair ghost imaging.
//!
//! Any configuration key can be overridden as `--section.key value` (or
//! `--section.key=value`); these are applied after `--config` and before the
//! convenience flags.

mod commands;
mod config;
mod error;
mod images;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::Method;
use config::ExperimentConfig;
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "ynet-gi", version, about = "Speckle-pair ghost imaging experiments")]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sets every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Output root directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Number of training pairs.
    #[arg(long, global = true)]
    pairs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Static,
    Dynamic,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the train, validation and test speckle-pair datasets.
    Generate,
    /// Train the Y-net on the generated datasets.
    Train {
        /// Continue from `model/last.ync` if present.
        #[arg(long)]
        resume: bool,
    },
    /// Reconstruct one record with Y-net or classical ghost imaging.
    Reconstruct {
        #[arg(long, value_enum, default_value = "ynet")]
        method: Method,
        /// Dataset file (defaults to the generated test split).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare both methods on the test split and emit all figure panels.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate only the first N test records.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Speckle autocorrelation panels.
    Autocorr,
    /// Print the resolved configuration as TOML.
    Config,
    /// Repeated dynamic-illumination reconstructions of test digits.
    Stability {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

/// Removes `--section.key value` pairs from `args`.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        if arg == "--" {
            rest.push(arg);
            rest.extend(it.by_ref());
            break;
        }
        let Some(body) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (body, None),
        };
        if !key.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| CliError::Config(format!("--{key} needs a value")))?,
        };
        overrides.push((key.to_string(), value));
    }
    Ok((rest, overrides))
}

fn run() -> Result<(), CliError> {
    let (args, mut overrides) = split_overrides(std::env::args().collect())?;
    let cli = Cli::parse_from(args);
    if let Some(mode) = cli.mode {
        let m = match mode {
            ModeArg::Static => "static",
            ModeArg::Dynamic => "dynamic",
        };
        overrides.push(("data.mode".into(), m.into()));
    }
    if let Some(out) = &cli.out {
        overrides.push(("output.dir".into(), out.display().to_string()));
    }
    if let Some(e) = cli.epochs {
        overrides.push(("training.epochs".into(), e.to_string()));
    }
    if let Some(p) = cli.pairs {
        overrides.push(("data.train_pairs".into(), p.to_string()));
    }
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    if let Some(seed) = cli.seed {
        cfg.set_all_seeds(seed);
    }
    match cli.command {
        Command::Generate => commands::generate(&cfg),
        Command::Train { resume } => commands::train(&cfg, resume),
        Command::Reconstruct {
            method,
            input,
            index,
            checkpoint,
        } => commands::reconstruct(&cfg, method, input.as_deref(), index, checkpoint.as_deref()),
        Command::Evaluate { checkpoint, limit } => commands::evaluate(&cfg, checkpoint.as_deref(), limit),
        Command::Autocorr => commands::autocorr(&cfg),
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::Stability { checkpoint } => commands::stability(&cfg, checkpoint.as_deref()),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
