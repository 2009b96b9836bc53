mod commands;
mod config;
mod csv;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pmdp_core::{Error, Result};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "pmdp",
    version,
    about = "Product-manifold disentanglement runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    /// Minimize the sparsity loss alone and trace subspace overlap.
    Spar,
    /// Hit and leak rates of a trained checkpoint.
    Def2,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, or one per seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds; each run goes to `seed-N/`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Score one or more checkpoints.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    Verify {
        #[arg(long, value_enum)]
        mode: Mode,
        /// Optional for spar mode; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Compare loss gradients with central differences.
    Gradcheck {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

fn load(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Train { config, out, seeds } => {
            let cfg = RunConfig::load(&config)?;
            let statuses = commands::train(&cfg, &out, seeds.as_deref())?;
            Ok(statuses
                .iter()
                .filter_map(|s| s.outcome.as_ref().err().map(commands::exit_code))
                .max()
                .unwrap_or(0))
        }
        Command::Eval {
            config,
            checkpoint,
            out,
        } => {
            commands::eval(&RunConfig::load(&config)?, &checkpoint, &out)?;
            Ok(0)
        }
        Command::Verify {
            mode,
            config,
            checkpoint,
            out,
            seeds,
        } => {
            let cfg = load(config.as_deref())?;
            match mode {
                Mode::Spar => commands::verify_spar(&cfg, &out, seeds.as_deref())?,
                Mode::Def2 => {
                    let checkpoint = checkpoint.ok_or_else(|| Error::Config {
                        key: "--checkpoint".into(),
                        reason: "def2 mode needs a trained checkpoint".into(),
                    })?;
                    commands::verify_def2(&cfg, &checkpoint, &out)?
                }
            }
            Ok(0)
        }
        Command::Gradcheck { out, seeds } => {
            // Failing terms are reported in the CSV; only aborts change the
            // exit code.
            commands::gradcheck(&out, seeds.as_deref())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
