use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use connflow_cli::commands::{self, RunOverrides};

/// Desk-scale continual-learning experiments: connectivity-guided
/// prune/freeze training, forgetting metrics, and bound checks.
#[derive(Parser)]
#[command(name = "connflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured task sequence for every trial seed.
    Run {
        /// Experiment config file (key = value sections).
        #[arg(long)]
        config: PathBuf,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Added to the base seed of every trial.
        #[arg(long)]
        seed_offset: Option<u64>,
    },
    /// Aggregate per-task connectivity CSVs of an existing run.
    Connectivity {
        /// Run directory (or a single trial directory).
        run_dir: PathBuf,
    },
    /// Recompute curvature and forgetting bounds from run checkpoints.
    Theory {
        /// Run directory (or a single trial directory).
        run_dir: PathBuf,
    },
    /// Freeze each layer in turn and relate the cost to connectivity.
    FrozenSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_offset: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            trials,
            seed_offset,
        } => commands::cmd_run(
            &config,
            &RunOverrides {
                out,
                trials,
                seed_offset,
            },
        ),
        Command::Connectivity { run_dir } => commands::cmd_connectivity(&run_dir),
        Command::Theory { run_dir } => commands::cmd_theory(&run_dir),
        Command::FrozenSweep {
            config,
            out,
            seed_offset,
        } => commands::cmd_frozen_sweep(
            &config,
            &RunOverrides {
                out,
                trials: None,
                seed_offset,
            },
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
