use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dualwalk::cli::{self, Command};

#[derive(Parser)]
#[command(
    name = "dualwalk",
    version,
    about = "Dual-agent hierarchical RL for multi-hop knowledge-graph reasoning"
)]
struct Cli {
    /// Worker threads (1 keeps runs bitwise reproducible).
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Pre-train embeddings, cluster entities and write the artifacts.
    Prepare {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. --set seed=7 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Artifact directory (default: <dataset_dir>/artifacts).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train both agents and the trade-off network.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Beam-search the test queries and report ranking metrics.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stationarity and causality diagnostics over a metrics CSV.
    Analyze {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value_t = 2)]
        lag: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reward-shaping consistency report on random small decision processes.
    Oracle {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        states: usize,
        #[arg(long, default_value_t = 4)]
        horizon: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Prepare {
            config,
            overrides,
            out,
        } => Command::Prepare {
            config,
            overrides,
            out,
        },
        Cmd::Train {
            config,
            overrides,
            out,
        } => Command::Train {
            config,
            overrides,
            out,
        },
        Cmd::Eval {
            config,
            overrides,
            out,
        } => Command::Eval {
            config,
            overrides,
            out,
        },
        Cmd::Analyze { metrics, lag, out } => Command::Analyze { metrics, lag, out },
        Cmd::Oracle {
            trials,
            alpha,
            seed,
            states,
            horizon,
        } => Command::Oracle {
            trials,
            alpha,
            seed,
            states,
            horizon,
        },
    };
    match cli::run(command, cli.workers) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
