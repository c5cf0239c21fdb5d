//! `cofc`: train, evaluate and benchmark constrained energy-management
//! policies for a hybrid electric vehicle.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Algorithm;

#[derive(Parser)]
#[command(
    name = "cofc",
    version,
    about = "Constrained HEV energy-management toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// TOML or JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides COFC_SEED and the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy; writes trace.csv, checkpoints and summary.json.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides the config's algorithm.
        #[arg(long, value_enum)]
        algo: Option<Algorithm>,
        /// Overrides the config's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Play one greedy episode and write its log.
    Eval {
        #[command(flatten)]
        common: Common,
        /// best.ckpt or final.ckpt from a training run.
        #[arg(long, conflicts_with = "random", required_unless_present = "random")]
        checkpoint: Option<PathBuf>,
        /// Uniformly random engine power instead of a policy.
        #[arg(long)]
        random: bool,
    },
    /// Solve the discretised problem exactly by dynamic programming.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// SOC grid nodes.
        #[arg(long)]
        soc_levels: Option<usize>,
        /// Engine power levels from 0 to the rated power.
        #[arg(long)]
        action_levels: Option<usize>,
        /// Cycle steps per decision.
        #[arg(long)]
        decision_interval: Option<usize>,
    },
    /// Render a trace (learning curves) or an episode log (SOC) to SVG.
    Plot {
        /// trace.csv from a training run.
        #[arg(long, conflicts_with = "episode", required_unless_present = "episode")]
        trace: Option<PathBuf>,
        /// Episode log (episode.csv, best_episode.csv).
        #[arg(long)]
        episode: Option<PathBuf>,
        /// Defaults to the input path with an `.svg` extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Config,
    Runtime,
}

#[derive(Debug)]
pub struct Failure {
    kind: FailureKind,
    error: anyhow::Error,
}

pub trait Classify<T> {
    fn config_err(self) -> Result<T, Failure>;
    fn runtime_err(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            kind: FailureKind::Config,
            error: e.into(),
        })
    }

    fn runtime_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            kind: FailureKind::Runtime,
            error: e.into(),
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report(
                FailureKind::Config,
                &anyhow::anyhow!(e.to_string().trim().to_string()),
            );
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Train {
            common,
            algo,
            epochs,
        } => commands::train(&common, algo, epochs),
        Command::Eval {
            common,
            checkpoint,
            random,
        } => commands::eval(&common, checkpoint.as_deref(), random),
        Command::Oracle {
            common,
            soc_levels,
            action_levels,
            decision_interval,
        } => commands::oracle(&common, soc_levels, action_levels, decision_interval),
        Command::Plot {
            trace,
            episode,
            out,
        } => commands::plot(trace, episode, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report(f.kind, &f.error);
            ExitCode::from(match f.kind {
                FailureKind::Config => 2,
                FailureKind::Runtime => 3,
            })
        }
    }
}

fn report(kind: FailureKind, error: &anyhow::Error) {
    let body = serde_json::json!({
        "error": match kind {
            FailureKind::Config => "config",
            FailureKind::Runtime => "runtime",
        },
        "message": format!("{error:#}"),
    });
    eprintln!("{body}");
}
