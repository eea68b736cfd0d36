mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{CommonArgs, PipelineConfig};

#[derive(Debug, Parser)]
#[command(
    name = "qvqpp",
    version,
    about = "Query performance prediction smoothed over query variants"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build and persist the document and training-query indexes.
    Index {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Write the re-ranked query variants of every test query.
    Qv {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict the performance of every query in the target run.
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Kendall's tau between a prediction file and the target metric.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        predictions: PathBuf,
        /// Prediction file to test for a significant difference against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Also write per-query target metric values here.
        #[arg(long)]
        actual_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-fold tuning of lambda and k.
    Tune {
        #[command(flatten)]
        common: CommonArgs,
        /// Baseline prediction file; defaults to the unsmoothed base predictor.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tau for every (lambda, k) cell of the grid, as CSV.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Index { common }
            | Command::Qv { common, .. }
            | Command::Predict { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Tune { common, .. }
            | Command::Sweep { common, .. } => common,
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = cli.command.common();
    let config = PipelineConfig::load(common)?;
    if let Some(threads) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()?;
    }
    match &cli.command {
        Command::Index { .. } => commands::index(&config),
        Command::Qv { out, .. } => commands::qv(&config, out.as_deref()),
        Command::Predict { out, .. } => commands::predict(&config, out.as_deref()),
        Command::Evaluate {
            predictions,
            baseline,
            actual_out,
            out,
            ..
        } => commands::evaluate(
            &config,
            predictions,
            baseline.as_deref(),
            actual_out.as_deref(),
            out.as_deref(),
        ),
        Command::Tune { baseline, out, .. } => {
            commands::tune(&config, baseline.as_deref(), out.as_deref())
        }
        Command::Sweep { out, .. } => commands::sweep(&config, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
