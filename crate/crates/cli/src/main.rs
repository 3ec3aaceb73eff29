mod commands;
mod config;
mod error;
mod output;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{Config, Task};
use error::CliError;

/// Successive graph shift design and execution experiments.
#[derive(Debug, Parser)]
#[command(name = "shiftseq", version)]
struct Args {
    /// Task to run; overrides `experiment.task` from the config.
    #[arg(value_enum)]
    task: Option<Task>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte-Carlo worker threads (0 = all cores). Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Monte-Carlo trials for fluctuate/bound, scenario count for estimate/sparsify.
    #[arg(long)]
    trials: Option<u64>,
}

fn execute(args: Args) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(t) = args.trials {
        cfg.fluctuation.trials = t;
        cfg.estimator.seeds = t;
    }
    let task = args
        .task
        .or(cfg.experiment.task)
        .ok_or_else(|| CliError::Input("no task given on the command line or in the config".into()))?;
    let seed = args.seed.unwrap_or(cfg.experiment.seed);
    let out = args.out.clone().unwrap_or_else(|| cfg.experiment.out.clone());
    let workers = args.workers.unwrap_or(cfg.experiment.workers);

    shiftseq::mc::with_workers(workers, || match task {
        Task::Design => commands::design(&cfg, seed, &out),
        Task::Run => commands::run(&cfg, seed, &out),
        Task::Fluctuate => commands::fluctuate(&cfg, seed, &out),
        Task::Bound => commands::bound(&cfg, seed, &out),
        Task::Estimate => commands::estimate(&cfg, seed, &out),
        Task::Sparsify => commands::sparsify(&cfg, seed, &out),
    })
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
