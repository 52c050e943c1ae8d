use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use levydrift_cli::config::ExperimentConfig;
use levydrift_cli::{bench, run, CliError};

#[derive(Parser)]
#[command(name = "levydrift", version, about = "Drift estimation experiments for jump-driven SDEs")]
struct Cli {
    /// TOML experiment file; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory, overriding the file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write a gnuplot script for the first path.
    #[arg(long, global = true)]
    emit_plot_script: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories and their increments.
    Simulate,
    /// Run every configured estimator on each simulated path.
    Estimate,
    /// Asymptotic efficiency of each configured estimator.
    Efficiency,
    /// Benchmark the linear solvers and the derivative-free searches.
    BenchSolvers,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CliError::Validation("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate => run::cmd_simulate(&cfg, cli.emit_plot_script),
        Command::Estimate => run::cmd_estimate(&cfg),
        Command::Efficiency => run::cmd_efficiency(&cfg),
        Command::BenchSolvers => bench::cmd_bench(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
