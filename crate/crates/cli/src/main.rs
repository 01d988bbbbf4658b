//! `mvreplica`: exact frontiers, Monte Carlo sweeps and replica-theory checks.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Config, Format, Overrides};
use error::{CliError, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "mvreplica", version, about = "Mean-variance optimization under estimation noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact efficient frontier of a model over a grid of target returns.
    Frontier,
    /// Out-of-sample and in-sample error across a grid of r = N/T.
    Sweep,
    /// Mean q0 across covariance families and targets at one r.
    Universality,
    /// Thermal weights and the zero-temperature free energy.
    StatmechCheck,
    /// Replica-symmetric Hessian spectrum with numeric diagonalization.
    Hessian,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config file; flags take precedence over its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output file (stdout when absent).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Base seed for trial substreams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trials per grid point.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Omit the generation timestamp from the output.
    #[arg(long, global = true)]
    no_timestamp: bool,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        out: cli.common.out,
        format: cli.common.format,
        seed: cli.common.seed,
        trials: cli.common.trials,
        threads: cli.common.threads,
        no_timestamp: cli.common.no_timestamp,
    };
    let config = Config::load(cli.common.config.as_deref(), overrides)?;
    let threads = config.file.threads;
    let command = cli.command;
    let go = move || match command {
        Command::Frontier => commands::frontier_cmd(&config),
        Command::Sweep => commands::sweep_cmd(&config),
        Command::Universality => commands::universality_cmd(&config),
        Command::StatmechCheck => commands::statmech_cmd(&config),
        Command::Hessian => commands::hessian_cmd(&config),
    };
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::config(format!("cannot start {n} threads: {e}")))?
            .install(go),
        None => go(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
