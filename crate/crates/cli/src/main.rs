mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lightyear_core::sim::SweepAxis;

use crate::commands::CliError;

#[derive(Parser)]
#[command(version, about = "Deterministic peer-to-peer federated learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Attackers,
    Sensitivity,
    Gamma,
}

impl From<Axis> for SweepAxis {
    fn from(a: Axis) -> Self {
        match a {
            Axis::Attackers => SweepAxis::Attackers,
            Axis::Sensitivity => SweepAxis::Sensitivity,
            Axis::Gamma => SweepAxis::Gamma,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment; writes rounds.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; output does not depend on this.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run a preset sweep; writes sweep_<axis>.csv and sweep_summary.json.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Tabulate final accuracy (mean ± std over runs) for a results directory.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Run { config, out, workers } => commands::run(&config, &out, workers),
        Command::Sweep {
            config,
            axis,
            out,
            workers,
        } => commands::sweep(&config, axis.into(), &out, workers),
        Command::Report { dir } => report::report(&dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Config(_) => 2,
                CliError::Runtime(_) => 3,
            })
        }
    }
}
