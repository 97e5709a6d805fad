use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use r3dla_cli::commands::{fetchq_analyze, fetchq_harvest};
use r3dla_cli::finish;

/// Fetch-buffer queueing model.
#[derive(Parser)]
#[command(name = "fetchq", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Steady-state occupancy and expected bubbles over a capacity range (CSV).
    Analyze {
        /// Demand distribution (JSON array or {"probabilities": [...]}).
        #[arg(long)]
        demand: PathBuf,
        /// Supply distribution.
        #[arg(long)]
        supply: PathBuf,
        /// Capacity N or inclusive range A:B.
        #[arg(long, default_value = "4:64")]
        capacity_sweep: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract demand and supply distributions from `sim run` reports.
    Harvest {
        /// Report providing the demand histogram (an `ideal: fetch` run).
        #[arg(long)]
        report: PathBuf,
        /// Report providing the supply histogram (an `ideal: backend` run);
        /// defaults to --report.
        #[arg(long)]
        supply_report: Option<PathBuf>,
        #[arg(long)]
        demand_out: Option<PathBuf>,
        #[arg(long)]
        supply_out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    finish(match Cli::parse().cmd {
        Cmd::Analyze {
            demand,
            supply,
            capacity_sweep,
            out,
        } => fetchq_analyze(&demand, &supply, &capacity_sweep, out.as_deref()),
        Cmd::Harvest {
            report,
            supply_report,
            demand_out,
            supply_out,
        } => fetchq_harvest(&report, supply_report.as_deref(), demand_out.as_deref(), supply_out.as_deref()),
    })
}
