use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use r3dla_cli::commands::{sim_ablate, sim_compare, sim_run, sim_sweep};
use r3dla_cli::config::parse_recycle;
use r3dla_cli::{finish, CliError};

/// Run, compare, sweep and ablate look-ahead simulations.
#[derive(Parser)]
#[command(name = "sim", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one config and write its JSON report.
    Run {
        config: PathBuf,
        /// Skeleton recycling: off, dynamic or static:FILE.
        #[arg(long)]
        recycle: Option<String>,
        /// Report file (default: the config's `output`, else stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several configs and print their metrics side by side as CSV.
    Compare {
        #[arg(long, num_args = 2.., required = true)]
        configs: Vec<PathBuf>,
        /// Compare even if the configs run different programs.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one config once per parameter value.
    Sweep {
        config: PathBuf,
        /// Field name (e.g. fetch_buffer_capacity) or dotted path.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-feature speedups applied first and last.
    Ablate {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    finish(dispatch(cli.cmd))
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Run { config, recycle, out } => {
            let recycle = recycle.as_deref().map(parse_recycle).transpose()?;
            sim_run(&config, recycle, out.as_deref()).map(drop)
        }
        Cmd::Compare { configs, force, out } => sim_compare(&configs, force, out.as_deref()).map(drop),
        Cmd::Sweep {
            config,
            param,
            values,
            out,
        } => sim_sweep(&config, &param, &values, out.as_deref()).map(drop),
        Cmd::Ablate { config, out } => sim_ablate(&config, out.as_deref()).map(drop),
    }
}
