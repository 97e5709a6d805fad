use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};

use r3dla_cli::commands::{skel_build, ProgramSource};
use r3dla_cli::{finish, CliError};

/// Build skeleton files.
#[derive(Parser)]
#[command(name = "skel", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Profile a program and write all skeleton versions as JSON.
    #[command(group(ArgGroup::new("source").required(true).args(["program", "config"])))]
    Build {
        /// Assembly file.
        #[arg(long)]
        program: Option<PathBuf>,
        /// Experiment config whose workload and machine are used instead.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Instructions in the training run.
        #[arg(long, default_value_t = 1_000_000)]
        train_limit: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let Cmd::Build {
        program,
        config,
        train_limit,
        out,
    } = Cli::parse().cmd;
    finish(build(program, config, train_limit, out))
}

fn build(program: Option<PathBuf>, config: Option<PathBuf>, train_limit: u64, out: Option<PathBuf>) -> Result<(), CliError> {
    let source = match (&program, &config) {
        (Some(p), _) => ProgramSource::Asm(p),
        (None, Some(c)) => ProgramSource::Config(c),
        (None, None) => unreachable!("clap requires one source"),
    };
    let fractions = skel_build(source, train_limit, out.as_deref())?;
    for (v, f) in fractions.iter().enumerate() {
        eprintln!("v{v}: {:.1}% of dynamic instructions", 100.0 * f);
    }
    Ok(())
}
