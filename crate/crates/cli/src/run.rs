//! Running experiments and shaping their results.

use serde::{Deserialize, Serialize};

use r3dla::engine::{simulate, EngineError, RunOptions, RunStats};
use r3dla::uisa::StaticProgram;

use crate::config::{ExperimentConfig, Mode};
use crate::CliError;

/// Tool name and version stamped into every report.
pub const TOOL: &str = "r3dla";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Result of one simulation, as written by `sim run`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub program: ProgramInfo,
    pub stats: RunStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgramInfo {
    pub name: String,
    pub content_hash: String,
    pub static_instructions: usize,
}

impl ProgramInfo {
    pub fn of(p: &StaticProgram) -> Self {
        ProgramInfo {
            name: p.meta.name.clone(),
            content_hash: p.content_hash(),
            static_instructions: p.len(),
        }
    }
}

pub fn engine_error(e: EngineError) -> CliError {
    match e {
        EngineError::Config(m) => CliError::Config(m),
        EngineError::Skeleton(e) => CliError::Config(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

/// Runs one configuration.
pub fn run(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let program = cfg.program()?;
    run_program(cfg, &program)
}

/// Runs one configuration on an already materialized program.
pub fn run_program(cfg: &ExperimentConfig, program: &StaticProgram) -> Result<Report, CliError> {
    let skeletons = match cfg.mode {
        Mode::Baseline => None,
        Mode::Dla => Some(cfg.skeletons(program)?),
    };
    let opts = RunOptions {
        limit: cfg.limit,
        ideal: cfg.ideal,
        max_cycles: cfg.max_cycles,
        ..Default::default()
    };
    let out = simulate(program, &cfg.sim, skeletons.as_ref(), &opts).map_err(engine_error)?;
    Ok(Report {
        tool: TOOL.into(),
        version: VERSION.into(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        program: ProgramInfo::of(program),
        stats: out.stats,
    })
}

/// Headline numbers used by the CSV summaries.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub cycles: u64,
    pub committed: u64,
    pub ipc: f64,
    pub l1_mpki: f64,
    pub l2_mpki: f64,
    pub traffic_lines: u64,
    pub branch_mpki: f64,
    pub reboots: u64,
    pub fetch_bubbles: u64,
}

impl Summary {
    pub fn of(s: &RunStats) -> Self {
        Summary {
            cycles: s.cycles,
            committed: s.committed,
            ipc: s.ipc,
            l1_mpki: s.memory.mt.l1.mpki,
            l2_mpki: s.memory.mt.l2.mpki,
            traffic_lines: s.memory.traffic_lines,
            branch_mpki: s.branches.mispredicts as f64 * 1000.0 / s.committed.max(1) as f64,
            reboots: s.lookahead.as_ref().map_or(0, |l| l.reboots),
            fetch_bubbles: s.fetch.bubbles,
        }
    }

    pub const HEADER: [&'static str; 9] = [
        "cycles",
        "committed",
        "ipc",
        "l1_mpki",
        "l2_mpki",
        "traffic_lines",
        "branch_mpki",
        "reboots",
        "fetch_bubbles",
    ];

    pub fn fields(&self) -> [String; 9] {
        [
            self.cycles.to_string(),
            self.committed.to_string(),
            format!("{:.6}", self.ipc),
            format!("{:.6}", self.l1_mpki),
            format!("{:.6}", self.l2_mpki),
            self.traffic_lines.to_string(),
            format!("{:.6}", self.branch_mpki),
            self.reboots.to_string(),
            self.fetch_bubbles.to_string(),
        ]
    }
}
