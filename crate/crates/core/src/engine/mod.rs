//! Cycle-approximate timing model of a baseline core and of the decoupled
//! look-ahead pair (look-ahead thread + main thread).
//!
//! Both cores use the same window model: in-order fetch into a fetch
//! buffer, in-order dispatch into a reorder window, dataflow issue bounded by
//! the issue width, and in-order commit. Execution times are computed at
//! dispatch from the producers' completion times; memory instructions see
//! the latency reported by [`MemSystem`](crate::memsys::MemSystem).
//!
//! The main thread fetches the correct path from a functional oracle but
//! computes its own values at dispatch; every committed instruction is
//! compared against the oracle, so a run reports any firewall breach as
//! `firewall_mismatches`.

mod lookahead;
mod main_core;
mod parts;
pub mod queues;
mod sim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memsys::{CacheConfig, CacheConfigError, MemStats};
use crate::recycle::{RecycleConfig, RecycleMode, RecycleReport};
use crate::skeleton::{ProfileStats, SkeletonError, SkeletonSet};
use crate::t1::{T1Config, T1Observation, T1Stats};
use crate::uisa::{StaticProgram, TraceError, TraceEvent};
use crate::vreuse::{ReuseStats, VreuseConfig};

pub use queues::{Attach, BoqEntry, Channel, Footnote, FootnoteKind, QueueStats};
pub use sim::simulate;

/// Pipeline geometry shared by both cores.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoreParams {
    pub fetch_width: usize,
    pub decode_width: usize,
    pub issue_width: usize,
    pub commit_width: usize,
    pub window_size: usize,
    pub branch_mispredict_penalty: u64,
    /// Fetch-buffer entries when the fetch-buffer feature is on; otherwise
    /// the buffer holds `decode_width` entries.
    pub fetch_buffer_capacity: usize,
    pub alu_latency: u64,
    pub mul_latency: u64,
    /// Instructions per I-cache line; fetch does not cross a line per cycle.
    pub fetch_block: usize,
    pub btb_miss_penalty: u64,
    pub predictor_bits: u32,
}

impl Default for CoreParams {
    fn default() -> Self {
        CoreParams {
            fetch_width: 4,
            decode_width: 4,
            issue_width: 4,
            commit_width: 4,
            window_size: 192,
            branch_mispredict_penalty: 20,
            fetch_buffer_capacity: 32,
            alu_latency: 1,
            mul_latency: 3,
            fetch_block: 16,
            btb_miss_penalty: 2,
            predictor_bits: 12,
        }
    }
}

impl CoreParams {
    pub fn validate(&self) -> Result<(), EngineError> {
        let positive = [
            ("fetch_width", self.fetch_width),
            ("decode_width", self.decode_width),
            ("issue_width", self.issue_width),
            ("commit_width", self.commit_width),
            ("window_size", self.window_size),
            ("fetch_block", self.fetch_block),
            ("fetch_buffer_capacity", self.fetch_buffer_capacity),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(EngineError::Config(format!("{name} must be positive")));
            }
        }
        if self.issue_width > 255 {
            return Err(EngineError::Config("issue_width must be at most 255".into()));
        }
        if self.fetch_buffer_capacity < self.decode_width {
            return Err(EngineError::Config(
                "fetch_buffer_capacity must be at least decode_width".into(),
            ));
        }
        if self.alu_latency == 0 || self.mul_latency == 0 {
            return Err(EngineError::Config("latencies must be positive".into()));
        }
        Ok(())
    }
}

/// Optional look-ahead mechanisms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Features {
    pub t1: bool,
    pub value_reuse: bool,
    pub fetch_buffer: bool,
    pub recycle: RecycleMode,
}

/// Fault injection into the look-ahead thread (testing aid).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub seed: u64,
    /// Probability that a look-ahead load returns a corrupted value.
    pub load_value_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DlaParams {
    pub boq_capacity: usize,
    pub fq_capacity: usize,
    pub reboot_penalty: u64,
    /// Release footnote prefetches when the main thread dequeues the branch
    /// entry; otherwise they are issued at look-ahead commit.
    pub prefetch_release_at_dequeue: bool,
    /// Cycles the main thread may starve on an empty BOQ while the
    /// look-ahead thread makes no progress before a forced reboot.
    pub watchdog_cycles: u64,
    /// Skeleton version used when recycling is off (and initially).
    pub version: usize,
    pub t1: T1Config,
    pub vreuse: VreuseConfig,
    pub recycle: RecycleConfig,
    pub injection: Option<Injection>,
}

impl Default for DlaParams {
    fn default() -> Self {
        DlaParams {
            boq_capacity: 512,
            fq_capacity: 128,
            reboot_penalty: 64,
            prefetch_release_at_dequeue: true,
            watchdog_cycles: 2000,
            version: 0,
            t1: T1Config::default(),
            vreuse: VreuseConfig::default(),
            recycle: RecycleConfig::default(),
            injection: None,
        }
    }
}

/// Full simulator configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub core: CoreParams,
    pub cache: CacheConfig,
    pub dla: DlaParams,
    pub features: Features,
}

/// Measurement runs used to harvest fetch-queue demand and supply.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdealMode {
    #[default]
    None,
    /// The fetch buffer is refilled to capacity every cycle with no
    /// fetch-side stalls: dispatch counts sample the backend's demand.
    Fetch,
    /// Dispatch drains the buffer every cycle into an unbounded window:
    /// fetch counts sample the front end's supply.
    Backend,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    /// Main-thread instructions to commit before stopping.
    pub limit: u64,
    pub ideal: IdealMode,
    /// Keep the committed main-thread stream in [`RunOutput::commits`].
    pub record_commits: bool,
    /// Collect a per-pc profile in [`RunOutput::profile`].
    pub collect_profile: bool,
    /// Abort with [`EngineError::Stalled`] past this many cycles.
    pub max_cycles: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            limit: 1_000_000,
            ideal: IdealMode::None,
            record_commits: false,
            collect_profile: false,
            max_cycles: None,
        }
    }
}

impl RunOptions {
    pub fn with_limit(limit: u64) -> Self {
        RunOptions {
            limit,
            ..Default::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Cache(#[from] CacheConfigError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error("program fails to execute: {0}")]
    Exec(#[from] TraceError),
    #[error("queue protocol violated at cycle {cycle}: {what}")]
    ProtocolViolation { cycle: u64, what: String },
    #[error("no progress: {committed} instructions committed after {cycles} cycles")]
    Stalled { cycles: u64, committed: u64 },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchStats {
    pub conditional: u64,
    pub mispredicts: u64,
    pub btb_misses: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FetchStats {
    /// Fetch-buffer occupancy sampled at the start of every cycle.
    pub occupancy: Vec<u64>,
    /// Instructions dispatched per cycle.
    pub demand: Vec<u64>,
    /// Instructions fetched per cycle.
    pub supply: Vec<u64>,
    /// Dispatch slots lost because the fetch buffer ran dry.
    pub bubbles: u64,
    /// Cycles the main thread waited on an empty BOQ.
    pub boq_empty_cycles: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LookaheadStats {
    pub committed: u64,
    /// Instructions outside the skeleton dropped at fetch.
    pub deleted: u64,
    pub mispredicts: u64,
    pub btb_misses: u64,
    pub reboots: u64,
    pub mismatch_reboots: u64,
    pub watchdog_reboots: u64,
    pub swap_reboots: u64,
    pub reboots_per_10k: f64,
    pub injected_faults: u64,
    pub fq_full_stall_cycles: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub dla: bool,
    pub cycles: u64,
    pub committed: u64,
    pub ipc: f64,
    pub halted: bool,
    /// The instruction limit was reached before HALT.
    pub truncated: bool,
    pub branches: BranchStats,
    pub fetch: FetchStats,
    /// Window squashes caused by value mispredictions.
    pub replays: u64,
    /// Committed main-thread events that differed from the oracle.
    pub firewall_mismatches: u64,
    pub memory: MemStats,
    pub lookahead: Option<LookaheadStats>,
    pub queues: Option<QueueStats>,
    pub reuse: Option<ReuseStats>,
    pub t1: Option<T1Stats>,
    pub recycle: Option<RecycleReport>,
}

impl RunStats {
    pub fn bubbles_per_cycle(&self) -> f64 {
        self.fetch.bubbles as f64 / self.cycles.max(1) as f64
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub stats: RunStats,
    pub commits: Option<Vec<TraceEvent>>,
    pub profile: Option<ProfileStats>,
    /// T1 observation log; empty unless `dla.t1.trace` is set.
    pub t1_log: Vec<T1Observation>,
}

/// Baseline single-core run.
pub fn run_baseline(
    program: &StaticProgram,
    core: &CoreParams,
    cache: &CacheConfig,
    limit: u64,
) -> Result<RunStats, EngineError> {
    let cfg = SimConfig {
        core: core.clone(),
        cache: *cache,
        ..Default::default()
    };
    Ok(simulate(program, &cfg, None, &RunOptions::with_limit(limit))?.stats)
}

/// Look-ahead run with the given skeletons and feature set.
pub fn run_dla(
    program: &StaticProgram,
    cfg: &SimConfig,
    skeletons: &SkeletonSet,
    limit: u64,
) -> Result<RunStats, EngineError> {
    Ok(simulate(program, cfg, Some(skeletons), &RunOptions::with_limit(limit))?.stats)
}

#[cfg(test)]
mod tests;
