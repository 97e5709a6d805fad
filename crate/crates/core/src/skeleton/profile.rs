//! Training-run profile: per-instruction execution counts, miss rates,
//! latencies, branch bias and stride.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::engine::{simulate, CoreParams, EngineError, RunOptions, SimConfig};
use crate::memsys::{CacheConfig, HitLevel};
use crate::uisa::StaticProgram;

/// Dynamic instances needed before a stride can be reported.
pub const STRIDE_MIN_INSTANCES: u64 = 8;
/// Share of address deltas the dominant stride must account for.
pub const STRIDE_DOMINANCE: f64 = 0.9;
/// Distinct deltas tracked per instruction; later ones count as noise.
const STRIDE_CANDIDATES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingParams {
    /// Instructions committed by the training run.
    pub limit: u64,
    pub core: CoreParams,
}

impl Default for TrainingParams {
    fn default() -> Self {
        TrainingParams {
            limit: 1_000_000,
            core: CoreParams::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstrProfile {
    pub exec_count: u64,
    pub l1_misses: u64,
    /// Accesses served by L3 or DRAM.
    pub l2_misses: u64,
    pub l1_miss_rate: f64,
    pub l2_miss_rate: f64,
    /// Mean dispatch-to-complete latency in cycles.
    pub mean_latency: f64,
    pub taken_count: u64,
    /// Fraction of executions that were taken (conditional branches).
    pub branch_bias: f64,
    /// Dominant address delta between consecutive executions, if any.
    pub stride: Option<i64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileStats {
    /// Indexed by static instruction.
    pub per_instr: Vec<InstrProfile>,
    pub instructions: u64,
    /// `false` if the training run stopped at its limit: the profile covers
    /// only a prefix of the execution.
    pub halted: bool,
}

#[derive(Clone, Debug, Default)]
struct StrideTrack {
    last: Option<i64>,
    deltas: Vec<(i64, u64)>,
    total: u64,
}

impl StrideTrack {
    fn observe(&mut self, addr: i64) {
        if let Some(prev) = self.last.replace(addr) {
            let d = addr.wrapping_sub(prev);
            self.total += 1;
            if let Some(e) = self.deltas.iter_mut().find(|e| e.0 == d) {
                e.1 += 1;
            } else if self.deltas.len() < STRIDE_CANDIDATES {
                self.deltas.push((d, 1));
            }
        }
    }

    fn stride(&self, instances: u64) -> Option<i64> {
        if instances < STRIDE_MIN_INSTANCES || self.total == 0 {
            return None;
        }
        let &(d, n) = self.deltas.iter().max_by_key(|e| e.1)?;
        (d != 0 && n as f64 >= STRIDE_DOMINANCE * self.total as f64).then_some(d)
    }
}

/// Accumulates a profile from committed instructions.
#[derive(Clone, Debug)]
pub struct ProfileBuilder {
    per: Vec<InstrProfile>,
    latency_sum: Vec<u64>,
    mem_count: Vec<u64>,
    strides: HashMap<usize, StrideTrack>,
}

impl ProfileBuilder {
    pub fn new(num_instrs: usize) -> Self {
        ProfileBuilder {
            per: vec![InstrProfile::default(); num_instrs],
            latency_sum: vec![0; num_instrs],
            mem_count: vec![0; num_instrs],
            strides: HashMap::new(),
        }
    }

    /// Records one committed instance. `hit` is the level that served a
    /// load; stores and non-memory instructions pass `None`.
    pub fn record(
        &mut self,
        pc: usize,
        hit: Option<HitLevel>,
        latency: u64,
        taken: Option<bool>,
        eff_addr: Option<i64>,
    ) {
        let p = &mut self.per[pc];
        p.exec_count += 1;
        self.latency_sum[pc] += latency;
        if let Some(h) = hit {
            self.mem_count[pc] += 1;
            p.l1_misses += (h != HitLevel::L1) as u64;
            p.l2_misses += matches!(h, HitLevel::L3 | HitLevel::Dram) as u64;
        }
        p.taken_count += (taken == Some(true)) as u64;
        if let Some(a) = eff_addr {
            self.strides.entry(pc).or_default().observe(a);
        }
    }

    pub fn finish(mut self, instructions: u64, halted: bool) -> ProfileStats {
        for (i, p) in self.per.iter_mut().enumerate() {
            if p.exec_count == 0 {
                continue;
            }
            let n = p.exec_count as f64;
            let m = self.mem_count[i].max(1) as f64;
            p.l1_miss_rate = p.l1_misses as f64 / m;
            p.l2_miss_rate = p.l2_misses as f64 / m;
            p.mean_latency = self.latency_sum[i] as f64 / n;
            p.branch_bias = p.taken_count as f64 / n;
            p.stride = self.strides.get(&i).and_then(|s| s.stride(p.exec_count));
        }
        ProfileStats {
            per_instr: self.per,
            instructions,
            halted,
        }
    }
}

/// Profiles `program` with a baseline training run.
pub fn profile(
    program: &StaticProgram,
    training: &TrainingParams,
    cache: &CacheConfig,
) -> Result<ProfileStats, EngineError> {
    let cfg = SimConfig {
        core: training.core.clone(),
        cache: *cache,
        ..Default::default()
    };
    let opts = RunOptions {
        limit: training.limit,
        collect_profile: true,
        ..Default::default()
    };
    let out = simulate(program, &cfg, None, &opts)?;
    Ok(out.profile.expect("profile requested"))
}
