//! Skeleton construction: profiling, seed selection, backward-dependence
//! closure and the six skeleton versions.
//!
//! A skeleton is the subset of static instructions the look-ahead thread
//! executes. Seeds are chosen from a profile (control instructions, memory
//! instructions that miss, slow instructions, strided accesses) and closed
//! under backward register and memory dependences.
//!
//! | Version | Seeds                                                     |
//! |---------|-----------------------------------------------------------|
//! | v0      | control + L1 targets + L2 targets (default)              |
//! | v1      | v0 minus L1 targets                                      |
//! | v2      | v0 + value-reuse targets                                 |
//! | v3      | v0 + strided (T1) targets                                |
//! | v4      | v0 with biased branches converted to unconditional       |
//! | v5      | control + L2 targets                                     |
//!
//! Strided targets carry the S bit and are left out of every seed set except
//! v3's, so the strided accesses and the address chains only they need drop
//! out of the skeleton and are prefetched by the T1 engine instead.

mod closure;
mod profile;

use std::collections::BTreeSet;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::uisa::{Opcode, Oracle, StaticProgram};

pub use closure::{successors, DepGraph, STORE_LOAD_WINDOW};
pub use profile::{profile, InstrProfile, ProfileBuilder, ProfileStats, TrainingParams};

/// Number of skeleton versions in a [`SkeletonSet`].
pub const NUM_VERSIONS: usize = 6;

/// Thresholds used by [`select_seeds`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedOptions {
    /// Memory instructions missing L1 with higher probability are L1 targets.
    pub l1_miss_threshold: f64,
    /// Memory instructions missing L2 with higher probability are L2 targets.
    pub l2_miss_threshold: f64,
    /// Mean dispatch-to-complete latency above which an instruction is slow.
    pub reuse_latency_threshold: f64,
    /// Slow instructions need more than this many static consumers.
    pub reuse_min_dependents: usize,
    /// Branches at least this biased (either direction) may be converted.
    pub bias_threshold: f64,
}

impl Default for SeedOptions {
    fn default() -> Self {
        SeedOptions {
            l1_miss_threshold: 0.01,
            l2_miss_threshold: 0.001,
            reuse_latency_threshold: 20.0,
            reuse_min_dependents: 1,
            bias_threshold: 0.999,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkeletonOptions {
    pub seeds: SeedOptions,
    /// Hand strided accesses to the T1 engine (sets S bits).
    pub t1_offload: bool,
}

impl Default for SkeletonOptions {
    fn default() -> Self {
        SkeletonOptions {
            seeds: SeedOptions::default(),
            t1_offload: true,
        }
    }
}

/// Seed instructions by class.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedVector {
    pub control: BTreeSet<usize>,
    pub l1_targets: BTreeSet<usize>,
    pub l2_targets: BTreeSet<usize>,
    pub value_reuse_targets: BTreeSet<usize>,
    pub t1_targets: BTreeSet<usize>,
    /// Conditional branches with their dominant direction.
    pub biased_branch_conversions: BTreeSet<(usize, bool)>,
}

/// Selects seeds from a profile.
pub fn select_seeds(
    program: &StaticProgram,
    profile: &ProfileStats,
    opts: &SeedOptions,
) -> SeedVector {
    let deps = DepGraph::new(program).static_dependents();
    let mut sv = SeedVector::default();
    for ins in &program.instrs {
        let i = ins.index;
        let op = ins.opcode();
        if op.is_control() {
            sv.control.insert(i);
        }
        let Some(p) = profile.per_instr.get(i) else {
            continue;
        };
        if p.exec_count == 0 {
            continue;
        }
        if op.is_mem() {
            if p.l1_miss_rate > opts.l1_miss_threshold {
                sv.l1_targets.insert(i);
            }
            if p.l2_miss_rate > opts.l2_miss_threshold {
                sv.l2_targets.insert(i);
            }
            if p.stride.is_some() {
                sv.t1_targets.insert(i);
            }
        }
        if ins.written_reg().is_some()
            && p.mean_latency > opts.reuse_latency_threshold
            && deps[i] > opts.reuse_min_dependents
        {
            sv.value_reuse_targets.insert(i);
        }
        if op == Opcode::BrCond {
            let b = p.branch_bias;
            if b >= opts.bias_threshold {
                sv.biased_branch_conversions.insert((i, true));
            } else if 1.0 - b >= opts.bias_threshold {
                sv.biased_branch_conversions.insert((i, false));
            }
        }
    }
    sv
}

/// One skeleton: a bitset over static instructions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonMask {
    pub version_id: usize,
    #[serde(with = "hexbits")]
    pub bits: FixedBitSet,
    /// Conditional branches the look-ahead thread follows in their biased
    /// direction without evaluating them, with that direction.
    pub converted_branches: Vec<(usize, bool)>,
}

impl SkeletonMask {
    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        self.bits.contains(i)
    }

    pub fn converted(&self, i: usize) -> Option<bool> {
        self.converted_branches
            .iter()
            .find(|(b, _)| *b == i)
            .map(|&(_, d)| d)
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones(..)
    }
}

/// Builds the closed mask for `seeds`, keeping `converted` branches without
/// their backward slices.
pub fn backward_closure(
    program: &StaticProgram,
    seeds: &BTreeSet<usize>,
    converted: &BTreeSet<usize>,
) -> FixedBitSet {
    closure_with(&DepGraph::new(program), program.len(), seeds, converted)
}

fn closure_with(
    g: &DepGraph,
    n: usize,
    seeds: &BTreeSet<usize>,
    converted: &BTreeSet<usize>,
) -> FixedBitSet {
    let mut s = FixedBitSet::with_capacity(n);
    s.extend(seeds.iter().copied());
    let mut c = FixedBitSet::with_capacity(n);
    c.extend(converted.iter().copied());
    g.closure(&s, &c)
}

/// The six versions plus S bits, bound to one program by content hash.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonSet {
    pub program_hash: String,
    pub num_instrs: usize,
    pub versions: Vec<SkeletonMask>,
    #[serde(with = "hexbits")]
    pub s_bits: FixedBitSet,
}

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("skeleton was built for program {expected}, not {found}")]
    HashMismatch { expected: String, found: String },
    #[error("skeleton has {0} versions, expected {NUM_VERSIONS}")]
    VersionCount(usize),
    #[error("version {version}: control instruction {index} missing")]
    MissingControl { version: usize, index: usize },
    #[error("version {version}: bit {index} beyond program length")]
    OutOfRange { version: usize, index: usize },
    #[error("version {version}: converted instruction {index} is not a conditional branch")]
    BadConversion { version: usize, index: usize },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Builds all six versions with default options.
pub fn gen_skeleton_versions(program: &StaticProgram, profile: &ProfileStats) -> SkeletonSet {
    gen_skeleton_versions_with(program, profile, &SkeletonOptions::default())
}

pub fn gen_skeleton_versions_with(
    program: &StaticProgram,
    profile: &ProfileStats,
    opts: &SkeletonOptions,
) -> SkeletonSet {
    let sv = select_seeds(program, profile, &opts.seeds);
    let g = DepGraph::new(program);
    let n = program.len();
    let s: BTreeSet<usize> = if opts.t1_offload {
        sv.t1_targets.clone()
    } else {
        BTreeSet::new()
    };
    let minus_s = |x: &BTreeSet<usize>| -> BTreeSet<usize> { x.difference(&s).copied().collect() };
    let union = |a: &BTreeSet<usize>, b: &BTreeSet<usize>| -> BTreeSet<usize> { a | b };

    let mem = minus_s(&union(&sv.l1_targets, &sv.l2_targets));
    let v0 = union(&sv.control, &mem);
    let l2_only: BTreeSet<usize> = sv.l2_targets.difference(&sv.l1_targets).copied().collect();
    let v1 = union(&sv.control, &minus_s(&l2_only));
    let v2 = union(&v0, &minus_s(&sv.value_reuse_targets));
    let v3 = union(&v0, &sv.t1_targets);
    let v5 = union(&sv.control, &minus_s(&sv.l2_targets));
    let conv: Vec<(usize, bool)> = sv.biased_branch_conversions.iter().copied().collect();
    let conv_idx: BTreeSet<usize> = conv.iter().map(|c| c.0).collect();

    let none = BTreeSet::new();
    let recipes: [(&BTreeSet<usize>, &BTreeSet<usize>); NUM_VERSIONS] = [
        (&v0, &none),
        (&v1, &none),
        (&v2, &none),
        (&v3, &none),
        (&v0, &conv_idx),
        (&v5, &none),
    ];
    let versions = recipes
        .iter()
        .enumerate()
        .map(|(id, (seeds, converted))| SkeletonMask {
            version_id: id,
            bits: closure_with(&g, n, seeds, converted),
            converted_branches: if id == 4 { conv.clone() } else { Vec::new() },
        })
        .collect();
    let mut s_bits = FixedBitSet::with_capacity(n);
    s_bits.extend(s.iter().copied());
    SkeletonSet {
        program_hash: program.content_hash(),
        num_instrs: n,
        versions,
        s_bits,
    }
}

impl SkeletonSet {
    /// All six versions equal to `bits`, no S bits.
    pub fn uniform(program: &StaticProgram, bits: FixedBitSet) -> Self {
        let versions = (0..NUM_VERSIONS)
            .map(|version_id| SkeletonMask {
                version_id,
                bits: bits.clone(),
                converted_branches: Vec::new(),
            })
            .collect();
        SkeletonSet {
            program_hash: program.content_hash(),
            num_instrs: program.len(),
            versions,
            s_bits: FixedBitSet::with_capacity(program.len()),
        }
    }

    /// Every instruction in every version.
    pub fn full(program: &StaticProgram) -> Self {
        let mut bits = FixedBitSet::with_capacity(program.len());
        bits.insert_range(..);
        Self::uniform(program, bits)
    }

    /// Control instructions and their backward slices only.
    pub fn control_only(program: &StaticProgram) -> Self {
        let control: BTreeSet<usize> = program
            .instrs
            .iter()
            .filter(|i| i.opcode().is_control())
            .map(|i| i.index)
            .collect();
        Self::uniform(program, backward_closure(program, &control, &BTreeSet::new()))
    }

    /// Checks the set against `program` and the structural invariants.
    pub fn validate(&self, program: &StaticProgram) -> Result<(), SkeletonError> {
        let hash = program.content_hash();
        if self.program_hash != hash {
            return Err(SkeletonError::HashMismatch {
                expected: self.program_hash.clone(),
                found: hash,
            });
        }
        if self.versions.len() != NUM_VERSIONS {
            return Err(SkeletonError::VersionCount(self.versions.len()));
        }
        let n = program.len();
        for v in &self.versions {
            let version = v.version_id;
            if let Some(index) = v.bits.ones().find(|&i| i >= n) {
                return Err(SkeletonError::OutOfRange { version, index });
            }
            for &(index, _) in &v.converted_branches {
                if program.instrs.get(index).map(|i| i.opcode()) != Some(Opcode::BrCond) {
                    return Err(SkeletonError::BadConversion { version, index });
                }
            }
            for ins in program.instrs.iter().filter(|i| i.opcode().is_control()) {
                if !v.contains(ins.index) {
                    return Err(SkeletonError::MissingControl {
                        version,
                        index: ins.index,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("skeleton serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SkeletonError> {
        let mut s: SkeletonSet = serde_json::from_str(text)?;
        let n = s.num_instrs;
        for v in &mut s.versions {
            v.bits = fit(&v.bits, n).map_err(|index| SkeletonError::OutOfRange {
                version: v.version_id,
                index,
            })?;
        }
        s.s_bits = fit(&s.s_bits, n).map_err(|index| SkeletonError::OutOfRange {
            version: NUM_VERSIONS,
            index,
        })?;
        Ok(s)
    }
}

/// Copies `bits` into a set of exactly `n` bits, or returns the first bit
/// that does not fit.
fn fit(bits: &FixedBitSet, n: usize) -> Result<FixedBitSet, usize> {
    if let Some(i) = bits.ones().find(|&i| i >= n) {
        return Err(i);
    }
    let mut out = FixedBitSet::with_capacity(n);
    out.extend(bits.ones());
    Ok(out)
}

/// Fraction of the dynamic instruction stream (first `limit` instructions)
/// that falls in `mask`.
pub fn dynamic_fraction(program: &StaticProgram, mask: &FixedBitSet, limit: u64) -> f64 {
    let (mut total, mut hit) = (0u64, 0u64);
    for ev in Oracle::new(program).take(limit as usize) {
        let Ok(ev) = ev else { break };
        total += 1;
        hit += mask.contains(ev.pc) as u64;
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Hex encoding of bitsets: bit `i` is bit `i % 8` of byte `i / 8`.
mod hexbits {
    use fixedbitset::FixedBitSet;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bits: &FixedBitSet, s: S) -> Result<S::Ok, S::Error> {
        let mut bytes = vec![0u8; bits.len().div_ceil(8)];
        for i in bits.ones() {
            bytes[i / 8] |= 1 << (i % 8);
        }
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<FixedBitSet, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(text).map_err(serde::de::Error::custom)?;
        let mut bits = FixedBitSet::with_capacity(bytes.len() * 8);
        for (b, byte) in bytes.iter().enumerate() {
            for k in 0..8 {
                if byte >> k & 1 == 1 {
                    bits.insert(b * 8 + k);
                }
            }
        }
        Ok(bits)
    }
}

#[cfg(test)]
mod tests;
