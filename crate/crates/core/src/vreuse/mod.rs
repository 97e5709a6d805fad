//! Value reuse from the look-ahead thread.
//!
//! A Bloom-filter "slow instruction filter" (SIF) remembers pcs that were
//! slow during the first iterations of a loop. The look-ahead thread ships
//! the values it computed for those pcs; the main thread matches them by
//! branch-queue entry and offset, feeds them to dependents at dispatch, and
//! validates them. A validation scoreboard lets predicted ALU instructions
//! whose inputs were all validated skip their own validation.

use std::collections::{HashSet, VecDeque};

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::uisa::{StaticInstr, NUM_REGS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VreuseConfig {
    pub sif_bits: usize,
    pub sif_hashes: u32,
    /// Training iterations at the start of each loop.
    pub train_iterations: u64,
    /// Dispatch-to-complete latency (cycles) at or above which a pc is slow.
    pub slow_latency: u64,
    pub vpt_capacity: usize,
}

impl Default for VreuseConfig {
    fn default() -> Self {
        VreuseConfig {
            sif_bits: 1024,
            sif_hashes: 2,
            train_iterations: 8,
            slow_latency: 20,
            vpt_capacity: 32,
        }
    }
}

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Bloom filter over pcs plus an exact set of deleted pcs.
#[derive(Clone, Debug)]
pub struct SlowInstructionFilter {
    bits: FixedBitSet,
    hashes: u32,
    deleted: HashSet<usize>,
}

impl SlowInstructionFilter {
    pub fn new(bits: usize, hashes: u32) -> Self {
        SlowInstructionFilter {
            bits: FixedBitSet::with_capacity(bits.max(1)),
            hashes: hashes.max(1),
            deleted: HashSet::new(),
        }
    }

    fn slots(&self, pc: usize) -> impl Iterator<Item = usize> + '_ {
        let m = self.bits.len() as u64;
        (0..self.hashes as u64).map(move |k| (mix(pc as u64 ^ (k << 56)) % m) as usize)
    }

    pub fn insert(&mut self, pc: usize) {
        if self.deleted.contains(&pc) {
            return;
        }
        let slots: Vec<usize> = self.slots(pc).collect();
        for s in slots {
            self.bits.insert(s);
        }
    }

    pub fn contains(&self, pc: usize) -> bool {
        !self.deleted.contains(&pc) && self.slots(pc).all(|s| self.bits.contains(s))
    }

    /// Removes `pc` until the next [`clear`](Self::clear).
    pub fn delete(&mut self, pc: usize) {
        self.deleted.insert(pc);
    }

    pub fn is_deleted(&self, pc: usize) -> bool {
        self.deleted.contains(&pc)
    }

    pub fn clear(&mut self) {
        self.bits.clear();
        self.deleted.clear();
    }
}

/// Trains the SIF during the first iterations of each newly entered loop.
#[derive(Clone, Debug)]
pub struct SifTrainer {
    pub sif: SlowInstructionFilter,
    cfg: VreuseConfig,
    loop_pc: Option<usize>,
    iterations: u64,
}

impl SifTrainer {
    pub fn new(cfg: &VreuseConfig) -> Self {
        SifTrainer {
            sif: SlowInstructionFilter::new(cfg.sif_bits, cfg.sif_hashes),
            cfg: cfg.clone(),
            loop_pc: None,
            iterations: 0,
        }
    }

    /// A loop was entered. Entering a different loop than the one last
    /// trained clears the filter and restarts training.
    pub fn loop_entered(&mut self, loop_pc: usize) {
        if self.loop_pc != Some(loop_pc) {
            self.sif.clear();
            self.loop_pc = Some(loop_pc);
        }
        self.iterations = 0;
    }

    pub fn loop_iterated(&mut self, loop_pc: usize) {
        if self.loop_pc == Some(loop_pc) {
            self.iterations += 1;
        }
    }

    pub fn training(&self) -> bool {
        self.loop_pc.is_some() && self.iterations < self.cfg.train_iterations
    }

    /// Feeds one committed instruction. Returns `true` if it was inserted.
    pub fn observe(&mut self, ins: &StaticInstr, latency: u64) -> bool {
        let eligible = ins.written_reg().is_some() && latency >= self.cfg.slow_latency;
        if self.training() && eligible && !self.sif.contains(ins.index) {
            self.sif.insert(ins.index);
            return true;
        }
        false
    }
}

/// A value shipped by the look-ahead thread.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValuePrediction {
    pub boq_tag: u64,
    /// Dynamic instructions since the preceding conditional branch.
    pub offset: u32,
    pub producer_pc: usize,
    pub value: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VptLookup {
    Hit(i64),
    /// An entry sat at this position but belonged to a different pc.
    Misaligned,
    Miss,
}

/// Value prediction table, FIFO-replaced.
#[derive(Clone, Debug)]
pub struct Vpt {
    entries: VecDeque<ValuePrediction>,
    capacity: usize,
}

impl Vpt {
    pub fn new(capacity: usize) -> Self {
        Vpt {
            entries: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Returns `true` if an older entry was evicted to make room.
    pub fn insert(&mut self, p: ValuePrediction) -> bool {
        let evicted = self.entries.len() >= self.capacity;
        if evicted {
            self.entries.pop_front();
        }
        self.entries.push_back(p);
        evicted
    }

    /// Consumes the entry for `(tag, offset)` if any.
    pub fn take(&mut self, tag: u64, offset: u32, pc: usize) -> VptLookup {
        let Some(i) = self
            .entries
            .iter()
            .position(|e| e.boq_tag == tag && e.offset == offset)
        else {
            return VptLookup::Miss;
        };
        let e = self.entries.remove(i).expect("index in range");
        if e.producer_pc == pc {
            VptLookup::Hit(e.value)
        } else {
            VptLookup::Misaligned
        }
    }

    /// Drops entries attached to branch-queue entries older than `tag`.
    pub fn retire_before(&mut self, tag: u64) -> usize {
        let before = self.entries.len();
        self.entries.retain(|e| e.boq_tag >= tag);
        before - self.entries.len()
    }

    /// Drops every entry produced by `pc`.
    pub fn remove_pc(&mut self, pc: usize) -> usize {
        let before = self.entries.len();
        self.entries.retain(|e| e.producer_pc != pc);
        before - self.entries.len()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// How the main thread handles one dispatched instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Disposition {
    /// No prediction: executed as usual.
    Normal,
    /// Predicted; executed and compared against the prediction.
    Validate,
    /// Predicted ALU op with validated inputs: the prediction is trusted.
    Skip,
}

/// Per-register "holds a validated value" bits, reset at taken branches.
#[derive(Clone, Debug)]
pub struct Scoreboard {
    validated: [bool; NUM_REGS],
}

impl Default for Scoreboard {
    fn default() -> Self {
        let mut s = Scoreboard {
            validated: [false; NUM_REGS],
        };
        s.reset();
        s
    }
}

impl Scoreboard {
    pub fn reset(&mut self) {
        self.validated = [false; NUM_REGS];
        self.validated[0] = true;
    }

    pub fn is_validated(&self, r: usize) -> bool {
        r == 0 || self.validated[r]
    }

    /// Classifies an instruction at dispatch and updates the bits.
    pub fn dispatch(&mut self, ins: &StaticInstr, predicted: bool) -> Disposition {
        let alu = ins.opcode().is_arith();
        let disp = if !predicted {
            Disposition::Normal
        } else if alu && ins.read_regs().all(|r| self.is_validated(r.index())) {
            Disposition::Skip
        } else {
            Disposition::Validate
        };
        if let Some(d) = ins.written_reg() {
            if d.index() != 0 {
                self.validated[d.index()] = predicted && alu;
            }
        }
        disp
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReuseStats {
    pub sif_inserts: u64,
    pub sif_deletes: u64,
    pub footnotes_emitted: u64,
    pub predictions_used: u64,
    pub confirmed: u64,
    pub mispredicted: u64,
    pub skipped: u64,
    pub misaligned: u64,
    pub vpt_evictions: u64,
    pub replays: u64,
    /// Predictions used for a pc after a replay deleted it from the SIF.
    pub predictions_after_deletion: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uisa::{Op, Reg};

    #[test]
    fn sif_membership_and_deletion() {
        let mut s = SlowInstructionFilter::new(1024, 2);
        assert!(!s.contains(17));
        s.insert(17);
        assert!(s.contains(17));
        s.delete(17);
        assert!(!s.contains(17));
        s.insert(17);
        assert!(!s.contains(17), "deleted pcs stay out until cleared");
        s.clear();
        s.insert(17);
        assert!(s.contains(17));
    }

    #[test]
    fn sif_has_no_false_negatives() {
        let mut s = SlowInstructionFilter::new(1024, 2);
        for pc in (0..200).step_by(3) {
            s.insert(pc);
        }
        assert!((0..200).step_by(3).all(|pc| s.contains(pc)));
    }

    #[test]
    fn trainer_only_trains_early_iterations() {
        let cfg = VreuseConfig::default();
        let mut t = SifTrainer::new(&cfg);
        let ld = StaticInstr::load(3, Reg(4), Reg(1), 0);
        assert!(!t.observe(&ld, 100), "no loop yet");
        t.loop_entered(9);
        assert!(t.observe(&ld, 100));
        let fast = StaticInstr::alu(4, Op::Add, Reg(5), Reg(5), Reg(4));
        assert!(!t.observe(&fast, 1));
        for _ in 0..8 {
            t.loop_iterated(9);
        }
        let late = StaticInstr::load(6, Reg(7), Reg(1), 8);
        assert!(!t.observe(&late, 100));
        assert!(t.sif.contains(3));
        t.loop_entered(9);
        assert!(t.sif.contains(3), "re-entering the same loop keeps the filter");
        t.loop_entered(40);
        assert!(!t.sif.contains(3));
    }

    #[test]
    fn vpt_matches_by_tag_offset_and_pc() {
        let mut v = Vpt::new(2);
        let p = |tag, offset, pc, value| ValuePrediction {
            boq_tag: tag,
            offset,
            producer_pc: pc,
            value,
        };
        v.insert(p(1, 3, 10, 77));
        v.insert(p(1, 4, 11, 78));
        assert!(v.insert(p(2, 1, 12, 79)));
        assert_eq!(v.take(1, 3, 10), VptLookup::Miss);
        assert_eq!(v.take(1, 4, 99), VptLookup::Misaligned);
        assert_eq!(v.take(2, 1, 12), VptLookup::Hit(79));
        assert!(v.is_empty());
        v.insert(p(3, 1, 1, 1));
        v.insert(p(5, 1, 1, 1));
        assert_eq!(v.retire_before(4), 1);
    }

    #[test]
    fn scoreboard_skip_rule() {
        let mut s = Scoreboard::default();
        // r1 = r0 + 5 predicted: source r0 is always validated.
        let a = StaticInstr::alui(0, Op::Addi, Reg(1), Reg(0), 5);
        assert_eq!(s.dispatch(&a, true), Disposition::Skip);
        // r2 = r1 + r3: r3 unknown, validate.
        let b = StaticInstr::alu(1, Op::Add, Reg(2), Reg(1), Reg(3));
        assert_eq!(s.dispatch(&b, true), Disposition::Validate);
        // r4 = r1 + r2: both validated now.
        let c = StaticInstr::alu(2, Op::Add, Reg(4), Reg(1), Reg(2));
        assert_eq!(s.dispatch(&c, true), Disposition::Skip);
        // A predicted load clears its destination.
        let ld = StaticInstr::load(3, Reg(1), Reg(4), 0);
        assert_eq!(s.dispatch(&ld, true), Disposition::Validate);
        assert!(!s.is_validated(1));
        // An unpredicted producer clears too.
        let d = StaticInstr::alu(4, Op::Add, Reg(4), Reg(0), Reg(0));
        assert_eq!(s.dispatch(&d, false), Disposition::Normal);
        assert!(!s.is_validated(4));
        s.reset();
        assert!(!s.is_validated(2) && s.is_validated(0));
    }
}
