//! Small pipeline building blocks shared by both threads.

use std::collections::HashSet;

/// Per-cycle issue-slot accounting for a window of future cycles.
#[derive(Clone, Debug)]
pub(crate) struct IssueSlots {
    width: u8,
    ring: Vec<(u64, u8)>,
}

const RING: usize = 1 << 16;

impl IssueSlots {
    pub fn new(width: usize) -> Self {
        IssueSlots {
            width: width.clamp(1, u8::MAX as usize) as u8,
            ring: vec![(u64::MAX, 0); RING],
        }
    }

    /// Reserves a slot in the first cycle at or after `earliest` with room.
    pub fn reserve(&mut self, earliest: u64) -> u64 {
        let mut c = earliest;
        loop {
            let slot = &mut self.ring[c as usize & (RING - 1)];
            if slot.0 != c {
                *slot = (c, 0);
            }
            if slot.1 < self.width {
                slot.1 += 1;
                return c;
            }
            c += 1;
        }
    }
}

/// Global-history predictor with 2-bit counters.
#[derive(Clone, Debug)]
pub(crate) struct Gshare {
    table: Vec<u8>,
    history: u64,
    mask: u64,
}

impl Gshare {
    pub fn new(bits: u32) -> Self {
        let size = 1usize << bits.clamp(1, 24);
        Gshare {
            table: vec![1; size],
            history: 0,
            mask: size as u64 - 1,
        }
    }

    fn index(&self, pc: usize) -> usize {
        ((pc as u64 ^ self.history) & self.mask) as usize
    }

    pub fn predict(&self, pc: usize) -> bool {
        self.table[self.index(pc)] >= 2
    }

    pub fn update(&mut self, pc: usize, taken: bool) {
        let i = self.index(pc);
        let c = &mut self.table[i];
        *c = if taken { (*c + 1).min(3) } else { c.saturating_sub(1) };
        self.history = ((self.history << 1) | taken as u64) & self.mask;
    }
}

/// Set of control instructions whose taken target is known.
#[derive(Clone, Debug, Default)]
pub(crate) struct Btb {
    known: HashSet<usize>,
}

impl Btb {
    /// Returns `true` if the entry was missing.
    pub fn insert(&mut self, pc: usize) -> bool {
        self.known.insert(pc)
    }
}

/// Why the fetch stage is not fetching.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Gate {
    Open,
    /// Until the mispredicted branch with this sequence number resolves.
    Branch(u64),
    Until(u64),
}

/// Execution latency of non-memory instruction classes.
pub(crate) fn exec_latency(op: crate::uisa::Opcode, alu: u64, mul: u64) -> u64 {
    use crate::uisa::Opcode;
    match op {
        Opcode::Mul => mul,
        _ => alu,
    }
}

pub(crate) fn bump(hist: &mut [u64], i: usize) {
    let last = hist.len() - 1;
    hist[i.min(last)] += 1;
}
