//! Static dependence graph and backward-dependence closure.

use fixedbitset::FixedBitSet;

use crate::uisa::{Opcode, StaticProgram, NUM_REGS};

/// A STORE feeds a LOAD only if it precedes the load by at most this many
/// static instructions.
pub const STORE_LOAD_WINDOW: usize = 1000;

/// Control-flow successors of every instruction. `RET` returns to the
/// instruction after every `CALL` site.
pub fn successors(program: &StaticProgram) -> Vec<Vec<usize>> {
    let n = program.len();
    let return_sites: Vec<usize> = program
        .instrs
        .iter()
        .filter(|i| i.opcode() == Opcode::Call && i.index + 1 < n)
        .map(|i| i.index + 1)
        .collect();
    program
        .instrs
        .iter()
        .map(|ins| {
            let next = (ins.index + 1 < n).then_some(ins.index + 1);
            match ins.opcode() {
                Opcode::BrCond => {
                    let mut s: Vec<usize> = next.into_iter().collect();
                    s.extend(ins.target.filter(|t| Some(*t) != next));
                    s
                }
                Opcode::BrUncond | Opcode::Call => ins.target.into_iter().collect(),
                Opcode::Ret => return_sites.clone(),
                Opcode::Halt => Vec::new(),
                _ => next.into_iter().collect(),
            }
        })
        .collect()
}

/// Register reaching definitions plus parser-level store-to-load edges.
pub struct DepGraph {
    /// `producers[i]`: instructions whose register results may reach a source of `i`.
    producers: Vec<Vec<usize>>,
    /// `mem_producers[i]`: STOREs that may feed LOAD `i`.
    mem_producers: Vec<Vec<usize>>,
}

impl DepGraph {
    pub fn new(program: &StaticProgram) -> Self {
        let n = program.len();
        let succ = successors(program);
        let mut defs_of = vec![FixedBitSet::with_capacity(n); NUM_REGS];
        for ins in &program.instrs {
            if let Some(r) = ins.written_reg() {
                defs_of[r.index()].insert(ins.index);
            }
        }

        // Forward may-reach dataflow to a fixpoint (round-robin in program order).
        let mut inn = vec![FixedBitSet::with_capacity(n); n];
        let mut out = vec![FixedBitSet::with_capacity(n); n];
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..n {
                let mut o = inn[i].clone();
                if let Some(r) = program.instrs[i].written_reg() {
                    o.difference_with(&defs_of[r.index()]);
                    o.insert(i);
                }
                if o != out[i] {
                    out[i] = o;
                    changed = true;
                }
                for &s in &succ[i] {
                    let before = inn[s].count_ones(..);
                    inn[s].union_with(&out[i]);
                    if inn[s].count_ones(..) != before {
                        changed = true;
                    }
                }
            }
        }

        let producers = program
            .instrs
            .iter()
            .map(|ins| {
                let mut p = FixedBitSet::with_capacity(n);
                for r in ins.read_regs() {
                    let mut reach = inn[ins.index].clone();
                    reach.intersect_with(&defs_of[r.index()]);
                    p.union_with(&reach);
                }
                p.ones().collect()
            })
            .collect();

        let mem_producers = program
            .instrs
            .iter()
            .map(|ld| {
                if ld.opcode() != Opcode::Load {
                    return Vec::new();
                }
                let lo = ld.index.saturating_sub(STORE_LOAD_WINDOW);
                program.instrs[lo..ld.index]
                    .iter()
                    .filter(|st| {
                        st.opcode() == Opcode::Store
                            && st.mem_base == ld.mem_base
                            && st.mem_offset == ld.mem_offset
                    })
                    .map(|st| st.index)
                    .collect()
            })
            .collect();

        DepGraph {
            producers,
            mem_producers,
        }
    }

    pub fn len(&self) -> usize {
        self.producers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.producers.is_empty()
    }

    /// Instructions `i` directly depends on (registers and memory).
    pub fn producers(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.producers[i]
            .iter()
            .chain(&self.mem_producers[i])
            .copied()
    }

    /// Number of static instructions that may consume `i`'s register result.
    pub fn static_dependents(&self) -> Vec<usize> {
        let mut counts = vec![0; self.len()];
        for p in &self.producers {
            for &q in p {
                counts[q] += 1;
            }
        }
        counts
    }

    /// Least set containing `seeds` and closed under [`producers`](Self::producers).
    /// Members of `no_deps` (converted branches) are kept without their sources.
    pub fn closure(&self, seeds: &FixedBitSet, no_deps: &FixedBitSet) -> FixedBitSet {
        let mut mask = FixedBitSet::with_capacity(self.len());
        let mut stack: Vec<usize> = seeds.ones().collect();
        for &s in &stack {
            mask.insert(s);
        }
        while let Some(i) = stack.pop() {
            if no_deps.contains(i) {
                continue;
            }
            for p in self.producers(i) {
                if !mask.put(p) {
                    stack.push(p);
                }
            }
        }
        mask
    }
}
