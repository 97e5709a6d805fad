//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use r3dla::uisa::{Opcode, StaticProgram};

/// Control-flow successors, derived directly from the ISA semantics.
fn successors(p: &StaticProgram) -> Vec<Vec<usize>> {
    let n = p.len();
    let after_calls: Vec<usize> = p
        .instrs
        .iter()
        .enumerate()
        .filter(|(i, ins)| ins.opcode() == Opcode::Call && i + 1 < n)
        .map(|(i, _)| i + 1)
        .collect();
    p.instrs
        .iter()
        .enumerate()
        .map(|(i, ins)| {
            let fall: Vec<usize> = if i + 1 < n { vec![i + 1] } else { vec![] };
            match ins.opcode() {
                Opcode::BrCond => {
                    let mut s = fall;
                    s.push(ins.target.unwrap());
                    s
                }
                Opcode::BrUncond | Opcode::Call => vec![ins.target.unwrap()],
                Opcode::Ret => after_calls.clone(),
                Opcode::Halt => vec![],
                _ => fall,
            }
        })
        .collect()
}

/// Direct dependences of every instruction: for each source register, the
/// definitions found by walking predecessors backwards until the register is
/// written; for each LOAD, same-(base, offset) STOREs up to 1000 instructions
/// before it.
pub fn direct_producers(p: &StaticProgram) -> Vec<BTreeSet<usize>> {
    let n = p.len();
    let succ = successors(p);
    let mut preds = vec![Vec::new(); n];
    for (i, ss) in succ.iter().enumerate() {
        for &s in ss {
            preds[s].push(i);
        }
    }
    let writes = |i: usize, r: u8| {
        p.instrs[i].dst.is_some_and(|d| d.0 == r && r != 0)
    };
    (0..n)
        .map(|i| {
            let ins = &p.instrs[i];
            let mut out = BTreeSet::new();
            for r in ins.srcs.iter().filter(|r| r.0 != 0) {
                let mut seen = HashSet::new();
                let mut stack: Vec<usize> = preds[i].clone();
                while let Some(q) = stack.pop() {
                    if !seen.insert(q) {
                        continue;
                    }
                    if writes(q, r.0) {
                        out.insert(q);
                    } else {
                        stack.extend(&preds[q]);
                    }
                }
            }
            if ins.opcode() == Opcode::Load {
                for j in i.saturating_sub(1000)..i {
                    let st = &p.instrs[j];
                    if st.opcode() == Opcode::Store
                        && st.mem_base == ins.mem_base
                        && st.mem_offset == ins.mem_offset
                    {
                        out.insert(j);
                    }
                }
            }
            out
        })
        .collect()
}

/// Brute-force closure: rescan the whole program until nothing changes.
pub fn worklist_closure(
    producers: &[BTreeSet<usize>],
    seeds: &BTreeSet<usize>,
    converted: &BTreeSet<usize>,
) -> BTreeSet<usize> {
    let mut mask = seeds.clone();
    loop {
        let mut changed = false;
        for i in 0..producers.len() {
            if !mask.contains(&i) || converted.contains(&i) {
                continue;
            }
            for &q in &producers[i] {
                changed |= mask.insert(q);
            }
        }
        if !changed {
            return mask;
        }
    }
}
