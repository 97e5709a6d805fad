//! Functional interpreter.

use std::collections::HashMap;

use thiserror::Error;

use super::{Opcode, StaticInstr, StaticProgram, TraceEvent, NUM_REGS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("pc {pc}: memory access to negative address {addr}")]
    NegativeAddress { pc: usize, addr: i64 },
    #[error("pc {pc}: RET with empty call stack")]
    EmptyCallStack { pc: usize },
    #[error("pc {0} is outside the program")]
    PcOutOfRange(usize),
    #[error("machine already halted")]
    Halted,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("instruction limit must be positive")]
    ZeroLimit,
    #[error("at dynamic instruction {seq}: {source}")]
    Exec { seq: u64, source: ExecError },
}

/// Word-addressed memory as seen by an executing thread.
pub trait MemPort {
    fn load(&mut self, addr: i64) -> i64;
    fn store(&mut self, addr: i64, value: i64);
}

impl MemPort for HashMap<i64, i64> {
    #[inline]
    fn load(&mut self, addr: i64) -> i64 {
        self.get(&addr).copied().unwrap_or(0)
    }
    #[inline]
    fn store(&mut self, addr: i64, value: i64) {
        self.insert(addr, value);
    }
}

/// Architectural state of one thread.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchState {
    pub regs: [i64; NUM_REGS],
    pub pc: usize,
    pub memory: HashMap<i64, i64>,
    pub call_stack: Vec<usize>,
    /// Dynamic instructions executed so far.
    pub seq: u64,
    pub halted: bool,
}

impl ArchState {
    /// Reset state: zero registers, `pc = entry`, memory pre-seeded from the data image.
    pub fn new(program: &StaticProgram) -> Self {
        ArchState {
            regs: [0; NUM_REGS],
            pc: program.entry,
            memory: program.data.iter().map(|(&a, &v)| (a, v)).collect(),
            call_stack: Vec::new(),
            seq: 0,
            halted: false,
        }
    }
}

/// Executes one instruction against `regs`/`call_stack`/`mem`.
///
/// Returns the event; the caller advances its pc with [`TraceEvent::next_pc`].
#[inline]
pub(crate) fn execute<M: MemPort>(
    ins: &StaticInstr,
    regs: &mut [i64; NUM_REGS],
    call_stack: &mut Vec<usize>,
    mem: &mut M,
    seq: u64,
) -> Result<TraceEvent, ExecError> {
    let pc = ins.index;
    let src = |i: usize| regs[ins.srcs[i].index()];
    let mut ev = TraceEvent {
        seq,
        pc,
        opcode: ins.opcode(),
        eff_addr: None,
        value: None,
        taken: None,
        target_pc: None,
    };
    match ins.opcode() {
        Opcode::Alui => ev.value = Some(ins.op.eval(src(0), ins.imm.unwrap_or(0))),
        Opcode::Alu | Opcode::Mul => ev.value = Some(ins.op.eval(src(0), src(1))),
        Opcode::Load => {
            let addr = src(0).wrapping_add(ins.mem_offset);
            if addr < 0 {
                return Err(ExecError::NegativeAddress { pc, addr });
            }
            ev.eff_addr = Some(addr);
            ev.value = Some(mem.load(addr));
        }
        Opcode::Store => {
            let addr = src(1).wrapping_add(ins.mem_offset);
            if addr < 0 {
                return Err(ExecError::NegativeAddress { pc, addr });
            }
            let v = src(0);
            mem.store(addr, v);
            ev.eff_addr = Some(addr);
            ev.value = Some(v);
        }
        Opcode::BrCond => {
            ev.taken = Some(ins.op.condition(src(0), src(1)));
            ev.target_pc = ins.target;
        }
        Opcode::BrUncond => ev.target_pc = ins.target,
        Opcode::Call => {
            call_stack.push(pc + 1);
            ev.target_pc = ins.target;
        }
        Opcode::Ret => {
            let ra = call_stack.pop().ok_or(ExecError::EmptyCallStack { pc })?;
            ev.target_pc = Some(ra);
        }
        Opcode::Halt => {}
    }
    if let (Some(d), Some(v)) = (ins.written_reg(), ev.value) {
        if ins.opcode() != Opcode::Store {
            regs[d.index()] = v;
        }
    }
    Ok(ev)
}

/// Executes the instruction at `state.pc`.
pub fn step(state: &mut ArchState, program: &StaticProgram) -> Result<TraceEvent, ExecError> {
    if state.halted {
        return Err(ExecError::Halted);
    }
    let ins = program
        .instrs
        .get(state.pc)
        .ok_or(ExecError::PcOutOfRange(state.pc))?;
    let ev = execute(
        ins,
        &mut state.regs,
        &mut state.call_stack,
        &mut state.memory,
        state.seq,
    )?;
    state.seq += 1;
    if ev.opcode == Opcode::Halt {
        state.halted = true;
    } else {
        state.pc = ev.next_pc();
    }
    Ok(ev)
}

/// Runs from reset until HALT (included in the trace) or `limit` events.
pub fn run_trace(program: &StaticProgram, limit: u64) -> Result<Vec<TraceEvent>, TraceError> {
    if limit == 0 {
        return Err(TraceError::ZeroLimit);
    }
    Oracle::new(program).take(limit as usize).collect()
}

/// Lazily evaluated functional trace.
#[derive(Clone, Debug)]
pub struct Oracle<'p> {
    program: &'p StaticProgram,
    state: ArchState,
    failed: bool,
}

impl<'p> Oracle<'p> {
    pub fn new(program: &'p StaticProgram) -> Self {
        Oracle {
            program,
            state: ArchState::new(program),
            failed: false,
        }
    }

    pub fn state(&self) -> &ArchState {
        &self.state
    }
}

impl Iterator for Oracle<'_> {
    type Item = Result<TraceEvent, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.state.halted || self.failed {
            return None;
        }
        let seq = self.state.seq;
        match step(&mut self.state, self.program) {
            Ok(ev) => Some(Ok(ev)),
            Err(source) => {
                self.failed = true;
                Some(Err(TraceError::Exec { seq, source }))
            }
        }
    }
}
