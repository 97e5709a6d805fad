//! Micro-ISA: static program representation, functional interpreter,
//! trace format and synthetic workload generators.
//!
//! The ISA has 64 integer registers (`r0` reads as zero and ignores writes),
//! no flags, and a sparse word-granular memory initialised to zero. Every
//! address names one 64-bit word; cache models group addresses into lines
//! by `addr / line_size`.
//!
//! # Opcode table
//!
//! | Mnemonic | Class       | Syntax                | Semantics                               |
//! |----------|-------------|-----------------------|-----------------------------------------|
//! | `ADDI`   | `ALUI`      | `ADDI rd, rs, imm`    | `rd = rs + imm`                          |
//! | `ANDI`   | `ALUI`      | `ANDI rd, rs, imm`    | `rd = rs & imm`                          |
//! | `ORI`    | `ALUI`      | `ORI rd, rs, imm`     | `rd = rs \| imm`                         |
//! | `XORI`   | `ALUI`      | `XORI rd, rs, imm`    | `rd = rs ^ imm`                          |
//! | `SLLI`   | `ALUI`      | `SLLI rd, rs, imm`    | `rd = rs << (imm & 63)`                  |
//! | `SRLI`   | `ALUI`      | `SRLI rd, rs, imm`    | `rd = rs >>> (imm & 63)` (logical)       |
//! | `SLTI`   | `ALUI`      | `SLTI rd, rs, imm`    | `rd = (rs < imm) ? 1 : 0`                |
//! | `ADD`    | `ALU`       | `ADD rd, rs1, rs2`    | `rd = rs1 + rs2`                         |
//! | `SUB`    | `ALU`       | `SUB rd, rs1, rs2`    | `rd = rs1 - rs2`                         |
//! | `AND`    | `ALU`       | `AND rd, rs1, rs2`    | `rd = rs1 & rs2`                         |
//! | `OR`     | `ALU`       | `OR rd, rs1, rs2`     | `rd = rs1 \| rs2`                        |
//! | `XOR`    | `ALU`       | `XOR rd, rs1, rs2`    | `rd = rs1 ^ rs2`                         |
//! | `SLL`    | `ALU`       | `SLL rd, rs1, rs2`    | `rd = rs1 << (rs2 & 63)`                 |
//! | `SRL`    | `ALU`       | `SRL rd, rs1, rs2`    | `rd = rs1 >>> (rs2 & 63)` (logical)      |
//! | `SLT`    | `ALU`       | `SLT rd, rs1, rs2`    | `rd = (rs1 < rs2) ? 1 : 0`               |
//! | `MUL`    | `MUL`       | `MUL rd, rs1, rs2`    | `rd = rs1 * rs2` (wrapping)              |
//! | `LD`     | `LOAD`      | `LD rd, off(rb)`      | `rd = mem[rb + off]`                     |
//! | `ST`     | `STORE`     | `ST rs, off(rb)`      | `mem[rb + off] = rs`                     |
//! | `BEQ`    | `BR_COND`   | `BEQ rs1, rs2, label` | taken iff `rs1 == rs2`                   |
//! | `BNE`    | `BR_COND`   | `BNE rs1, rs2, label` | taken iff `rs1 != rs2`                   |
//! | `BLT`    | `BR_COND`   | `BLT rs1, rs2, label` | taken iff `rs1 < rs2` (signed)           |
//! | `BGE`    | `BR_COND`   | `BGE rs1, rs2, label` | taken iff `rs1 >= rs2` (signed)          |
//! | `JMP`    | `BR_UNCOND` | `JMP label`           | `pc = label`                             |
//! | `CALL`   | `CALL`      | `CALL label`          | push `pc + 1`; `pc = label`              |
//! | `RET`    | `RET`       | `RET`                 | `pc = pop()`                             |
//! | `HALT`   | `HALT`      | `HALT`                | stop                                    |
//!
//! All arithmetic wraps. Memory addresses must be non-negative.

mod asm;
pub mod gen;
mod interp;
mod trace;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use asm::{parse_program, print_program, ParseError};
pub use gen::{gen_workload, random_program, GenError, WorkloadKind, WorkloadParams};
pub use interp::{run_trace, step, ArchState, ExecError, MemPort, Oracle, TraceError};
pub(crate) use interp::execute;
pub use trace::{read_trace_jsonl, write_trace_jsonl};

/// Number of architectural registers.
pub const NUM_REGS: usize = 64;

/// Register id in `0..64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Reg(pub u8);

impl Reg {
    pub const ZERO: Reg = Reg(0);

    pub fn new(id: u8) -> Option<Reg> {
        ((id as usize) < NUM_REGS).then_some(Reg(id))
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Instruction class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Opcode {
    Alui,
    Alu,
    Mul,
    Load,
    Store,
    BrCond,
    BrUncond,
    Call,
    Ret,
    Halt,
}

impl Opcode {
    /// Instructions that redirect or end control flow.
    pub fn is_control(self) -> bool {
        matches!(
            self,
            Opcode::BrCond | Opcode::BrUncond | Opcode::Call | Opcode::Ret | Opcode::Halt
        )
    }

    pub fn is_mem(self) -> bool {
        matches!(self, Opcode::Load | Opcode::Store)
    }

    /// Register-to-register computation (the class whose validation may be skipped).
    pub fn is_arith(self) -> bool {
        matches!(self, Opcode::Alui | Opcode::Alu | Opcode::Mul)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Opcode::Alui => "ALUI",
            Opcode::Alu => "ALU",
            Opcode::Mul => "MUL",
            Opcode::Load => "LOAD",
            Opcode::Store => "STORE",
            Opcode::BrCond => "BR_COND",
            Opcode::BrUncond => "BR_UNCOND",
            Opcode::Call => "CALL",
            Opcode::Ret => "RET",
            Opcode::Halt => "HALT",
        };
        f.write_str(s)
    }
}

/// Concrete operation (assembly mnemonic).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Addi,
    Andi,
    Ori,
    Xori,
    Slli,
    Srli,
    Slti,
    Add,
    Sub,
    And,
    Or,
    Xor,
    Sll,
    Srl,
    Slt,
    Mul,
    Ld,
    St,
    Beq,
    Bne,
    Blt,
    Bge,
    Jmp,
    Call,
    Ret,
    Halt,
}

impl Op {
    pub const ALL: [Op; 26] = [
        Op::Addi,
        Op::Andi,
        Op::Ori,
        Op::Xori,
        Op::Slli,
        Op::Srli,
        Op::Slti,
        Op::Add,
        Op::Sub,
        Op::And,
        Op::Or,
        Op::Xor,
        Op::Sll,
        Op::Srl,
        Op::Slt,
        Op::Mul,
        Op::Ld,
        Op::St,
        Op::Beq,
        Op::Bne,
        Op::Blt,
        Op::Bge,
        Op::Jmp,
        Op::Call,
        Op::Ret,
        Op::Halt,
    ];

    pub fn opcode(self) -> Opcode {
        use Op::*;
        match self {
            Addi | Andi | Ori | Xori | Slli | Srli | Slti => Opcode::Alui,
            Add | Sub | And | Or | Xor | Sll | Srl | Slt => Opcode::Alu,
            Mul => Opcode::Mul,
            Ld => Opcode::Load,
            St => Opcode::Store,
            Beq | Bne | Blt | Bge => Opcode::BrCond,
            Jmp => Opcode::BrUncond,
            Call => Opcode::Call,
            Ret => Opcode::Ret,
            Halt => Opcode::Halt,
        }
    }

    pub fn mnemonic(self) -> &'static str {
        use Op::*;
        match self {
            Addi => "ADDI",
            Andi => "ANDI",
            Ori => "ORI",
            Xori => "XORI",
            Slli => "SLLI",
            Srli => "SRLI",
            Slti => "SLTI",
            Add => "ADD",
            Sub => "SUB",
            And => "AND",
            Or => "OR",
            Xor => "XOR",
            Sll => "SLL",
            Srl => "SRL",
            Slt => "SLT",
            Mul => "MUL",
            Ld => "LD",
            St => "ST",
            Beq => "BEQ",
            Bne => "BNE",
            Blt => "BLT",
            Bge => "BGE",
            Jmp => "JMP",
            Call => "CALL",
            Ret => "RET",
            Halt => "HALT",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Op> {
        Op::ALL
            .iter()
            .copied()
            .find(|op| op.mnemonic().eq_ignore_ascii_case(s))
    }

    /// Two-operand computation shared by the ALU, ALUI and MUL classes.
    #[inline]
    pub fn eval(self, a: i64, b: i64) -> i64 {
        use Op::*;
        match self {
            Addi | Add => a.wrapping_add(b),
            Sub => a.wrapping_sub(b),
            Andi | And => a & b,
            Ori | Or => a | b,
            Xori | Xor => a ^ b,
            Slli | Sll => a.wrapping_shl((b & 63) as u32),
            Srli | Srl => ((a as u64) >> (b & 63)) as i64,
            Slti | Slt => (a < b) as i64,
            Mul => a.wrapping_mul(b),
            _ => unreachable!("eval on non-arithmetic op {self:?}"),
        }
    }

    /// Branch condition for the BR_COND class.
    #[inline]
    pub fn condition(self, a: i64, b: i64) -> bool {
        match self {
            Op::Beq => a == b,
            Op::Bne => a != b,
            Op::Blt => a < b,
            Op::Bge => a >= b,
            _ => unreachable!("condition on non-branch op {self:?}"),
        }
    }
}

/// One static instruction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticInstr {
    pub index: usize,
    pub op: Op,
    pub dst: Option<Reg>,
    /// Source registers in operand order. STORE lists `[value, base]`.
    pub srcs: Vec<Reg>,
    pub imm: Option<i64>,
    pub target: Option<usize>,
    pub mem_base: Option<Reg>,
    pub mem_offset: i64,
}

impl StaticInstr {
    fn bare(index: usize, op: Op) -> Self {
        StaticInstr {
            index,
            op,
            dst: None,
            srcs: Vec::new(),
            imm: None,
            target: None,
            mem_base: None,
            mem_offset: 0,
        }
    }

    pub fn alu(index: usize, op: Op, dst: Reg, a: Reg, b: Reg) -> Self {
        debug_assert!(matches!(op.opcode(), Opcode::Alu | Opcode::Mul));
        StaticInstr {
            dst: Some(dst),
            srcs: vec![a, b],
            ..Self::bare(index, op)
        }
    }

    pub fn alui(index: usize, op: Op, dst: Reg, a: Reg, imm: i64) -> Self {
        debug_assert_eq!(op.opcode(), Opcode::Alui);
        StaticInstr {
            dst: Some(dst),
            srcs: vec![a],
            imm: Some(imm),
            ..Self::bare(index, op)
        }
    }

    pub fn load(index: usize, dst: Reg, base: Reg, offset: i64) -> Self {
        StaticInstr {
            dst: Some(dst),
            srcs: vec![base],
            mem_base: Some(base),
            mem_offset: offset,
            ..Self::bare(index, Op::Ld)
        }
    }

    pub fn store(index: usize, value: Reg, base: Reg, offset: i64) -> Self {
        StaticInstr {
            srcs: vec![value, base],
            mem_base: Some(base),
            mem_offset: offset,
            ..Self::bare(index, Op::St)
        }
    }

    pub fn branch(index: usize, op: Op, a: Reg, b: Reg, target: usize) -> Self {
        debug_assert_eq!(op.opcode(), Opcode::BrCond);
        StaticInstr {
            srcs: vec![a, b],
            target: Some(target),
            ..Self::bare(index, op)
        }
    }

    pub fn jump(index: usize, op: Op, target: usize) -> Self {
        debug_assert!(matches!(op, Op::Jmp | Op::Call));
        StaticInstr {
            target: Some(target),
            ..Self::bare(index, op)
        }
    }

    pub fn ret(index: usize) -> Self {
        Self::bare(index, Op::Ret)
    }

    pub fn halt(index: usize) -> Self {
        Self::bare(index, Op::Halt)
    }

    #[inline]
    pub fn opcode(&self) -> Opcode {
        self.op.opcode()
    }

    /// Destination that actually changes architectural state (`r0` excluded).
    #[inline]
    pub fn written_reg(&self) -> Option<Reg> {
        self.dst.filter(|r| *r != Reg::ZERO)
    }

    /// Source registers that carry a dependence (`r0` excluded).
    pub fn read_regs(&self) -> impl Iterator<Item = Reg> + '_ {
        self.srcs.iter().copied().filter(|r| *r != Reg::ZERO)
    }

    /// Backward branch: a conditional branch whose target precedes it.
    pub fn is_backward_branch(&self) -> bool {
        self.opcode() == Opcode::BrCond && self.target.is_some_and(|t| t <= self.index)
    }
}

/// Program name and generator parameters.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramMeta {
    pub name: String,
    pub params: BTreeMap<String, String>,
}

/// A micro-ISA program: instructions, entry point and an initial data image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticProgram {
    pub instrs: Vec<StaticInstr>,
    pub entry: usize,
    pub meta: ProgramMeta,
    /// Initial memory contents; all other words read as zero.
    pub data: BTreeMap<i64, i64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProgramError {
    #[error("empty program")]
    Empty,
    #[error("instruction {index}: target {target} out of range")]
    TargetOutOfRange { index: usize, target: usize },
    #[error("instruction {index}: {what}")]
    Malformed { index: usize, what: &'static str },
    #[error("entry {0} out of range")]
    EntryOutOfRange(usize),
    #[error("program has no HALT")]
    NoHalt,
    #[error("program has {0} HALT instructions, expected exactly one")]
    MultipleHalts(usize),
    #[error("negative data address {0}")]
    NegativeDataAddress(i64),
}

impl StaticProgram {
    /// Builds a program and checks every structural invariant.
    pub fn new(
        instrs: Vec<StaticInstr>,
        entry: usize,
        meta: ProgramMeta,
        data: BTreeMap<i64, i64>,
    ) -> Result<Self, ProgramError> {
        let p = StaticProgram {
            instrs,
            entry,
            meta,
            data,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        if self.instrs.is_empty() {
            return Err(ProgramError::Empty);
        }
        if self.entry >= self.instrs.len() {
            return Err(ProgramError::EntryOutOfRange(self.entry));
        }
        let n = self.instrs.len();
        let mut halts = 0;
        for (i, ins) in self.instrs.iter().enumerate() {
            let bad = |what| ProgramError::Malformed { index: i, what };
            if ins.index != i {
                return Err(bad("index does not match position"));
            }
            if ins.srcs.len() > 2 {
                return Err(bad("more than two sources"));
            }
            match ins.opcode() {
                Opcode::BrCond | Opcode::BrUncond | Opcode::Call => match ins.target {
                    Some(t) if t < n => {}
                    Some(t) => return Err(ProgramError::TargetOutOfRange { index: i, target: t }),
                    None => return Err(bad("control transfer without target")),
                },
                _ => {}
            }
            match ins.opcode() {
                Opcode::Alu | Opcode::Mul | Opcode::Alui if ins.dst.is_none() => {
                    return Err(bad("ALU op without destination"))
                }
                Opcode::Load | Opcode::Store if ins.mem_base.is_none() => {
                    return Err(bad("memory op without base register"))
                }
                Opcode::Halt => halts += 1,
                _ => {}
            }
        }
        match halts {
            0 => return Err(ProgramError::NoHalt),
            1 => {}
            k => return Err(ProgramError::MultipleHalts(k)),
        }
        if let Some((&a, _)) = self.data.iter().next() {
            if a < 0 {
                return Err(ProgramError::NegativeDataAddress(a));
            }
        }
        Ok(())
    }

    /// Stable content hash (hex SHA-256 over the canonical assembly listing).
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(print_program(self).as_bytes()))
    }
}

/// One dynamic instruction instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub pc: usize,
    pub opcode: Opcode,
    pub eff_addr: Option<i64>,
    /// Value written to the destination register, or the stored word for STORE.
    pub value: Option<i64>,
    pub taken: Option<bool>,
    /// Static target for BR_COND/JMP/CALL; return address for RET.
    pub target_pc: Option<usize>,
}

impl TraceEvent {
    /// Program counter of the next dynamic instruction.
    pub fn next_pc(&self) -> usize {
        match (self.opcode, self.taken, self.target_pc) {
            (Opcode::BrCond, Some(false), _) => self.pc + 1,
            (_, _, Some(t)) => t,
            _ => self.pc + 1,
        }
    }
}
