//! Line-oriented assembly format.
//!
//! One instruction per line, `OPCODE dst, src1, src2|imm`. Labels are
//! `name:` (alone or before an instruction), comments start with `#`.
//! Memory operands are written `offset(rb)`. Branch targets are labels or
//! absolute instruction indices. Directives:
//!
//! * `.name TEXT` and `.param KEY VALUE` carry program metadata,
//! * `.entry LABEL|INDEX` sets the entry point (default 0),
//! * `.data ADDR VALUE` pre-seeds one memory word.
//!
//! Instruction indices are the ordinal of the instruction lines.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use super::{Op, Opcode, ProgramError, ProgramMeta, Reg, StaticInstr, StaticProgram, NUM_REGS};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("empty program")]
    Empty,
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: register id {id} out of range (0..{max})", max = NUM_REGS)]
    RegisterOutOfRange { line: usize, id: u64 },
    #[error("line {line}: dangling branch target `{label}`")]
    DanglingTarget { line: usize, label: String },
    #[error("line {line}: duplicate label `{label}`")]
    DuplicateLabel { line: usize, label: String },
    #[error(transparent)]
    Program(#[from] ProgramError),
}

fn syntax(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        msg: msg.into(),
    }
}

enum TargetRef {
    Label(String),
    Index(usize),
}

struct Pending {
    line: usize,
    instr: StaticInstr,
    target: Option<TargetRef>,
}

fn parse_reg(tok: &str, line: usize) -> Result<Reg, ParseError> {
    let t = tok.trim();
    let digits = t
        .strip_prefix('r')
        .or_else(|| t.strip_prefix('R'))
        .ok_or_else(|| syntax(line, format!("expected register, found `{t}`")))?;
    let id: u64 = digits
        .parse()
        .map_err(|_| syntax(line, format!("bad register `{t}`")))?;
    if id as usize >= NUM_REGS {
        return Err(ParseError::RegisterOutOfRange { line, id });
    }
    Ok(Reg(id as u8))
}

fn parse_int(tok: &str, line: usize) -> Result<i64, ParseError> {
    let t = tok.trim();
    let (neg, body) = match t.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let v = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i128::from_str_radix(hex, 16)
    } else {
        body.parse::<i128>()
    }
    .map_err(|_| syntax(line, format!("bad integer `{t}`")))?;
    let v = if neg { -v } else { v };
    i64::try_from(v).map_err(|_| syntax(line, format!("integer `{t}` out of range")))
}

/// `off(rb)`
fn parse_mem(tok: &str, line: usize) -> Result<(i64, Reg), ParseError> {
    let t = tok.trim();
    let open = t
        .find('(')
        .ok_or_else(|| syntax(line, format!("expected `offset(reg)`, found `{t}`")))?;
    let close = t
        .strip_suffix(')')
        .ok_or_else(|| syntax(line, format!("expected `offset(reg)`, found `{t}`")))?;
    let off_txt = &t[..open];
    let off = if off_txt.trim().is_empty() {
        0
    } else {
        parse_int(off_txt, line)?
    };
    let base = parse_reg(&close[open + 1..], line)?;
    Ok((off, base))
}

fn parse_target(tok: &str) -> TargetRef {
    let t = tok.trim();
    match t.parse::<usize>() {
        Ok(i) => TargetRef::Index(i),
        Err(_) => TargetRef::Label(t.to_string()),
    }
}

fn is_label(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_instr(index: usize, text: &str, line: usize) -> Result<Pending, ParseError> {
    let (mn, rest) = match text.find(char::is_whitespace) {
        Some(p) => (&text[..p], text[p..].trim()),
        None => (text, ""),
    };
    let op = Op::from_mnemonic(mn).ok_or_else(|| syntax(line, format!("unknown opcode `{mn}`")))?;
    let args: Vec<&str> = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(',').map(str::trim).collect()
    };
    let want = |n: usize| -> Result<(), ParseError> {
        if args.len() == n {
            Ok(())
        } else {
            Err(syntax(
                line,
                format!("{} expects {n} operands, found {}", op.mnemonic(), args.len()),
            ))
        }
    };
    let mut target = None;
    let instr = match op.opcode() {
        Opcode::Alui => {
            want(3)?;
            StaticInstr::alui(
                index,
                op,
                parse_reg(args[0], line)?,
                parse_reg(args[1], line)?,
                parse_int(args[2], line)?,
            )
        }
        Opcode::Alu | Opcode::Mul => {
            want(3)?;
            StaticInstr::alu(
                index,
                op,
                parse_reg(args[0], line)?,
                parse_reg(args[1], line)?,
                parse_reg(args[2], line)?,
            )
        }
        Opcode::Load => {
            want(2)?;
            let (off, base) = parse_mem(args[1], line)?;
            StaticInstr::load(index, parse_reg(args[0], line)?, base, off)
        }
        Opcode::Store => {
            want(2)?;
            let (off, base) = parse_mem(args[1], line)?;
            StaticInstr::store(index, parse_reg(args[0], line)?, base, off)
        }
        Opcode::BrCond => {
            want(3)?;
            target = Some(parse_target(args[2]));
            StaticInstr::branch(
                index,
                op,
                parse_reg(args[0], line)?,
                parse_reg(args[1], line)?,
                usize::MAX,
            )
        }
        Opcode::BrUncond | Opcode::Call => {
            want(1)?;
            target = Some(parse_target(args[0]));
            StaticInstr::jump(index, op, usize::MAX)
        }
        Opcode::Ret => {
            want(0)?;
            StaticInstr::ret(index)
        }
        Opcode::Halt => {
            want(0)?;
            StaticInstr::halt(index)
        }
    };
    Ok(Pending {
        line,
        instr,
        target,
    })
}

/// Parses an assembly listing into a validated program.
pub fn parse_program(text: &str) -> Result<StaticProgram, ParseError> {
    let mut pending: Vec<Pending> = Vec::new();
    let mut labels: HashMap<String, usize> = HashMap::new();
    let mut meta = ProgramMeta::default();
    let mut data = BTreeMap::new();
    let mut entry: Option<(usize, TargetRef)> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let mut body = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if body.is_empty() {
            continue;
        }
        if let Some(directive) = body.strip_prefix('.') {
            let (name, rest) = match directive.find(char::is_whitespace) {
                Some(p) => (&directive[..p], directive[p..].trim()),
                None => (directive, ""),
            };
            match name {
                "name" => meta.name = rest.to_string(),
                "param" => {
                    let (k, v) = match rest.find(char::is_whitespace) {
                        Some(p) => (&rest[..p], rest[p..].trim()),
                        None => (rest, ""),
                    };
                    if k.is_empty() {
                        return Err(syntax(line, ".param needs a key"));
                    }
                    meta.params.insert(k.to_string(), v.to_string());
                }
                "entry" => entry = Some((line, parse_target(rest))),
                "data" => {
                    let mut it = rest.split_whitespace();
                    let (Some(a), Some(v), None) = (it.next(), it.next(), it.next()) else {
                        return Err(syntax(line, ".data expects ADDR VALUE"));
                    };
                    let addr = parse_int(a, line)?;
                    if addr < 0 {
                        return Err(syntax(line, format!("negative data address {addr}")));
                    }
                    data.insert(addr, parse_int(v, line)?);
                }
                other => return Err(syntax(line, format!("unknown directive `.{other}`"))),
            }
            continue;
        }
        while let Some(colon) = body.find(':') {
            let label = body[..colon].trim();
            if !is_label(label) {
                return Err(syntax(line, format!("bad label `{label}`")));
            }
            if labels.insert(label.to_string(), pending.len()).is_some() {
                return Err(ParseError::DuplicateLabel {
                    line,
                    label: label.to_string(),
                });
            }
            body = body[colon + 1..].trim();
        }
        if body.is_empty() {
            continue;
        }
        pending.push(parse_instr(pending.len(), body, line)?);
    }

    if pending.is_empty() {
        return Err(ParseError::Empty);
    }
    let n = pending.len();
    let resolve = |t: &TargetRef, line: usize| -> Result<usize, ParseError> {
        match t {
            TargetRef::Index(i) if *i < n => Ok(*i),
            TargetRef::Index(i) => Err(ParseError::DanglingTarget {
                line,
                label: i.to_string(),
            }),
            TargetRef::Label(l) => match labels.get(l) {
                Some(&i) if i < n => Ok(i),
                _ => Err(ParseError::DanglingTarget {
                    line,
                    label: l.clone(),
                }),
            },
        }
    };
    let mut instrs = Vec::with_capacity(n);
    for p in pending {
        let mut ins = p.instr;
        if let Some(t) = &p.target {
            ins.target = Some(resolve(t, p.line)?);
        }
        instrs.push(ins);
    }
    let entry = match entry {
        Some((line, t)) => resolve(&t, line)?,
        None => 0,
    };
    Ok(StaticProgram::new(instrs, entry, meta, data)?)
}

/// Canonical listing; `parse_program(&print_program(p)) == p`.
pub fn print_program(p: &StaticProgram) -> String {
    let mut out = String::new();
    if !p.meta.name.is_empty() {
        let _ = writeln!(out, ".name {}", p.meta.name);
    }
    for (k, v) in &p.meta.params {
        let _ = writeln!(out, ".param {k} {v}");
    }
    if p.entry != 0 {
        let _ = writeln!(out, ".entry {}", p.entry);
    }
    for (a, v) in &p.data {
        let _ = writeln!(out, ".data {a} {v}");
    }
    let mut is_target = vec![false; p.instrs.len()];
    for ins in &p.instrs {
        if let Some(t) = ins.target {
            if t < is_target.len() {
                is_target[t] = true;
            }
        }
    }
    for ins in &p.instrs {
        if is_target[ins.index] {
            let _ = writeln!(out, "L{}:", ins.index);
        }
        let m = ins.op.mnemonic();
        let reg = |r: Option<Reg>| r.map(|r| r.to_string()).unwrap_or_default();
        let _ = match ins.opcode() {
            Opcode::Alui => writeln!(
                out,
                "    {m} {}, {}, {}",
                reg(ins.dst),
                ins.srcs[0],
                ins.imm.unwrap_or(0)
            ),
            Opcode::Alu | Opcode::Mul => writeln!(
                out,
                "    {m} {}, {}, {}",
                reg(ins.dst),
                ins.srcs[0],
                ins.srcs[1]
            ),
            Opcode::Load => writeln!(
                out,
                "    {m} {}, {}({})",
                reg(ins.dst),
                ins.mem_offset,
                reg(ins.mem_base)
            ),
            Opcode::Store => writeln!(
                out,
                "    {m} {}, {}({})",
                ins.srcs[0],
                ins.mem_offset,
                reg(ins.mem_base)
            ),
            Opcode::BrCond => writeln!(
                out,
                "    {m} {}, {}, L{}",
                ins.srcs[0],
                ins.srcs[1],
                ins.target.unwrap_or(0)
            ),
            Opcode::BrUncond | Opcode::Call => {
                writeln!(out, "    {m} L{}", ins.target.unwrap_or(0))
            }
            Opcode::Ret | Opcode::Halt => writeln!(out, "    {m}"),
        };
    }
    out
}
