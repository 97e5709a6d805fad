//! Synthetic workload generators.
//!
//! Every generator is a pure function of its parameters and seed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Op, ProgramMeta, Reg, StaticInstr, StaticProgram};

/// Base address of generated data structures.
pub const DATA_BASE: i64 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    StridedLoop,
    PointerChase,
    Branchy,
    MixedPhases,
}

/// Generator parameters, tagged by kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadParams {
    /// `for i in 0..iters { acc += a[base + i*stride] }`
    StridedLoop { stride: i64, iters: u64 },
    /// Linked-list walk over `len` nodes in shuffled line-sized slots, with
    /// `work` ALU instructions per node that consume the node pointer.
    PointerChase {
        len: u64,
        #[serde(default = "default_chase_work")]
        work: u32,
    },
    /// Array walk with one data-dependent branch per element, taken with
    /// probability `taken_prob`.
    Branchy {
        iters: u64,
        #[serde(default = "default_taken_prob")]
        taken_prob: f64,
    },
    /// An outer loop repeating a branchy phase and a strided phase.
    MixedPhases {
        reps: u64,
        phase_iters: u64,
    },
}

fn default_chase_work() -> u32 {
    8
}

fn default_taken_prob() -> f64 {
    0.5
}

impl WorkloadParams {
    pub fn kind(&self) -> WorkloadKind {
        match self {
            WorkloadParams::StridedLoop { .. } => WorkloadKind::StridedLoop,
            WorkloadParams::PointerChase { .. } => WorkloadKind::PointerChase,
            WorkloadParams::Branchy { .. } => WorkloadKind::Branchy,
            WorkloadParams::MixedPhases { .. } => WorkloadKind::MixedPhases,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("invalid workload parameter: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> GenError {
    GenError::Invalid(msg.into())
}

/// Incremental program builder with forward-label patching.
struct Builder {
    instrs: Vec<StaticInstr>,
    data: BTreeMap<i64, i64>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            instrs: Vec::new(),
            data: BTreeMap::new(),
        }
    }

    fn here(&self) -> usize {
        self.instrs.len()
    }

    fn alui(&mut self, op: Op, d: u8, a: u8, imm: i64) {
        let i = self.here();
        self.instrs.push(StaticInstr::alui(i, op, Reg(d), Reg(a), imm));
    }

    fn alu(&mut self, op: Op, d: u8, a: u8, b: u8) {
        let i = self.here();
        self.instrs.push(StaticInstr::alu(i, op, Reg(d), Reg(a), Reg(b)));
    }

    fn li(&mut self, d: u8, v: i64) {
        self.alui(Op::Addi, d, 0, v);
    }

    fn ld(&mut self, d: u8, base: u8, off: i64) {
        let i = self.here();
        self.instrs.push(StaticInstr::load(i, Reg(d), Reg(base), off));
    }

    fn st(&mut self, v: u8, base: u8, off: i64) {
        let i = self.here();
        self.instrs.push(StaticInstr::store(i, Reg(v), Reg(base), off));
    }

    /// Emits a branch; returns its index for later patching when `target` is unknown.
    fn br(&mut self, op: Op, a: u8, b: u8, target: usize) -> usize {
        let i = self.here();
        self.instrs
            .push(StaticInstr::branch(i, op, Reg(a), Reg(b), target));
        i
    }

    fn jump(&mut self, op: Op, target: usize) -> usize {
        let i = self.here();
        self.instrs.push(StaticInstr::jump(i, op, target));
        i
    }

    fn patch(&mut self, at: usize, target: usize) {
        self.instrs[at].target = Some(target);
    }

    fn ret(&mut self) {
        let i = self.here();
        self.instrs.push(StaticInstr::ret(i));
    }

    fn halt(&mut self) {
        let i = self.here();
        self.instrs.push(StaticInstr::halt(i));
    }

    fn finish(self, name: &str, params: &[(&str, String)]) -> StaticProgram {
        let meta = ProgramMeta {
            name: name.to_string(),
            params: params
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        };
        StaticProgram::new(self.instrs, 0, meta, self.data)
            .expect("generator emitted an invalid program")
    }
}

/// Emits a strided loop over `iters` elements starting at `base`, using
/// `ptr`, `cnt`, `acc`, `tmp` registers. Loop body: LD, ADD, ADDI, ADDI, BNE.
fn emit_strided(b: &mut Builder, base: i64, stride: i64, iters: u64, regs: [u8; 4]) {
    let [ptr, cnt, acc, tmp] = regs;
    b.li(ptr, base);
    b.li(cnt, iters as i64);
    let top = b.here();
    b.ld(tmp, ptr, 0);
    b.alu(Op::Add, acc, acc, tmp);
    b.alui(Op::Addi, ptr, ptr, stride);
    b.alui(Op::Addi, cnt, cnt, -1);
    b.br(Op::Bne, cnt, 0, top);
}

/// Emits an array walk with one data-dependent branch per element.
fn emit_branchy(b: &mut Builder, base: i64, iters: u64, threshold: i64, regs: [u8; 6]) {
    let [ptr, cnt, val, flag, acc, mix] = regs;
    b.li(ptr, base);
    b.li(cnt, iters as i64);
    let top = b.here();
    b.ld(val, ptr, 0);
    b.alui(Op::Andi, flag, val, 1023);
    b.alui(Op::Slti, flag, flag, threshold);
    let skip = b.br(Op::Beq, flag, 0, 0);
    b.alui(Op::Addi, acc, acc, 1);
    b.alu(Op::Xor, mix, mix, val);
    let join = b.here();
    b.patch(skip, join);
    b.alui(Op::Addi, ptr, ptr, 8);
    b.alui(Op::Addi, cnt, cnt, -1);
    b.br(Op::Bne, cnt, 0, top);
}

/// Generates a workload program.
pub fn gen_workload(params: &WorkloadParams, seed: u64) -> Result<StaticProgram, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::new();
    match *params {
        WorkloadParams::StridedLoop { stride, iters } => {
            if stride == 0 {
                return Err(invalid("stride must be non-zero"));
            }
            if iters == 0 || iters > 1 << 32 {
                return Err(invalid("iters must be in 1..=2^32"));
            }
            let span = stride
                .checked_mul(iters as i64)
                .ok_or_else(|| invalid("stride * iters overflows"))?;
            let base = if stride < 0 { DATA_BASE - span } else { DATA_BASE };
            for i in 0..iters as i64 {
                b.data.insert(base + i * stride, rng.gen_range(0..1 << 16));
            }
            b.li(3, 0);
            emit_strided(&mut b, base, stride, iters, [1, 2, 3, 4]);
            b.halt();
            Ok(b.finish(
                "strided_loop",
                &[("stride", stride.to_string()), ("iters", iters.to_string())],
            ))
        }
        WorkloadParams::PointerChase { len, work } => {
            if len == 0 || len > 1 << 24 {
                return Err(invalid("len must be in 1..=2^24"));
            }
            let mut slots: Vec<i64> = (0..len as i64).collect();
            slots.shuffle(&mut rng);
            let addr = |k: usize| DATA_BASE + slots[k] * 64;
            for k in 0..len as usize {
                let next = if k + 1 < len as usize { addr(k + 1) } else { 0 };
                b.data.insert(addr(k), next);
            }
            b.li(1, addr(0));
            for r in 5..=8 {
                b.li(r, 0);
            }
            let top = b.here();
            b.ld(1, 1, 0);
            for j in 0..work {
                match j % 4 {
                    0 => b.alu(Op::Add, 5, 5, 1),
                    1 => b.alu(Op::Xor, 6, 6, 5),
                    2 => b.alui(Op::Addi, 7, 7, j as i64),
                    _ => b.alu(Op::Sub, 8, 8, 6),
                }
            }
            b.br(Op::Bne, 1, 0, top);
            b.halt();
            Ok(b.finish(
                "pointer_chase",
                &[("len", len.to_string()), ("work", work.to_string())],
            ))
        }
        WorkloadParams::Branchy { iters, taken_prob } => {
            if iters == 0 || iters > 1 << 32 {
                return Err(invalid("iters must be in 1..=2^32"));
            }
            if !(0.0..=1.0).contains(&taken_prob) {
                return Err(invalid("taken_prob must be in [0, 1]"));
            }
            for i in 0..iters as i64 {
                b.data.insert(DATA_BASE + 8 * i, rng.gen_range(0..1 << 20));
            }
            // The branch skips the body when (val & 1023) >= threshold.
            let threshold = ((1.0 - taken_prob) * 1024.0).round() as i64;
            emit_branchy(&mut b, DATA_BASE, iters, threshold, [1, 2, 3, 4, 5, 6]);
            b.halt();
            Ok(b.finish(
                "branchy",
                &[
                    ("iters", iters.to_string()),
                    ("taken_prob", taken_prob.to_string()),
                ],
            ))
        }
        WorkloadParams::MixedPhases { reps, phase_iters } => {
            if reps == 0 || phase_iters == 0 || phase_iters > 1 << 24 {
                return Err(invalid("reps and phase_iters must be positive"));
            }
            let branchy_base = DATA_BASE;
            let strided_base = DATA_BASE + 8 * phase_iters as i64 + 4096;
            for i in 0..phase_iters as i64 {
                b.data
                    .insert(branchy_base + 8 * i, rng.gen_range(0..1 << 20));
                b.data
                    .insert(strided_base + 64 * i, rng.gen_range(0..1 << 16));
            }
            b.li(30, reps as i64);
            let outer = b.here();
            emit_branchy(&mut b, branchy_base, phase_iters, 512, [1, 2, 3, 4, 5, 6]);
            emit_strided(&mut b, strided_base, 64, phase_iters, [10, 11, 12, 13]);
            b.alui(Op::Addi, 30, 30, -1);
            b.br(Op::Bne, 30, 0, outer);
            b.halt();
            Ok(b.finish(
                "mixed_phases",
                &[
                    ("reps", reps.to_string()),
                    ("phase_iters", phase_iters.to_string()),
                ],
            ))
        }
    }
}

/// Random terminating program: nested counted loops, data-dependent
/// forward branches, loads/stores into a 512-byte region and leaf calls,
/// all wrapped in an outer loop of `outer_iters` iterations.
///
/// `static_len` is a soft target for the number of body instructions.
pub fn random_program(seed: u64, static_len: usize, outer_iters: u64) -> StaticProgram {
    const PTR: u8 = 20;
    const OUTER: u8 = 21;
    const LOOP_CNT: [u8; 2] = [22, 23];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::new();
    let data_reg = |rng: &mut ChaCha8Rng| rng.gen_range(1..16u8);

    for i in 0..64 {
        b.data.insert(DATA_BASE + 8 * i, rng.gen_range(-1000..1000));
    }
    b.li(PTR, DATA_BASE);
    for r in 1..9 {
        b.li(r, rng.gen_range(-50..50));
    }
    b.li(OUTER, outer_iters.max(1) as i64);
    let outer_top = b.here();

    fn simple(b: &mut Builder, rng: &mut ChaCha8Rng, data_reg: &dyn Fn(&mut ChaCha8Rng) -> u8) {
        let d = data_reg(rng);
        match rng.gen_range(0..10) {
            0..=3 => {
                let ops = [Op::Add, Op::Sub, Op::And, Op::Or, Op::Xor, Op::Slt, Op::Mul];
                let op = ops[rng.gen_range(0..ops.len())];
                let (a, c) = (data_reg(rng), data_reg(rng));
                b.alu(op, d, a, c);
            }
            4..=6 => {
                let ops = [Op::Addi, Op::Andi, Op::Ori, Op::Xori, Op::Slli, Op::Srli, Op::Slti];
                let op = ops[rng.gen_range(0..ops.len())];
                let a = data_reg(rng);
                b.alui(op, d, a, rng.gen_range(-16..16));
            }
            7 | 8 => b.ld(d, 20, 8 * rng.gen_range(0..64)),
            _ => b.st(d, 20, 8 * rng.gen_range(0..64)),
        }
    }

    let mut funcs: Vec<usize> = Vec::new();
    let mut call_sites: Vec<(usize, usize)> = Vec::new();
    let n_funcs = rng.gen_range(0..3);
    let body_start = b.here();
    let mut depth = 0usize;
    let mut loop_stack: Vec<usize> = Vec::new();
    while b.here() - body_start < static_len {
        match rng.gen_range(0..12) {
            0 if depth < 2 => {
                b.li(LOOP_CNT[depth], rng.gen_range(2..8));
                loop_stack.push(b.here());
                depth += 1;
            }
            1 if depth > 0 => {
                depth -= 1;
                let top = loop_stack.pop().unwrap();
                b.alui(Op::Addi, LOOP_CNT[depth], LOOP_CNT[depth], -1);
                b.br(Op::Bne, LOOP_CNT[depth], 0, top);
            }
            2 | 3 => {
                let ops = [Op::Beq, Op::Bne, Op::Blt, Op::Bge];
                let op = ops[rng.gen_range(0..4)];
                let (x, y) = (data_reg(&mut rng), data_reg(&mut rng));
                let br = b.br(op, x, y, 0);
                for _ in 0..rng.gen_range(1..4) {
                    simple(&mut b, &mut rng, &data_reg);
                }
                let join = b.here();
                b.patch(br, join);
            }
            4 if n_funcs > 0 => {
                let site = b.jump(Op::Call, 0);
                call_sites.push((site, rng.gen_range(0..n_funcs)));
            }
            _ => simple(&mut b, &mut rng, &data_reg),
        }
    }
    while let Some(top) = loop_stack.pop() {
        depth -= 1;
        b.alui(Op::Addi, LOOP_CNT[depth], LOOP_CNT[depth], -1);
        b.br(Op::Bne, LOOP_CNT[depth], 0, top);
    }
    b.alui(Op::Addi, OUTER, OUTER, -1);
    b.br(Op::Bne, OUTER, 0, outer_top);
    b.halt();
    for _ in 0..n_funcs {
        funcs.push(b.here());
        for _ in 0..rng.gen_range(1..6) {
            simple(&mut b, &mut rng, &data_reg);
        }
        b.ret();
    }
    for (site, f) in call_sites {
        b.patch(site, funcs[f]);
    }
    b.finish(
        "random",
        &[
            ("seed", seed.to_string()),
            ("static_len", static_len.to_string()),
            ("outer_iters", outer_iters.to_string()),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uisa::{run_trace, Opcode};

    #[test]
    fn strided_loop_addresses_step_by_stride() {
        let p = gen_workload(&WorkloadParams::StridedLoop { stride: 64, iters: 100 }, 1).unwrap();
        let t = run_trace(&p, 1_000_000).unwrap();
        // 3 prologue + 5 per iteration + HALT
        assert_eq!(t.len(), 3 + 500 + 1);
        let addrs: Vec<i64> = t
            .iter()
            .filter(|e| e.opcode == Opcode::Load)
            .map(|e| e.eff_addr.unwrap())
            .collect();
        assert_eq!(addrs.len(), 100);
        assert!(addrs.windows(2).all(|w| w[1] - w[0] == 64));
    }

    #[test]
    fn pointer_chase_forms_a_dependence_chain() {
        let p = gen_workload(&WorkloadParams::PointerChase { len: 1000, work: 8 }, 7).unwrap();
        let t = run_trace(&p, 10_000_000).unwrap();
        let loads: Vec<_> = t.iter().filter(|e| e.opcode == Opcode::Load).collect();
        assert_eq!(loads.len(), 1000);
        for w in loads.windows(2) {
            assert_eq!(w[1].eff_addr, w[0].value);
        }
        assert_eq!(loads.last().unwrap().value, Some(0));
    }

    #[test]
    fn generators_are_deterministic_per_seed() {
        let params = [
            WorkloadParams::StridedLoop { stride: -8, iters: 50 },
            WorkloadParams::PointerChase { len: 64, work: 3 },
            WorkloadParams::Branchy { iters: 100, taken_prob: 0.3 },
            WorkloadParams::MixedPhases { reps: 2, phase_iters: 10 },
        ];
        for p in &params {
            assert_eq!(gen_workload(p, 9).unwrap(), gen_workload(p, 9).unwrap());
            assert_eq!(gen_workload(p, 9).unwrap().meta.name, {
                let s = serde_json::to_value(p.kind()).unwrap();
                s.as_str().unwrap().to_string()
            });
        }
        assert_ne!(
            gen_workload(&params[1], 1).unwrap(),
            gen_workload(&params[1], 2).unwrap()
        );
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(gen_workload(&WorkloadParams::StridedLoop { stride: 0, iters: 5 }, 0).is_err());
        assert!(gen_workload(&WorkloadParams::PointerChase { len: 0, work: 1 }, 0).is_err());
        assert!(gen_workload(
            &WorkloadParams::Branchy {
                iters: 5,
                taken_prob: 1.5
            },
            0
        )
        .is_err());
    }

    #[test]
    fn branchy_branch_rate_tracks_probability() {
        let p = gen_workload(
            &WorkloadParams::Branchy {
                iters: 4000,
                taken_prob: 0.25,
            },
            3,
        )
        .unwrap();
        let t = run_trace(&p, 1_000_000).unwrap();
        let beq: Vec<_> = t
            .iter()
            .filter(|e| e.opcode == Opcode::BrCond && p.instrs[e.pc].op == Op::Beq)
            .collect();
        let taken = beq.iter().filter(|e| e.taken == Some(true)).count() as f64;
        let rate = taken / beq.len() as f64;
        assert!((rate - 0.25).abs() < 0.03, "{rate}");
    }

    #[test]
    fn random_programs_terminate() {
        for seed in 0..30 {
            let p = random_program(seed, 60, 5);
            let t = run_trace(&p, 5_000_000).unwrap();
            assert_eq!(t.last().unwrap().opcode, Opcode::Halt, "seed {seed}");
        }
    }
}
