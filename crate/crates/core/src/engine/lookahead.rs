//! The look-ahead thread: runs the skeleton on private state and feeds the
//! main thread through the BOQ and FQ.

use std::collections::{HashMap, VecDeque};

use fixedbitset::FixedBitSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::parts::{exec_latency, Btb, Gate, Gshare, IssueSlots};
use super::queues::{Attach, Channel, FootnoteKind};
use super::{CoreParams, Injection, LookaheadStats};
use crate::memsys::{AccessKind, HitLevel, MemSystem, Mode};
use crate::skeleton::SkeletonMask;
use crate::uisa::{execute, ExecError, MemPort, Opcode, StaticProgram, NUM_REGS};
use crate::vreuse::SlowInstructionFilter;

/// Private stores over a read-only view of the main thread's memory.
struct Overlay<'a> {
    own: &'a mut HashMap<i64, i64>,
    base: &'a HashMap<i64, i64>,
}

impl MemPort for Overlay<'_> {
    fn load(&mut self, addr: i64) -> i64 {
        self.own
            .get(&addr)
            .or_else(|| self.base.get(&addr))
            .copied()
            .unwrap_or(0)
    }

    fn store(&mut self, addr: i64, value: i64) {
        self.own.insert(addr, value);
    }
}

#[derive(Clone, Debug)]
struct Uop {
    seq: u64,
    pc: usize,
    op: Opcode,
    eff_addr: Option<i64>,
    value: Option<i64>,
    taken: Option<bool>,
    /// Dynamic (full-program) instructions since the preceding BR_COND.
    offset: u32,
    fetched_at: u64,
    complete: u64,
    l1_miss: bool,
    btb_miss: bool,
    mispredicted: bool,
}

/// What the look-ahead thread needs from the main thread each cycle.
pub(crate) struct LtInputs<'a> {
    pub mt_memory: &'a HashMap<i64, i64>,
    pub sif: Option<&'a SlowInstructionFilter>,
    pub release_at_dequeue: bool,
}

pub(crate) struct LookAhead<'p> {
    program: &'p StaticProgram,
    p: CoreParams,
    bits: FixedBitSet,
    converted: HashMap<usize, bool>,

    regs: [i64; NUM_REGS],
    call_stack: Vec<usize>,
    overlay: HashMap<i64, i64>,
    pc: usize,
    halted: bool,
    dead: bool,
    since_branch: u32,
    seq: u64,

    buffer: VecDeque<Uop>,
    rob: VecDeque<Uop>,
    reg_ready: [u64; NUM_REGS],
    issue: IssueSlots,
    gate: Gate,
    inflight_branches: usize,
    predictor: Gshare,
    btb: Btb,
    injection: Option<(ChaCha8Rng, f64)>,

    pub last_commit: u64,
    /// Value footnotes queued for the main thread.
    pub value_footnotes: u64,
    pub stats: LookaheadStats,
}

impl<'p> LookAhead<'p> {
    pub fn new(
        program: &'p StaticProgram,
        p: &CoreParams,
        mask: &SkeletonMask,
        injection: Option<&Injection>,
    ) -> Self {
        let mut lt = LookAhead {
            program,
            p: p.clone(),
            bits: FixedBitSet::new(),
            converted: HashMap::new(),
            regs: [0; NUM_REGS],
            call_stack: Vec::new(),
            overlay: HashMap::new(),
            pc: program.entry,
            halted: false,
            dead: false,
            since_branch: 0,
            seq: 0,
            buffer: VecDeque::new(),
            rob: VecDeque::new(),
            reg_ready: [0; NUM_REGS],
            issue: IssueSlots::new(p.issue_width),
            gate: Gate::Open,
            inflight_branches: 0,
            predictor: Gshare::new(p.predictor_bits),
            btb: Btb::default(),
            injection: injection.map(|i| (ChaCha8Rng::seed_from_u64(i.seed), i.load_value_rate)),
            last_commit: 0,
            value_footnotes: 0,
            stats: LookaheadStats::default(),
        };
        lt.set_mask(mask);
        lt
    }

    fn set_mask(&mut self, mask: &SkeletonMask) {
        self.bits = mask.bits.clone();
        self.bits.grow(self.program.len());
        self.converted = mask.converted_branches.iter().copied().collect();
    }

    /// Nothing left to do until a reboot.
    pub fn idle(&self) -> bool {
        (self.halted || self.dead) && self.rob.is_empty() && self.buffer.is_empty()
    }

    /// Restarts from the main thread's architectural state, optionally with
    /// a different skeleton.
    pub fn reboot(
        &mut self,
        regs: &[i64; NUM_REGS],
        call_stack: &[usize],
        pc: Option<usize>,
        resume_at: u64,
        mask: Option<&SkeletonMask>,
    ) {
        if let Some(m) = mask {
            self.set_mask(m);
        }
        self.regs = *regs;
        self.call_stack = call_stack.to_vec();
        self.overlay.clear();
        self.halted = pc.is_none();
        self.dead = false;
        self.pc = pc.unwrap_or(0);
        self.since_branch = 0;
        self.buffer.clear();
        self.rob.clear();
        self.reg_ready = [0; NUM_REGS];
        self.inflight_branches = 0;
        self.gate = Gate::Until(resume_at);
        self.last_commit = resume_at;
        self.stats.reboots += 1;
    }

    pub fn cycle(&mut self, now: u64, chan: &mut Channel, mem: &mut MemSystem, inp: &LtInputs<'_>) {
        self.commit(now, chan, mem, inp);
        self.dispatch(now, mem);
        self.fetch(now, chan, inp.mt_memory);
    }

    fn commit(&mut self, now: u64, chan: &mut Channel, mem: &mut MemSystem, inp: &LtInputs<'_>) {
        for _ in 0..self.p.commit_width {
            let Some(u) = self.rob.front() else { break };
            if u.complete > now {
                break;
            }
            let ins = &self.program.instrs[u.pc];
            let mut notes: Vec<FootnoteKind> = Vec::with_capacity(3);
            if u.l1_miss {
                if let Some(addr) = u.eff_addr {
                    if inp.release_at_dequeue {
                        notes.push(FootnoteKind::PrefetchAddr { addr });
                    } else {
                        mem.access(addr, AccessKind::Prefetch, Mode::Mt, now);
                    }
                }
            }
            if let (Some(sif), Some(value), Some(_)) = (inp.sif, u.value, ins.written_reg()) {
                if u.op != Opcode::Store && sif.contains(u.pc) {
                    notes.push(FootnoteKind::ReuseValue {
                        value,
                        offset: u.offset,
                        pc: u.pc,
                    });
                }
            }
            if u.btb_miss {
                notes.push(FootnoteKind::BranchTarget { pc: u.pc });
            }
            if !notes.is_empty() && chan.fq_len() + notes.len() > chan.fq_capacity() {
                self.stats.fq_full_stall_cycles += 1;
                break;
            }
            let u = self.rob.pop_front().expect("non-empty");
            if u.op == Opcode::BrCond {
                chan.push_branch(u.taken == Some(true));
                self.inflight_branches -= 1;
            }
            for n in notes {
                let r = chan.attach(n);
                debug_assert_ne!(r, Attach::Full);
                if r == Attach::Queued && matches!(n, FootnoteKind::ReuseValue { .. }) {
                    self.value_footnotes += 1;
                }
            }
            self.stats.committed += 1;
            self.last_commit = now;
        }
    }

    fn dispatch(&mut self, now: u64, mem: &mut MemSystem) {
        for _ in 0..self.p.decode_width {
            if self.rob.len() >= self.p.window_size {
                break;
            }
            match self.buffer.front() {
                Some(u) if u.fetched_at < now => {}
                _ => break,
            }
            let mut u = self.buffer.pop_front().expect("non-empty");
            let ins = &self.program.instrs[u.pc];
            let src_ready = ins
                .read_regs()
                .map(|r| self.reg_ready[r.index()])
                .max()
                .unwrap_or(0);
            let t = self.issue.reserve((now + 1).max(src_ready));
            let lat = match (u.op, u.eff_addr) {
                (Opcode::Load, Some(addr)) => {
                    let r = mem.access(addr, AccessKind::Load, Mode::Lt, t);
                    u.l1_miss = r.hit_level != HitLevel::L1;
                    r.latency
                }
                (Opcode::Store, Some(addr)) => {
                    mem.access(addr, AccessKind::Store, Mode::Lt, t);
                    self.p.alu_latency
                }
                _ => exec_latency(u.op, self.p.alu_latency, self.p.mul_latency),
            };
            u.complete = t + lat;
            if let Some(d) = ins.written_reg() {
                self.reg_ready[d.index()] = u.complete;
            }
            if u.mispredicted && self.gate == Gate::Branch(u.seq) {
                self.gate = Gate::Until(u.complete + self.p.branch_mispredict_penalty);
            }
            self.rob.push_back(u);
        }
    }

    fn fetch(&mut self, now: u64, chan: &Channel, mt_memory: &HashMap<i64, i64>) {
        if self.halted || self.dead {
            return;
        }
        match self.gate {
            Gate::Branch(_) => return,
            Gate::Until(t) if now < t => return,
            _ => self.gate = Gate::Open,
        }
        let block = self.pc / self.p.fetch_block;
        let mut fetched = 0;
        while fetched < self.p.fetch_width
            && self.buffer.len() < self.p.decode_width
            && self.pc / self.p.fetch_block == block
        {
            let ins = &self.program.instrs[self.pc];
            let op = ins.opcode();
            if op == Opcode::BrCond && chan.boq_len() + self.inflight_branches >= chan.boq_capacity() {
                break;
            }
            self.since_branch = if op == Opcode::BrCond {
                0
            } else {
                self.since_branch.saturating_add(1)
            };
            if !self.bits.contains(self.pc) {
                self.stats.deleted += 1;
                self.pc += 1;
                if self.pc >= self.program.len() {
                    self.dead = true;
                    break;
                }
                continue;
            }
            let seq = self.seq;
            self.seq += 1;
            let mut u = Uop {
                seq,
                pc: self.pc,
                op,
                eff_addr: None,
                value: None,
                taken: None,
                offset: self.since_branch,
                fetched_at: now,
                complete: 0,
                l1_miss: false,
                btb_miss: false,
                mispredicted: false,
            };
            let next = if let Some(&dir) = self.converted.get(&self.pc) {
                u.taken = Some(dir);
                if dir {
                    ins.target.unwrap_or(self.pc + 1)
                } else {
                    self.pc + 1
                }
            } else {
                let mut port = Overlay {
                    own: &mut self.overlay,
                    base: mt_memory,
                };
                match execute(ins, &mut self.regs, &mut self.call_stack, &mut port, seq) {
                    Ok(ev) => {
                        u.eff_addr = ev.eff_addr;
                        u.value = ev.value;
                        u.taken = ev.taken;
                        if let (Opcode::Load, Some((rng, rate)), Some(d)) =
                            (op, self.injection.as_mut(), ins.written_reg())
                        {
                            if rng.gen_bool(*rate) {
                                let flip = rng.gen_range(1..=i64::MAX);
                                self.regs[d.index()] ^= flip;
                                u.value = Some(self.regs[d.index()]);
                                self.stats.injected_faults += 1;
                            }
                        }
                        ev.next_pc()
                    }
                    Err(ExecError::NegativeAddress { .. }) => self.pc + 1,
                    Err(_) => {
                        self.dead = true;
                        break;
                    }
                }
            };
            if op == Opcode::BrCond {
                self.inflight_branches += 1;
                if !self.converted.contains_key(&self.pc) {
                    let taken = u.taken == Some(true);
                    let pred = self.predictor.predict(self.pc);
                    self.predictor.update(self.pc, taken);
                    u.mispredicted = pred != taken;
                }
            }
            let redirect = next != self.pc + 1;
            if redirect && !u.mispredicted && op != Opcode::Ret && self.btb.insert(self.pc) {
                u.btb_miss = true;
                self.stats.btb_misses += 1;
                self.gate = Gate::Until(now + 1 + self.p.btb_miss_penalty);
            }
            let (mispredicted, btb_miss) = (u.mispredicted, u.btb_miss);
            self.buffer.push_back(u);
            fetched += 1;
            if op == Opcode::Halt {
                self.halted = true;
                break;
            }
            self.pc = next;
            if mispredicted {
                self.stats.mispredicts += 1;
                self.gate = Gate::Branch(seq);
                break;
            }
            if redirect || btb_miss || self.pc >= self.program.len() {
                if self.pc >= self.program.len() {
                    self.dead = true;
                }
                break;
            }
        }
    }
}
