//! The main thread (and, without a look-ahead partner, the baseline core).

use std::collections::{HashMap, VecDeque};

use fixedbitset::FixedBitSet;

use super::parts::{bump, exec_latency, Btb, Gate, Gshare, IssueSlots};
use super::queues::{Channel, FootnoteKind};
use super::{BranchStats, CoreParams, EngineError, FetchStats, IdealMode};
use crate::memsys::{AccessKind, HitLevel, MemSystem, Mode};
use crate::recycle::{LoopEvent, LoopTracker, RecycleController};
use crate::skeleton::ProfileBuilder;
use crate::t1::{LatencyEstimator, T1};
use crate::uisa::{execute, Opcode, Oracle, StaticProgram, TraceEvent, NUM_REGS};
use crate::vreuse::{Disposition, ReuseStats, Scoreboard, SifTrainer, ValuePrediction, Vpt, VptLookup};

/// What the main thread asks the driver to do after its commit stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Request {
    /// A BOQ-predicted branch resolved the other way and just committed.
    Reboot,
    /// Switch the look-ahead thread to another skeleton version.
    Swap(usize),
}

/// Last conditional branch dispatched: its BOQ tag and sequence number.
#[derive(Clone, Copy, Debug, Default)]
struct Ctx {
    tag: Option<u64>,
    br_seq: Option<u64>,
}

#[derive(Clone, Debug)]
struct Fetched {
    seq: u64,
    fetched_at: u64,
    mispredicted: bool,
    tag: Option<u64>,
}

#[derive(Clone, Copy, Debug)]
enum CallUndo {
    None,
    Pushed,
    Popped(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Vp {
    None,
    Validated { mismatch: bool },
    Skipped(i64),
}

#[derive(Clone, Debug)]
struct RobEntry {
    seq: u64,
    pc: usize,
    dispatched: u64,
    complete: u64,
    /// Values computed by this thread; `None` if execution faulted.
    computed: Option<TraceEvent>,
    undo_reg: Option<(usize, i64, u64)>,
    undo_mem: Option<(i64, Option<i64>)>,
    undo_call: CallUndo,
    ctx_after: Ctx,
    vp: Vp,
    mispredicted: bool,
    hit: Option<HitLevel>,
}

/// Look-ahead hooks attached to the main thread.
pub(crate) struct Assist {
    pub s_bits: FixedBitSet,
    pub t1: Option<(T1, LatencyEstimator)>,
    pub reuse: Option<ReuseParts>,
    pub recycle: Option<RecycleController>,
    pub release_at_dequeue: bool,
}

pub(crate) struct ReuseParts {
    pub sif: SifTrainer,
    pub vpt: Vpt,
    pub scoreboard: Scoreboard,
    pub stats: ReuseStats,
}

pub(crate) struct MainCore<'p> {
    program: &'p StaticProgram,
    p: CoreParams,
    ideal: IdealMode,
    limit: u64,
    oracle: Oracle<'p>,
    events: VecDeque<TraceEvent>,
    events_base: u64,

    fetch_seq: u64,
    gate: Gate,
    buffer: VecDeque<Fetched>,
    buffer_cap: usize,
    halt_fetched: bool,
    predictor: Gshare,
    btb: Btb,
    /// BOQ entries consumed by fetched but uncommitted branches, reused
    /// when a replay refetches them.
    consumed: VecDeque<(u64, u64, bool)>,
    pub draining: bool,
    pub boq_waiting: bool,
    /// Branch directions come from the BOQ: a wrong one holds fetch until
    /// the look-ahead thread has been rebooted.
    pub boq_driven: bool,
    resume_after_reboot: u64,

    pub regs: [i64; NUM_REGS],
    pub call_stack: Vec<usize>,
    pub memory: HashMap<i64, i64>,
    reg_ready: [u64; NUM_REGS],
    rob: VecDeque<RobEntry>,
    issue: IssueSlots,
    ctx: Ctx,

    pub assist: Option<Assist>,
    loops: LoopTracker,
    loop_events: Vec<LoopEvent>,
    requests: Vec<Request>,

    pub committed: u64,
    pub halted: bool,
    pub branches: BranchStats,
    pub fetch_stats: FetchStats,
    pub replays: u64,
    pub firewall_mismatches: u64,
    pub commits: Option<Vec<TraceEvent>>,
    pub profile: Option<ProfileBuilder>,
}

impl<'p> MainCore<'p> {
    pub fn new(
        program: &'p StaticProgram,
        p: &CoreParams,
        fetch_buffer: bool,
        ideal: IdealMode,
        limit: u64,
    ) -> Self {
        let buffer_cap = match ideal {
            IdealMode::Backend => usize::MAX,
            _ if fetch_buffer => p.fetch_buffer_capacity,
            _ => p.decode_width,
        };
        let occ_len = if buffer_cap == usize::MAX {
            p.fetch_width * 4 + 1
        } else {
            buffer_cap + 1
        };
        let issue_width = if ideal == IdealMode::Backend { 255 } else { p.issue_width };
        let oracle = Oracle::new(program);
        let memory = oracle.state().memory.clone();
        MainCore {
            program,
            p: p.clone(),
            ideal,
            limit,
            oracle,
            events: VecDeque::new(),
            events_base: 0,
            fetch_seq: 0,
            gate: Gate::Open,
            buffer: VecDeque::new(),
            buffer_cap,
            halt_fetched: false,
            predictor: Gshare::new(p.predictor_bits),
            btb: Btb::default(),
            consumed: VecDeque::new(),
            draining: false,
            boq_waiting: false,
            boq_driven: false,
            resume_after_reboot: 0,
            regs: [0; NUM_REGS],
            call_stack: Vec::new(),
            memory,
            reg_ready: [0; NUM_REGS],
            rob: VecDeque::new(),
            issue: IssueSlots::new(issue_width),
            ctx: Ctx::default(),
            assist: None,
            loops: LoopTracker::new(),
            loop_events: Vec::new(),
            requests: Vec::new(),
            committed: 0,
            halted: false,
            branches: BranchStats::default(),
            fetch_stats: FetchStats {
                occupancy: vec![0; occ_len],
                demand: vec![0; p.decode_width + 1],
                supply: vec![0; p.fetch_width + 1],
                ..Default::default()
            },
            replays: 0,
            firewall_mismatches: 0,
            commits: None,
            profile: None,
        }
    }

    /// Requests raised since the last call, oldest first.
    pub fn take_requests(&mut self) -> Vec<Request> {
        std::mem::take(&mut self.requests)
    }

    pub fn is_drained(&self) -> bool {
        self.rob.is_empty() && self.buffer.is_empty()
    }

    pub fn done(&self) -> bool {
        // A supply measurement ends when fetch runs out of work; the
        // backend would otherwise log idle fetch cycles while it drains.
        let supply_done = self.ideal == IdealMode::Backend && (self.halt_fetched || self.fetch_seq >= self.limit);
        self.halted || self.committed >= self.limit || supply_done
    }

    pub fn sample_occupancy(&mut self) {
        bump(&mut self.fetch_stats.occupancy, self.buffer.len());
    }

    fn event(&mut self, seq: u64) -> Result<Option<TraceEvent>, EngineError> {
        while self.events_base + self.events.len() as u64 <= seq {
            match self.oracle.next() {
                Some(Ok(e)) => self.events.push_back(e),
                Some(Err(e)) => return Err(e.into()),
                None => return Ok(None),
            }
        }
        Ok(Some(self.events[(seq - self.events_base) as usize].clone()))
    }

    /// Program counter the main thread fetches next, if the program has
    /// not ended.
    pub fn next_fetch_pc(&mut self) -> Result<Option<usize>, EngineError> {
        Ok(self.event(self.fetch_seq)?.map(|e| e.pc))
    }

    /// Clears look-ahead state that refers to the flushed queues.
    pub fn on_reboot(&mut self, now: u64) {
        if let Gate::Branch(_) = self.gate {
            self.gate = Gate::Until(self.resume_after_reboot.max(now + 1));
        }
        if let Some(r) = self.assist.as_mut().and_then(|a| a.reuse.as_mut()) {
            r.vpt.clear();
        }
        self.consumed.clear();
        self.boq_waiting = false;
        self.draining = false;
    }

    pub fn fetch(
        &mut self,
        now: u64,
        mut chan: Option<&mut Channel>,
        mem: &mut MemSystem,
    ) -> Result<(), EngineError> {
        self.boq_waiting = false;
        let fetched = self.fetch_inner(now, &mut chan, mem)?;
        bump(&mut self.fetch_stats.supply, fetched);
        if self.boq_waiting {
            self.fetch_stats.boq_empty_cycles += 1;
        }
        Ok(())
    }

    fn fetch_inner(
        &mut self,
        now: u64,
        chan: &mut Option<&mut Channel>,
        mem: &mut MemSystem,
    ) -> Result<usize, EngineError> {
        if self.draining || self.halt_fetched {
            return Ok(0);
        }
        match self.gate {
            Gate::Branch(_) => return Ok(0),
            Gate::Until(t) if now < t => return Ok(0),
            _ => self.gate = Gate::Open,
        }
        let ideal_fetch = self.ideal == IdealMode::Fetch;
        let width = if ideal_fetch { usize::MAX } else { self.p.fetch_width };
        let mut fetched = 0;
        let mut block = None;
        while fetched < width && self.buffer.len() < self.buffer_cap {
            let seq = self.fetch_seq;
            if self.ideal == IdealMode::Backend && seq >= self.limit {
                break;
            }
            let Some(ev) = self.event(seq)? else { break };
            let pc = ev.pc;
            if !ideal_fetch {
                let b = pc / self.p.fetch_block;
                if *block.get_or_insert(b) != b {
                    break;
                }
            }
            let op = ev.opcode;
            let mut f = Fetched {
                seq,
                fetched_at: now,
                mispredicted: false,
                tag: None,
            };
            let redirect = ev.next_pc() != pc + 1;
            if op == Opcode::BrCond {
                let taken = ev.taken == Some(true);
                let predicted = if ideal_fetch {
                    taken
                } else if let Some(c) = chan.as_deref_mut() {
                    match self.boq_prediction(seq, c, mem, now) {
                        Some((tag, dir)) => {
                            f.tag = Some(tag);
                            dir
                        }
                        None => {
                            self.boq_waiting = true;
                            break;
                        }
                    }
                } else {
                    let p = self.predictor.predict(pc);
                    self.predictor.update(pc, taken);
                    p
                };
                f.mispredicted = predicted != taken;
            }
            let mut btb_stall = false;
            if redirect && !ideal_fetch && !f.mispredicted && op != Opcode::Ret && self.btb.insert(pc) {
                self.branches.btb_misses += 1;
                btb_stall = true;
                self.gate = Gate::Until(now + 1 + self.p.btb_miss_penalty);
            }
            let mispredicted = f.mispredicted;
            self.buffer.push_back(f);
            self.fetch_seq += 1;
            fetched += 1;
            if op == Opcode::Halt {
                self.halt_fetched = true;
                break;
            }
            if mispredicted && !ideal_fetch {
                self.gate = Gate::Branch(seq);
                break;
            }
            if btb_stall || (redirect && !ideal_fetch) {
                break;
            }
        }
        Ok(fetched)
    }

    /// Direction for the conditional branch `seq` from the BOQ, reusing the
    /// entry a squashed copy already consumed. `None` if the BOQ is empty.
    fn boq_prediction(
        &mut self,
        seq: u64,
        chan: &mut Channel,
        mem: &mut MemSystem,
        now: u64,
    ) -> Option<(u64, bool)> {
        if let Some(&(_, tag, dir)) = self.consumed.iter().find(|c| c.0 == seq) {
            return Some((tag, dir));
        }
        let mut notes = Vec::new();
        let e = chan.pop_branch(&mut notes)?;
        self.consumed.push_back((seq, e.tag, e.taken));
        let release = self.assist.as_ref().is_none_or(|a| a.release_at_dequeue);
        for n in notes {
            match n.kind {
                FootnoteKind::PrefetchAddr { addr } => {
                    if release {
                        mem.access(addr, AccessKind::Prefetch, Mode::Mt, now);
                    }
                }
                FootnoteKind::BranchTarget { pc } => {
                    self.btb.insert(pc);
                }
                FootnoteKind::ReuseValue { value, offset, pc } => {
                    if let Some(r) = self.assist.as_mut().and_then(|a| a.reuse.as_mut()) {
                        if r.sif.sif.is_deleted(pc) {
                            continue;
                        }
                        let evicted = r.vpt.insert(ValuePrediction {
                            boq_tag: n.tag,
                            offset,
                            producer_pc: pc,
                            value,
                        });
                        r.stats.vpt_evictions += evicted as u64;
                    }
                }
            }
        }
        Some((e.tag, e.taken))
    }

    pub fn dispatch(&mut self, now: u64, mem: &mut MemSystem) {
        let backend = self.ideal == IdealMode::Backend;
        let width = if backend { usize::MAX } else { self.p.decode_width };
        let window = if backend { usize::MAX } else { self.p.window_size };
        let room = width.min(window - self.rob.len().min(window));
        let mut n = 0;
        while n < room {
            match self.buffer.front() {
                Some(f) if f.fetched_at < now => {}
                _ => break,
            }
            let f = self.buffer.pop_front().expect("non-empty");
            self.dispatch_one(f, now, mem);
            n += 1;
        }
        bump(&mut self.fetch_stats.demand, n);
        if !backend && n < room && self.buffer.is_empty() && !self.halt_fetched {
            self.fetch_stats.bubbles += (room - n) as u64;
        }
    }

    fn dispatch_one(&mut self, f: Fetched, now: u64, mem: &mut MemSystem) {
        let ev = self.events[(f.seq - self.events_base) as usize].clone();
        let ins = &self.program.instrs[ev.pc];
        let op = ins.opcode();
        let dest = ins.written_reg().map(|r| r.index());

        let mut prediction = None;
        let mut disp = Disposition::Normal;
        if let Some(r) = self.assist.as_mut().and_then(|a| a.reuse.as_mut()) {
            if let (Some(_), Some(tag), Some(br)) = (dest, self.ctx.tag, self.ctx.br_seq) {
                let offset = (f.seq - br) as u32;
                match r.vpt.take(tag, offset, ev.pc) {
                    VptLookup::Hit(v) => {
                        prediction = Some(v);
                        r.stats.predictions_used += 1;
                        r.stats.predictions_after_deletion += r.sif.sif.is_deleted(ev.pc) as u64;
                    }
                    VptLookup::Misaligned => r.stats.misaligned += 1,
                    VptLookup::Miss => {}
                }
            }
            disp = r.scoreboard.dispatch(ins, prediction.is_some());
        }

        let src_ready = ins
            .read_regs()
            .map(|r| self.reg_ready[r.index()])
            .max()
            .unwrap_or(0);
        let undo_reg = dest.map(|d| (d, self.regs[d], self.reg_ready[d]));
        let undo_mem = (op == Opcode::Store)
            .then(|| self.regs[ins.srcs[1].index()].wrapping_add(ins.mem_offset))
            .filter(|a| *a >= 0)
            .map(|a| (a, self.memory.get(&a).copied()));
        let top = self.call_stack.last().copied();
        let computed = execute(ins, &mut self.regs, &mut self.call_stack, &mut self.memory, f.seq).ok();
        let undo_call = match (op, &computed, top) {
            (Opcode::Call, Some(_), _) => CallUndo::Pushed,
            (Opcode::Ret, Some(_), Some(ra)) => CallUndo::Popped(ra),
            _ => CallUndo::None,
        };

        let mut hit = None;
        let complete = if let Disposition::Skip = disp {
            now + 1
        } else {
            let t = self.issue.reserve((now + 1).max(src_ready));
            let lat = match (op, computed.as_ref().and_then(|c| c.eff_addr)) {
                // An idealized backend never waits on memory.
                (Opcode::Load, Some(_)) if self.ideal == IdealMode::Backend => {
                    hit = Some(HitLevel::L1);
                    mem.config().l1.hit_latency
                }
                (Opcode::Load, Some(addr)) => {
                    let r = mem.access(addr, AccessKind::Load, Mode::Mt, t);
                    hit = Some(r.hit_level);
                    r.latency
                }
                _ => exec_latency(op, self.p.alu_latency, self.p.mul_latency),
            };
            t + lat
        };

        let computed_value = computed.as_ref().and_then(|c| c.value);
        let vp = match (prediction, disp) {
            (Some(p), Disposition::Skip) => Vp::Skipped(p),
            (Some(p), _) => Vp::Validated {
                mismatch: computed_value != Some(p),
            },
            _ => Vp::None,
        };
        if let Some(d) = dest {
            self.reg_ready[d] = if prediction.is_some() { now + 1 } else { complete };
            if let Some(p) = prediction {
                self.regs[d] = p;
            }
        }
        if f.mispredicted && self.gate == Gate::Branch(f.seq) {
            let resume = complete + self.p.branch_mispredict_penalty;
            if self.boq_driven {
                self.resume_after_reboot = resume;
            } else {
                self.gate = Gate::Until(resume);
            }
        }

        let loop_pc = self.loops.current();
        if let Some(a) = self.assist.as_mut() {
            if let (Some((t1, lat)), Some(addr)) = (a.t1.as_mut(), computed.as_ref().and_then(|c| c.eff_addr)) {
                if a.s_bits.contains(ev.pc) {
                    if hit.is_some_and(|h| h != HitLevel::L1) {
                        lat.update(ev.pc, (complete - now) as f64);
                    }
                    for pf in t1.observe(ev.pc, addr, now, lat.get(ev.pc), loop_pc) {
                        mem.access(pf, AccessKind::Prefetch, Mode::Mt, now);
                    }
                }
            }
            if let Some(r) = a.reuse.as_mut() {
                if op.is_control() && ev.next_pc() != ev.pc + 1 {
                    r.scoreboard.reset();
                }
                if let (Opcode::BrCond, Some(tag)) = (op, f.tag) {
                    r.vpt.retire_before(tag);
                }
            }
        }
        if op == Opcode::BrCond {
            self.ctx = Ctx {
                tag: f.tag,
                br_seq: Some(f.seq),
            };
        }
        self.rob.push_back(RobEntry {
            seq: f.seq,
            pc: ev.pc,
            dispatched: now,
            complete,
            computed,
            undo_reg,
            undo_mem,
            undo_call,
            ctx_after: self.ctx,
            vp,
            mispredicted: f.mispredicted,
            hit,
        });
    }

    pub fn commit(&mut self, now: u64, mem: &mut MemSystem) {
        let width = if self.ideal == IdealMode::Backend {
            usize::MAX
        } else {
            self.p.commit_width
        };
        let mut n = 0;
        while n < width && !self.done() {
            match self.rob.front() {
                Some(h) if h.complete <= now => {}
                _ => break,
            }
            let e = self.rob.pop_front().expect("non-empty");
            let oracle = self.events.pop_front().expect("event retained until commit");
            self.events_base += 1;
            debug_assert_eq!(oracle.seq, e.seq);
            let ins = &self.program.instrs[e.pc];

            let mut c = e.computed.clone();
            if let (Some(c), Vp::Skipped(v)) = (c.as_mut(), e.vp) {
                c.value = Some(v);
            }
            if c.as_ref() != Some(&oracle) {
                self.firewall_mismatches += 1;
            }
            if let Some(log) = self.commits.as_mut() {
                log.push(c.unwrap_or(TraceEvent {
                    value: None,
                    eff_addr: None,
                    ..oracle.clone()
                }));
            }
            if let (Opcode::Store, Some(addr)) = (oracle.opcode, oracle.eff_addr) {
                mem.access(addr, AccessKind::Store, Mode::Mt, now);
            }
            self.committed += 1;
            n += 1;
            if oracle.opcode == Opcode::BrCond {
                self.branches.conditional += 1;
                self.branches.mispredicts += e.mispredicted as u64;
            }
            let latency = e.complete - e.dispatched;
            if let Some(p) = self.profile.as_mut() {
                p.record(e.pc, e.hit, latency, oracle.taken, oracle.eff_addr);
            }

            self.loop_events.clear();
            self.loops.on_commit(ins, &oracle, &mut self.loop_events);
            if let Some(a) = self.assist.as_mut() {
                if let Some(r) = a.reuse.as_mut() {
                    for ev in &self.loop_events {
                        match *ev {
                            LoopEvent::Enter(pc) => r.sif.loop_entered(pc),
                            LoopEvent::Iterate(pc) => r.sif.loop_iterated(pc),
                            LoopEvent::Exit(_) => {}
                        }
                    }
                    if r.sif.observe(ins, latency) {
                        r.stats.sif_inserts += 1;
                    }
                    match e.vp {
                        Vp::Validated { mismatch: false } => r.stats.confirmed += 1,
                        Vp::Validated { mismatch: true } => r.stats.mispredicted += 1,
                        Vp::Skipped(_) => r.stats.skipped += 1,
                        Vp::None => {}
                    }
                }
                if let Some((t1, _)) = a.t1.as_mut() {
                    for ev in &self.loop_events {
                        if let LoopEvent::Exit(pc) = *ev {
                            t1.loop_end(pc);
                        }
                    }
                }
                if let Some(rc) = a.recycle.as_mut() {
                    for ev in &self.loop_events {
                        if let Some(v) = rc.on_event(*ev, now, self.committed) {
                            self.requests.push(Request::Swap(v));
                        }
                    }
                }
            }
            while self.consumed.front().is_some_and(|c| c.0 <= e.seq) {
                self.consumed.pop_front();
            }

            if oracle.opcode == Opcode::Halt {
                self.halted = true;
                break;
            }
            if matches!(e.vp, Vp::Validated { mismatch: true }) {
                self.replay(&e, now);
                break;
            }
            if e.mispredicted && self.boq_driven {
                self.requests.push(Request::Reboot);
                break;
            }
        }
    }

    /// Squashes everything younger than `head` after a value misprediction.
    fn replay(&mut self, head: &RobEntry, now: u64) {
        while let Some(y) = self.rob.pop_back() {
            match y.undo_call {
                CallUndo::Pushed => {
                    self.call_stack.pop();
                }
                CallUndo::Popped(ra) => self.call_stack.push(ra),
                CallUndo::None => {}
            }
            if let Some((a, old)) = y.undo_mem {
                match old {
                    Some(v) => self.memory.insert(a, v),
                    None => self.memory.remove(&a),
                };
            }
            if let Some((d, v, t)) = y.undo_reg {
                self.regs[d] = v;
                self.reg_ready[d] = t;
            }
        }
        if let (Some((d, _, _)), Some(v)) = (head.undo_reg, head.computed.as_ref().and_then(|c| c.value)) {
            self.regs[d] = v;
            self.reg_ready[d] = now;
        }
        self.buffer.clear();
        self.fetch_seq = head.seq + 1;
        self.halt_fetched = false;
        self.gate = Gate::Until(now + self.p.branch_mispredict_penalty);
        self.ctx = head.ctx_after;
        self.replays += 1;
        if let Some(r) = self.assist.as_mut().and_then(|a| a.reuse.as_mut()) {
            r.sif.sif.delete(head.pc);
            r.vpt.remove_pc(head.pc);
            r.stats.sif_deletes += 1;
            r.stats.replays += 1;
            r.scoreboard.reset();
        }
    }

    /// Closes open loops at the end of the run (for the loop trackers).
    pub fn finish(&mut self) {
        self.loop_events.clear();
        self.loops.finish(&mut self.loop_events);
    }
}
