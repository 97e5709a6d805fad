//! Loop detection and per-loop skeleton-version selection.
//!
//! [`LoopTracker`] turns the committed instruction stream into loop
//! enter/iterate/exit events. Loops are backward taken conditional branches;
//! repeated calls to the same target with no loop branch in between are
//! treated as a recursion pseudo-loop keyed by the call site.
//!
//! [`RecycleController`] measures main-thread IPC over units of at least
//! `unit_min_instructions` that start and end at iteration boundaries of the
//! same loop, tries each candidate version once per loop, keeps the best in
//! a small LRU loop-context table, and reinstates it on re-entry.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::uisa::{Opcode, StaticInstr, TraceEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", content = "pc", rename_all = "snake_case")]
pub enum LoopEvent {
    Enter(usize),
    Iterate(usize),
    Exit(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum FrameKind {
    Branch,
    /// Recursion keyed by call target; exits when the call depth drops below
    /// the depth at which it was entered.
    Call { target: usize, depth: usize },
}

#[derive(Clone, Debug)]
struct Frame {
    pc: usize,
    kind: FrameKind,
}

#[derive(Clone, Debug, Default)]
pub struct LoopTracker {
    stack: Vec<Frame>,
    depth: usize,
    /// Target of the last CALL seen with no loop branch since.
    last_call_target: Option<usize>,
}

impl LoopTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Innermost active loop.
    pub fn current(&self) -> Option<usize> {
        self.stack.last().map(|f| f.pc)
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    /// Feeds one committed instruction; events come out innermost first.
    pub fn on_commit(&mut self, ins: &StaticInstr, ev: &TraceEvent, out: &mut Vec<LoopEvent>) {
        match ins.opcode() {
            Opcode::BrCond if ins.is_backward_branch() => {
                self.last_call_target = None;
                let pos = self.stack.iter().rposition(|f| f.pc == ins.index);
                if ev.taken == Some(true) {
                    match pos {
                        Some(p) => {
                            self.pop_above(p, out);
                            out.push(LoopEvent::Iterate(ins.index));
                        }
                        None => {
                            self.stack.push(Frame {
                                pc: ins.index,
                                kind: FrameKind::Branch,
                            });
                            out.push(LoopEvent::Enter(ins.index));
                        }
                    }
                } else if let Some(p) = pos {
                    self.pop_above(p, out);
                    self.stack.pop();
                    out.push(LoopEvent::Exit(ins.index));
                }
            }
            Opcode::Call => {
                let target = ins.target.unwrap_or(0);
                let pos = self
                    .stack
                    .iter()
                    .rposition(|f| matches!(f.kind, FrameKind::Call { target: t, .. } if t == target));
                if let Some(p) = pos {
                    self.pop_above(p, out);
                    out.push(LoopEvent::Iterate(self.stack[p].pc));
                } else if self.last_call_target == Some(target) {
                    self.stack.push(Frame {
                        pc: ins.index,
                        kind: FrameKind::Call {
                            target,
                            depth: self.depth,
                        },
                    });
                    out.push(LoopEvent::Enter(ins.index));
                }
                self.last_call_target = Some(target);
                self.depth += 1;
            }
            Opcode::Ret => {
                self.depth = self.depth.saturating_sub(1);
                while let Some(f) = self.stack.last() {
                    match f.kind {
                        FrameKind::Call { depth, .. } if self.depth < depth => {
                            out.push(LoopEvent::Exit(f.pc));
                            self.stack.pop();
                        }
                        _ => break,
                    }
                }
            }
            _ => {}
        }
    }

    fn pop_above(&mut self, p: usize, out: &mut Vec<LoopEvent>) {
        while self.stack.len() > p + 1 {
            let f = self.stack.pop().expect("non-empty");
            out.push(LoopEvent::Exit(f.pc));
        }
    }

    /// Closes every open loop (end of run).
    pub fn finish(&mut self, out: &mut Vec<LoopEvent>) {
        while let Some(f) = self.stack.pop() {
            out.push(LoopEvent::Exit(f.pc));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecycleConfig {
    pub unit_min_instructions: u64,
    pub lct_entries: usize,
    /// Versions the controller may choose from, in trial order.
    pub candidates: Vec<usize>,
}

impl Default for RecycleConfig {
    fn default() -> Self {
        RecycleConfig {
            unit_min_instructions: 10_000,
            lct_entries: 16,
            candidates: (0..crate::skeleton::NUM_VERSIONS).collect(),
        }
    }
}

impl RecycleConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.unit_min_instructions == 0 || self.lct_entries == 0 {
            return Err("recycle unit size and LCT size must be positive".into());
        }
        if self.candidates.is_empty() {
            return Err("recycle needs at least one candidate version".into());
        }
        if let Some(v) = self.candidates.iter().find(|v| **v >= crate::skeleton::NUM_VERSIONS) {
            return Err(format!("recycle candidate {v} is not a skeleton version"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "loops")]
pub enum RecycleMode {
    /// A single fixed version for the whole run.
    #[default]
    Off,
    /// Explore every candidate per loop and keep the best.
    Dynamic,
    /// Fixed loop-pc to version assignment.
    Static(BTreeMap<usize, usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitMeasurement {
    pub loop_pc: usize,
    pub version: usize,
    pub start_cycle: u64,
    pub instructions: u64,
    pub cycles: u64,
    pub ipc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchReason {
    Explore,
    Select,
    LctHit,
    Static,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub cycle: u64,
    pub committed: u64,
    pub loop_pc: usize,
    pub version: usize,
    pub reason: SwitchReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LctEntry {
    pub loop_pc: usize,
    pub version: usize,
    pub ipc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecycleReport {
    pub timeline: Vec<TimelineEntry>,
    pub measurements: Vec<UnitMeasurement>,
    /// Loop pc to (version to IPC) trials, one per explored version.
    pub trials: BTreeMap<usize, BTreeMap<usize, f64>>,
    pub lct: Vec<LctEntry>,
    pub lct_hits: u64,
    pub lct_evictions: u64,
    pub switches: u64,
}

#[derive(Clone, Debug)]
struct Unit {
    start_cycle: u64,
    start_committed: u64,
    version: usize,
}

#[derive(Clone, Debug)]
pub struct RecycleController {
    cfg: RecycleConfig,
    mode: RecycleMode,
    active: usize,
    /// Open units keyed by loop pc.
    units: HashMap<usize, Unit>,
    /// Partial trials of loops still being explored.
    exploring: HashMap<usize, BTreeMap<usize, f64>>,
    lct: Vec<(LctEntry, u64)>,
    clock: u64,
    pub report: RecycleReport,
}

impl RecycleController {
    pub fn new(cfg: RecycleConfig, mode: RecycleMode, initial: usize) -> Self {
        RecycleController {
            cfg,
            mode,
            active: initial,
            units: HashMap::new(),
            exploring: HashMap::new(),
            lct: Vec::new(),
            clock: 0,
            report: RecycleReport::default(),
        }
    }

    pub fn active(&self) -> usize {
        self.active
    }

    fn enabled(&self) -> bool {
        match &self.mode {
            RecycleMode::Off => false,
            RecycleMode::Dynamic => self.cfg.candidates.len() > 1,
            RecycleMode::Static(_) => true,
        }
    }

    fn lct_lookup(&mut self, loop_pc: usize) -> Option<usize> {
        self.clock += 1;
        let clock = self.clock;
        let e = self.lct.iter_mut().find(|(e, _)| e.loop_pc == loop_pc)?;
        e.1 = clock;
        Some(e.0.version)
    }

    fn lct_insert(&mut self, entry: LctEntry) {
        self.clock += 1;
        if let Some(e) = self.lct.iter_mut().find(|(e, _)| e.loop_pc == entry.loop_pc) {
            *e = (entry, self.clock);
            return;
        }
        if self.lct.len() >= self.cfg.lct_entries.max(1) {
            let (i, _) = self
                .lct
                .iter()
                .enumerate()
                .min_by_key(|(_, (_, t))| *t)
                .expect("non-empty");
            self.lct.remove(i);
            self.report.lct_evictions += 1;
        }
        self.lct.push((entry, self.clock));
    }

    fn switch(&mut self, loop_pc: usize, version: usize, reason: SwitchReason, cycle: u64, committed: u64) -> Option<usize> {
        self.report.timeline.push(TimelineEntry {
            cycle,
            committed,
            loop_pc,
            version,
            reason,
        });
        if version == self.active {
            return None;
        }
        self.active = version;
        self.report.switches += 1;
        // Units in flight no longer ran under a single version.
        self.units.clear();
        Some(version)
    }

    fn next_untried(&self, loop_pc: usize) -> Option<usize> {
        let tried = self.exploring.get(&loop_pc);
        self.cfg
            .candidates
            .iter()
            .copied()
            .find(|v| tried.is_none_or(|t| !t.contains_key(v)))
    }

    /// Handles a loop event at main-thread commit. Returns the version to
    /// switch to, if the active one should change.
    pub fn on_event(&mut self, ev: LoopEvent, cycle: u64, committed: u64) -> Option<usize> {
        if !self.enabled() {
            return None;
        }
        match ev {
            LoopEvent::Enter(pc) => {
                if let RecycleMode::Static(map) = &self.mode {
                    let v = *map.get(&pc)?;
                    return self.switch(pc, v, SwitchReason::Static, cycle, committed);
                }
                let switched = if let Some(v) = self.lct_lookup(pc) {
                    self.report.lct_hits += 1;
                    self.switch(pc, v, SwitchReason::LctHit, cycle, committed)
                } else if let Some(v) = self.next_untried(pc) {
                    self.switch(pc, v, SwitchReason::Explore, cycle, committed)
                } else {
                    None
                };
                self.open_unit(pc, cycle, committed);
                switched
            }
            LoopEvent::Iterate(pc) => {
                if matches!(self.mode, RecycleMode::Static(_)) {
                    return None;
                }
                let Some(u) = self.units.get(&pc) else {
                    self.open_unit(pc, cycle, committed);
                    return None;
                };
                let instructions = committed - u.start_committed;
                if instructions < self.cfg.unit_min_instructions {
                    return None;
                }
                let m = UnitMeasurement {
                    loop_pc: pc,
                    version: u.version,
                    start_cycle: u.start_cycle,
                    instructions,
                    cycles: cycle - u.start_cycle,
                    ipc: instructions as f64 / (cycle - u.start_cycle).max(1) as f64,
                };
                self.units.remove(&pc);
                let switched = self.record(m, cycle, committed);
                self.open_unit(pc, cycle, committed);
                switched
            }
            LoopEvent::Exit(pc) => {
                self.units.remove(&pc);
                None
            }
        }
    }

    fn open_unit(&mut self, pc: usize, cycle: u64, committed: u64) {
        self.units.insert(
            pc,
            Unit {
                start_cycle: cycle,
                start_committed: committed,
                version: self.active,
            },
        );
    }

    fn record(&mut self, m: UnitMeasurement, cycle: u64, committed: u64) -> Option<usize> {
        let pc = m.loop_pc;
        self.report.measurements.push(m.clone());
        if self.lct.iter().any(|(e, _)| e.loop_pc == pc) {
            return None;
        }
        let trials = self.exploring.entry(pc).or_default();
        trials.entry(m.version).or_insert(m.ipc);
        if let Some(v) = self.next_untried(pc) {
            return self.switch(pc, v, SwitchReason::Explore, cycle, committed);
        }
        let trials = self.exploring.remove(&pc).unwrap_or_default();
        let (best, ipc) = argmax(&trials)?;
        self.report.trials.insert(pc, trials);
        self.lct_insert(LctEntry {
            loop_pc: pc,
            version: best,
            ipc,
        });
        self.switch(pc, best, SwitchReason::Select, cycle, committed)
    }

    /// Final report including the loop-context table contents.
    pub fn finish(mut self) -> RecycleReport {
        for (pc, t) in self.exploring.drain() {
            self.report.trials.entry(pc).or_insert(t);
        }
        self.lct.sort_by_key(|(e, _)| e.loop_pc);
        self.report.lct = self.lct.into_iter().map(|(e, _)| e).collect();
        self.report
    }
}

/// Highest IPC; ties go to the lowest version id.
pub fn argmax(trials: &BTreeMap<usize, f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (&v, &ipc) in trials {
        if best.is_none_or(|(_, b)| ipc > b) {
            best = Some((v, ipc));
        }
    }
    best
}
