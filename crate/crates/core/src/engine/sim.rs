//! Cycle loop tying the two threads, the queues and the memory system.

use fixedbitset::FixedBitSet;

use super::lookahead::{LookAhead, LtInputs};
use super::main_core::{Assist, MainCore, ReuseParts, Request};
use super::queues::Channel;
use super::{EngineError, IdealMode, LookaheadStats, RunOptions, RunOutput, RunStats, SimConfig};
use crate::memsys::MemSystem;
use crate::recycle::{RecycleController, RecycleMode};
use crate::skeleton::{ProfileBuilder, SkeletonSet, NUM_VERSIONS};
use crate::t1::{LatencyEstimator, T1};
use crate::uisa::StaticProgram;
use crate::vreuse::{ReuseStats, Scoreboard, SifTrainer, Vpt};

/// Cycles without a main-thread commit after which a run is declared stuck.
const PROGRESS_GUARD: u64 = 1_000_000;

#[derive(Clone, Copy)]
enum RebootKind {
    Mismatch,
    Watchdog,
    Swap,
}

/// Runs `program` on the baseline core (`skeletons == None`) or on the
/// look-ahead pair.
pub fn simulate(
    program: &StaticProgram,
    cfg: &SimConfig,
    skeletons: Option<&SkeletonSet>,
    opts: &RunOptions,
) -> Result<RunOutput, EngineError> {
    program
        .validate()
        .map_err(|e| EngineError::Config(format!("program: {e}")))?;
    cfg.core.validate()?;
    let mut mem = MemSystem::new(cfg.cache)?;

    let mut mt = MainCore::new(program, &cfg.core, cfg.features.fetch_buffer, opts.ideal, opts.limit);
    if opts.record_commits {
        mt.commits = Some(Vec::new());
    }
    if opts.collect_profile {
        mt.profile = Some(ProfileBuilder::new(program.len()));
    }

    let mut pair = match skeletons {
        None => None,
        Some(set) => {
            if opts.ideal != IdealMode::None {
                return Err(EngineError::Config(
                    "idealized front or back ends apply to baseline runs only".into(),
                ));
            }
            set.validate(program)?;
            let d = &cfg.dla;
            if d.version >= NUM_VERSIONS {
                return Err(EngineError::Config(format!("skeleton version {} out of range", d.version)));
            }
            if d.boq_capacity == 0 || d.fq_capacity == 0 {
                return Err(EngineError::Config("queue capacities must be positive".into()));
            }
            if let Some(i) = &d.injection {
                if !(0.0..=1.0).contains(&i.load_value_rate) {
                    return Err(EngineError::Config("injection rate must lie in [0, 1]".into()));
                }
            }
            if let RecycleMode::Static(map) = &cfg.features.recycle {
                if map.values().any(|v| *v >= NUM_VERSIONS) {
                    return Err(EngineError::Config("static recycle map names an unknown version".into()));
                }
            }
            d.recycle.validate().map_err(EngineError::Config)?;
            let f = &cfg.features;
            mt.boq_driven = true;
            mt.assist = Some(Assist {
                s_bits: if f.t1 {
                    set.s_bits.clone()
                } else {
                    FixedBitSet::new()
                },
                t1: f.t1.then(|| {
                    (
                        T1::new(d.t1.clone()),
                        LatencyEstimator::new(cfg.cache.cold_latency() as f64, d.t1.alpha),
                    )
                }),
                reuse: f.value_reuse.then(|| ReuseParts {
                    sif: SifTrainer::new(&d.vreuse),
                    vpt: Vpt::new(d.vreuse.vpt_capacity),
                    scoreboard: Scoreboard::default(),
                    stats: ReuseStats::default(),
                }),
                recycle: (f.recycle != RecycleMode::Off)
                    .then(|| RecycleController::new(d.recycle.clone(), f.recycle.clone(), d.version)),
                release_at_dequeue: d.prefetch_release_at_dequeue,
            });
            let lt = LookAhead::new(program, &cfg.core, &set.versions[d.version], d.injection.as_ref());
            Some((lt, Channel::new(d.boq_capacity, d.fq_capacity), set))
        }
    };

    let mut now = 0u64;
    let mut last_progress = 0u64;
    let mut pending: Option<RebootKind> = None;
    let mut version = cfg.dla.version;
    let mut next_version = version;
    while !mt.done() {
        // The look-ahead thread advances first within a cycle.
        if let Some((lt, chan, _)) = pair.as_mut() {
            let inputs = LtInputs {
                mt_memory: &mt.memory,
                sif: mt
                    .assist
                    .as_ref()
                    .and_then(|a| a.reuse.as_ref())
                    .map(|r| &r.sif.sif),
                release_at_dequeue: cfg.dla.prefetch_release_at_dequeue,
            };
            lt.cycle(now, chan, &mut mem, &inputs);
        }
        let before = mt.committed;
        mt.commit(now, &mut mem);
        if mt.committed != before {
            last_progress = now;
        }
        if mt.done() {
            now += 1;
            break;
        }

        if let Some((lt, chan, set)) = pair.as_mut() {
            // A swap raised by the same commit as a mismatch rides on its reboot.
            for request in mt.take_requests() {
                match request {
                    Request::Reboot => {
                        // Nothing younger than the branch is in flight, so the
                        // reboot can happen now; a pending swap rides along.
                        let kind = match pending.take() {
                            Some(RebootKind::Swap) => {
                                version = next_version;
                                RebootKind::Swap
                            }
                            _ => RebootKind::Mismatch,
                        };
                        reboot(now, &mut mt, lt, chan, set, version, kind, cfg.dla.reboot_penalty)?;
                    }
                    Request::Swap(v) => {
                        if v != version {
                            next_version = v;
                            pending = Some(RebootKind::Swap);
                            mt.draining = true;
                        }
                    }
                }
            }
            if let Some(kind) = pending {
                if mt.is_drained() {
                    if matches!(kind, RebootKind::Swap) {
                        version = next_version;
                    }
                    pending = None;
                    reboot(now, &mut mt, lt, chan, set, version, kind, cfg.dla.reboot_penalty)?;
                }
            }
        }

        mt.sample_occupancy();
        mt.dispatch(now, &mut mem);
        mt.fetch(now, pair.as_mut().map(|p| &mut p.1), &mut mem)?;

        if let Some((lt, chan, _)) = pair.as_mut() {
            if pending.is_none()
                && mt.boq_waiting
                && (lt.idle() || now.saturating_sub(lt.last_commit) > cfg.dla.watchdog_cycles)
            {
                pending = Some(RebootKind::Watchdog);
                mt.draining = true;
            }
            chan.check_depth_law()
                .map_err(|what| EngineError::ProtocolViolation { cycle: now, what })?;
        }

        now += 1;
        if opts.max_cycles.is_some_and(|m| now >= m) || now - last_progress > PROGRESS_GUARD {
            return Err(EngineError::Stalled {
                cycles: now,
                committed: mt.committed,
            });
        }
    }
    mt.finish();

    let lt_committed = pair.as_ref().map_or(0, |p| p.0.stats.committed);
    let committed = mt.committed;
    let mut stats = RunStats {
        dla: pair.is_some(),
        cycles: now,
        committed,
        ipc: committed as f64 / now.max(1) as f64,
        halted: mt.halted,
        truncated: !mt.halted,
        branches: mt.branches.clone(),
        fetch: std::mem::take(&mut mt.fetch_stats),
        replays: mt.replays,
        firewall_mismatches: mt.firewall_mismatches,
        memory: mem.stats(committed, lt_committed),
        ..Default::default()
    };
    let value_footnotes = pair.as_ref().map_or(0, |p| p.0.value_footnotes);
    if let Some((lt, chan, _)) = pair {
        let mut l: LookaheadStats = lt.stats.clone();
        l.reboots_per_10k = l.reboots as f64 * 10_000.0 / committed.max(1) as f64;
        stats.lookahead = Some(l);
        stats.queues = Some(chan.stats.clone());
    }
    let mut t1_log = Vec::new();
    if let Some(mut a) = mt.assist.take() {
        if let Some((t, _)) = a.t1.as_mut() {
            t1_log = std::mem::take(&mut t.log);
        }
        stats.reuse = a.reuse.map(|r| ReuseStats {
            footnotes_emitted: value_footnotes,
            ..r.stats
        });
        stats.t1 = a.t1.map(|(t, _)| t.stats);
        stats.recycle = a.recycle.map(|r| r.finish());
    }
    let profile = mt.profile.take().map(|p| p.finish(committed, mt.halted));
    Ok(RunOutput {
        stats,
        commits: mt.commits.take(),
        profile,
        t1_log,
    })
}

#[allow(clippy::too_many_arguments)]
fn reboot(
    now: u64,
    mt: &mut MainCore<'_>,
    lt: &mut LookAhead<'_>,
    chan: &mut Channel,
    set: &SkeletonSet,
    version: usize,
    kind: RebootKind,
    penalty: u64,
) -> Result<(), EngineError> {
    chan.flush();
    mt.on_reboot(now);
    let pc = mt.next_fetch_pc()?;
    lt.reboot(&mt.regs, &mt.call_stack, pc, now + penalty, Some(&set.versions[version]));
    match kind {
        RebootKind::Mismatch => lt.stats.mismatch_reboots += 1,
        RebootKind::Watchdog => lt.stats.watchdog_reboots += 1,
        RebootKind::Swap => lt.stats.swap_reboots += 1,
    }
    Ok(())
}
