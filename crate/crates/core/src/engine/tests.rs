use super::*;
use crate::skeleton::SkeletonMask;
use crate::uisa::{gen_workload, parse_program, random_program, run_trace, WorkloadParams};
use fixedbitset::FixedBitSet;

fn looped(body: &str, iters: u64) -> StaticProgram {
    let src = format!("ADDI r30, r0, {iters}\ntop:\n{body}ADDI r30, r30, -1\nBNE r30, r0, top\nHALT\n");
    parse_program(&src).unwrap()
}

fn dla_cfg() -> SimConfig {
    SimConfig::default()
}

#[test]
fn dependent_chain_runs_at_one_per_cycle() {
    let body = "ADDI r1, r1, 1\n".repeat(64);
    let s = run_baseline(&looped(&body, 300), &CoreParams::default(), &CacheConfig::default(), 1 << 30)
        .unwrap();
    assert!(s.halted);
    // 64 serial adds per iteration; the counter update overlaps with them.
    let expected = 66.0 / 64.0;
    assert!((s.ipc - expected).abs() / expected < 0.05, "ipc {}", s.ipc);
}

#[test]
fn independent_stream_runs_at_issue_width() {
    let body: String = (0..64).map(|i| format!("ADDI r{}, r0, {i}\n", 1 + i % 16)).collect();
    let core = CoreParams::default();
    let s = run_baseline(&looped(&body, 300), &core, &CacheConfig::default(), 1 << 30).unwrap();
    let w = core.issue_width as f64;
    assert!(s.ipc > 0.9 * w && s.ipc <= w, "ipc {}", s.ipc);
}

#[test]
fn serial_misses_cost_a_memory_round_trip_each() {
    let len = 1000;
    let p = gen_workload(&WorkloadParams::PointerChase { len, work: 0 }, 3).unwrap();
    let cache = CacheConfig::default();
    let s = run_baseline(&p, &CoreParams::default(), &cache, 1 << 30).unwrap();
    let bound = len as f64 * cache.cold_latency() as f64;
    let err = (s.cycles as f64 - bound).abs() / bound;
    assert!(err < 0.1, "cycles {} vs {bound}", s.cycles);
}

#[test]
fn runs_are_deterministic() {
    let p = random_program(9, 120, 40);
    let set = SkeletonSet::control_only(&p);
    let mut cfg = dla_cfg();
    cfg.features.fetch_buffer = true;
    let a = run_dla(&p, &cfg, &set, 200_000).unwrap();
    let b = run_dla(&p, &cfg, &set, 200_000).unwrap();
    assert_eq!(a, b);
    let c = run_baseline(&p, &cfg.core, &cfg.cache, 200_000).unwrap();
    assert_eq!(c, run_baseline(&p, &cfg.core, &cfg.cache, 200_000).unwrap());
}

#[test]
fn full_skeleton_removes_main_thread_mispredicts() {
    let p = gen_workload(&WorkloadParams::Branchy { iters: 20_000, taken_prob: 0.5 }, 1).unwrap();
    let base = run_baseline(&p, &CoreParams::default(), &CacheConfig::default(), 1 << 30).unwrap();
    let s = run_dla(&p, &dla_cfg(), &SkeletonSet::full(&p), 1 << 30).unwrap();
    assert!(base.branches.mispredicts > 1000);
    assert_eq!(s.branches.mispredicts, 0);
    let la = s.lookahead.unwrap();
    assert_eq!(la.reboots, 0);
    assert_eq!(s.firewall_mismatches, 0);
}

#[test]
fn committed_stream_matches_the_functional_trace() {
    for seed in 0..6 {
        let p = random_program(seed, 100, 30);
        let trace = run_trace(&p, 1 << 20).unwrap();
        let mut cfg = dla_cfg();
        cfg.dla.injection = Some(Injection {
            seed,
            load_value_rate: 0.05,
        });
        cfg.features.value_reuse = true;
        let opts = RunOptions {
            limit: 1 << 20,
            record_commits: true,
            ..Default::default()
        };
        let out = simulate(&p, &cfg, Some(&SkeletonSet::full(&p)), &opts).unwrap();
        assert_eq!(out.stats.firewall_mismatches, 0);
        assert_eq!(out.commits.unwrap(), trace, "seed {seed}");
    }
}

#[test]
fn biased_conversion_reboots_once_per_rare_outcome() {
    let mut src = String::from(
        "\
ADDI r5, r0, 4096
ADDI r10, r0, 2000
loop: LD r1, 0(r5)
BNE r1, r0, skip
ADDI r3, r3, 1
skip: ADDI r5, r5, 8
ADDI r10, r10, -1
BNE r10, r0, loop
HALT
",
    );
    let rare = [17usize, 300, 301, 999, 1500, 1998, 1999];
    for i in rare {
        src.push_str(&format!(".data {} 1\n", 4096 + 8 * i));
    }
    let p = parse_program(&src).unwrap();
    let mut set = SkeletonSet::full(&p);
    set.versions[0] = SkeletonMask {
        version_id: 0,
        bits: set.versions[0].bits.clone(),
        converted_branches: vec![(3, false)],
    };
    let s = run_dla(&p, &dla_cfg(), &set, 1 << 30).unwrap();
    let la = s.lookahead.unwrap();
    assert_eq!(la.mismatch_reboots, rare.len() as u64);
    assert_eq!(la.reboots, rare.len() as u64);
    assert_eq!(s.firewall_mismatches, 0);
}

#[test]
fn empty_skeleton_degenerates_to_baseline() {
    let p = gen_workload(&WorkloadParams::StridedLoop { stride: 8, iters: 5000 }, 1).unwrap();
    let core = CoreParams::default();
    let base = run_baseline(&p, &core, &CacheConfig::default(), 1 << 30).unwrap();
    let ctl = run_dla(&p, &dla_cfg(), &SkeletonSet::control_only(&p), 1 << 30).unwrap();
    assert_eq!(ctl.committed, base.committed);
    // No prefetching in a control-only skeleton: the same misses are paid,
    // plus any BOQ starvation.
    assert_eq!(ctl.memory.mt.prefetch_issued, 0);
    assert!(ctl.cycles >= base.cycles * 95 / 100, "{} vs {}", ctl.cycles, base.cycles);
}

#[test]
fn fetch_buffer_fills_while_dispatch_stalls() {
    // A serial miss chain stalls the window; fetch keeps filling the buffer.
    let p = gen_workload(&WorkloadParams::PointerChase { len: 200, work: 0 }, 1).unwrap();
    let cfg = SimConfig {
        features: Features {
            fetch_buffer: true,
            ..Default::default()
        },
        core: CoreParams {
            window_size: 8,
            ..Default::default()
        },
        ..Default::default()
    };
    let s = simulate(&p, &cfg, None, &RunOptions::default()).unwrap().stats;
    let occ = &s.fetch.occupancy;
    assert_eq!(occ.len(), 33);
    let full = occ[32] as f64 / s.cycles as f64;
    assert!(full > 0.8, "full fraction {full}");
}

#[test]
fn capacity_equal_to_decode_width_matches_undecoupled_fetch() {
    let p = random_program(4, 150, 50);
    let core = CoreParams {
        fetch_buffer_capacity: 4,
        ..Default::default()
    };
    let mut on = SimConfig {
        core: core.clone(),
        ..Default::default()
    };
    on.features.fetch_buffer = true;
    let off = SimConfig {
        core,
        ..Default::default()
    };
    let a = simulate(&p, &on, None, &RunOptions::default()).unwrap().stats;
    let b = simulate(&p, &off, None, &RunOptions::default()).unwrap().stats;
    assert_eq!(a.cycles, b.cycles);
    assert_eq!(a.fetch, b.fetch);
}

#[test]
fn occupancy_histogram_counts_every_cycle() {
    let p = random_program(2, 80, 20);
    let mut cfg = SimConfig::default();
    cfg.features.fetch_buffer = true;
    let s = simulate(&p, &cfg, None, &RunOptions::default()).unwrap().stats;
    let total: u64 = s.fetch.occupancy.iter().sum();
    assert!(total <= s.cycles && total + 1 >= s.cycles, "{total} vs {}", s.cycles);
    assert_eq!(s.fetch.demand.iter().sum::<u64>(), total);
}

#[test]
fn configuration_errors_are_reported() {
    let p = random_program(1, 40, 2);
    let set = SkeletonSet::full(&p);
    let mut cfg = dla_cfg();
    cfg.dla.version = 6;
    assert!(matches!(run_dla(&p, &cfg, &set, 100), Err(EngineError::Config(_))));

    let opts = RunOptions {
        ideal: IdealMode::Fetch,
        ..Default::default()
    };
    assert!(matches!(simulate(&p, &dla_cfg(), Some(&set), &opts), Err(EngineError::Config(_))));

    let other = random_program(2, 40, 2);
    assert!(matches!(run_dla(&other, &dla_cfg(), &set, 100), Err(EngineError::Skeleton(_))));

    let bad = CoreParams {
        fetch_buffer_capacity: 2,
        ..Default::default()
    };
    assert!(matches!(run_baseline(&p, &bad, &CacheConfig::default(), 100), Err(EngineError::Config(_))));
}

#[test]
fn cycle_cap_reports_a_stall() {
    let p = gen_workload(&WorkloadParams::StridedLoop { stride: 8, iters: 100_000 }, 1).unwrap();
    let opts = RunOptions {
        max_cycles: Some(1000),
        ..Default::default()
    };
    let err = simulate(&p, &SimConfig::default(), None, &opts).unwrap_err();
    assert!(matches!(err, EngineError::Stalled { cycles: 1000, .. }));
}

#[test]
fn limit_truncates_the_run() {
    let p = gen_workload(&WorkloadParams::StridedLoop { stride: 8, iters: 100_000 }, 1).unwrap();
    let s = run_baseline(&p, &CoreParams::default(), &CacheConfig::default(), 5000).unwrap();
    assert_eq!(s.committed, 5000);
    assert!(s.truncated && !s.halted);
    assert!((s.ipc - s.committed as f64 / s.cycles as f64).abs() < 1e-12);
}

#[test]
fn empty_mask_still_feeds_branch_outcomes() {
    let p = random_program(6, 60, 10);
    let mut bits = FixedBitSet::with_capacity(p.len());
    for i in p.instrs.iter().filter(|i| i.opcode().is_control()) {
        bits.insert(i.index);
    }
    let set = SkeletonSet::uniform(&p, bits);
    let s = run_dla(&p, &dla_cfg(), &set, 1 << 20).unwrap();
    assert!(s.halted);
    assert_eq!(s.firewall_mismatches, 0);
    let q = s.queues.unwrap();
    assert_eq!(q.boq_pushed, q.boq_consumed + q.boq_flushed);
}
