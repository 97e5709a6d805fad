use super::*;
use crate::memsys::CacheConfig;
use crate::uisa::{gen_workload, parse_program, random_program, WorkloadParams};
use proptest::prelude::*;

fn set(xs: &[usize]) -> BTreeSet<usize> {
    xs.iter().copied().collect()
}

fn ones(b: &FixedBitSet) -> Vec<usize> {
    b.ones().collect()
}

fn train(p: &StaticProgram) -> ProfileStats {
    profile(p, &TrainingParams::default(), &CacheConfig::default()).unwrap()
}

fn load_pcs(p: &StaticProgram) -> Vec<usize> {
    p.instrs
        .iter()
        .filter(|i| i.opcode() == Opcode::Load)
        .map(|i| i.index)
        .collect()
}

#[test]
fn three_instruction_chain() {
    let p = parse_program(
        "ADDI r2, r0, 4096\nLD r1, 0(r2)\nBNE r1, r0, 4\nADDI r9, r0, 1\nHALT\n",
    )
    .unwrap();
    let m = backward_closure(&p, &set(&[2]), &BTreeSet::new());
    assert_eq!(ones(&m), vec![0, 1, 2]);
}

#[test]
fn empty_seeds_give_empty_mask() {
    let p = random_program(3, 60, 2);
    let m = backward_closure(&p, &BTreeSet::new(), &BTreeSet::new());
    assert_eq!(m.count_ones(..), 0);
}

#[test]
fn converted_branch_keeps_no_sources() {
    let p = parse_program("ADDI r1, r0, 1\nBNE r1, r0, 3\nADDI r2, r0, 2\nHALT\n").unwrap();
    assert_eq!(ones(&backward_closure(&p, &set(&[1]), &set(&[1]))), vec![1]);
    assert_eq!(ones(&backward_closure(&p, &set(&[1]), &BTreeSet::new())), vec![0, 1]);
}

#[test]
fn store_to_load_edges_respect_the_window() {
    // ST at 1, then `gap` fillers, then LD from the same (base, offset).
    let build = |gap: usize| {
        let mut src = String::from("ADDI r2, r0, 4096\nST r3, 8(r2)\n");
        for _ in 0..gap {
            src.push_str("ADDI r9, r9, 1\n");
        }
        src.push_str("LD r4, 8(r2)\nHALT\n");
        parse_program(&src).unwrap()
    };
    let within = build(STORE_LOAD_WINDOW - 1);
    let ld = within.len() - 2;
    assert!(backward_closure(&within, &set(&[ld]), &BTreeSet::new()).contains(1));
    let beyond = build(STORE_LOAD_WINDOW);
    let ld = beyond.len() - 2;
    assert!(!backward_closure(&beyond, &set(&[ld]), &BTreeSet::new()).contains(1));

    // A store after the load in static order never feeds it.
    let p = parse_program("ADDI r2, r0, 4096\nLD r4, 8(r2)\nST r3, 8(r2)\nHALT\n").unwrap();
    assert!(!backward_closure(&p, &set(&[1]), &BTreeSet::new()).contains(2));
}

#[test]
fn loop_carried_definitions_reach_around_the_back_edge() {
    let p = parse_program(
        "ADDI r1, r0, 10\nloop: ADDI r2, r1, 0\nADDI r1, r1, -1\nBNE r1, r0, loop\nHALT\n",
    )
    .unwrap();
    // r1 at pc 1 comes from pc 0 on entry and from pc 2 around the loop.
    let g = DepGraph::new(&p);
    let mut prods: Vec<usize> = g.producers(1).collect();
    prods.sort();
    assert_eq!(prods, vec![0, 2]);
}

#[test]
fn call_sites_feed_return_points() {
    let p = parse_program("CALL f\nADDI r2, r1, 0\nHALT\nf: ADDI r1, r0, 7\nRET\n").unwrap();
    let m = backward_closure(&p, &set(&[1]), &BTreeSet::new());
    assert!(m.contains(3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn closure_is_idempotent_and_monotone(seed in 0u64..10_000, len in 10usize..120, a in any::<u64>(), extra in any::<u64>()) {
        let p = random_program(seed, len, 1);
        let n = p.len();
        let pick = |bits: u64| -> BTreeSet<usize> {
            (0..n).filter(|i| (bits.rotate_left(*i as u32 % 64) & 1) == 1 && i % 3 == 0).collect()
        };
        let sa = pick(a);
        let sb: BTreeSet<usize> = sa.union(&pick(extra)).copied().collect();
        let ca = backward_closure(&p, &sa, &BTreeSet::new());
        let again = backward_closure(&p, &ca.ones().collect(), &BTreeSet::new());
        prop_assert_eq!(&again, &ca);
        let cb = backward_closure(&p, &sb, &BTreeSet::new());
        prop_assert!(ca.is_subset(&cb));
    }
}

#[test]
fn profile_of_strided_loop() {
    let p = gen_workload(&WorkloadParams::StridedLoop { stride: 64, iters: 10_000 }, 1).unwrap();
    let prof = train(&p);
    assert!(prof.halted);
    let ld = load_pcs(&p)[0];
    let lp = &prof.per_instr[ld];
    assert_eq!(lp.exec_count, 10_000);
    // Every 64-byte step touches a new line: each access is a cold miss.
    assert!(lp.l1_miss_rate > 0.99, "{}", lp.l1_miss_rate);
    assert_eq!(lp.stride, Some(64));
    for ip in &prof.per_instr {
        assert!((0.0..=1.0).contains(&ip.l1_miss_rate));
        assert!((0.0..=1.0).contains(&ip.l2_miss_rate));
        assert!(ip.mean_latency >= 0.0);
    }
}

#[test]
fn profile_without_memory_and_branch_bias() {
    let p = parse_program("ADDI r1, r0, 1000\nloop: ADDI r1, r1, -1\nBNE r1, r0, loop\nHALT\n")
        .unwrap();
    let prof = train(&p);
    assert!(prof.per_instr.iter().all(|i| i.l1_miss_rate == 0.0 && i.l2_miss_rate == 0.0));
    assert_eq!(prof.per_instr[2].exec_count, 1000);
    assert_eq!(prof.per_instr[2].taken_count, 999);
    assert!((prof.per_instr[2].branch_bias - 0.999).abs() < 1e-12);
}

#[test]
fn truncated_training_run_is_flagged() {
    let p = gen_workload(&WorkloadParams::StridedLoop { stride: 8, iters: 10_000 }, 1).unwrap();
    let t = TrainingParams {
        limit: 500,
        ..Default::default()
    };
    let prof = profile(&p, &t, &CacheConfig::default()).unwrap();
    assert!(!prof.halted);
    assert_eq!(prof.instructions, 500);
}

#[test]
fn seed_thresholds() {
    let p = parse_program("ADDI r2, r0, 4096\nLD r1, 0(r2)\nADDI r3, r1, 1\nHALT\n").unwrap();
    let mut prof = ProfileStats {
        per_instr: vec![InstrProfile { exec_count: 1, ..Default::default() }; p.len()],
        instructions: 4,
        halted: true,
    };
    let opts = SeedOptions::default();
    prof.per_instr[1].l1_miss_rate = 0.05;
    let sv = select_seeds(&p, &prof, &opts);
    assert_eq!(sv.l1_targets, set(&[1]));
    assert!(sv.l2_targets.is_empty());
    assert_eq!(sv.control, set(&[3]));

    prof.per_instr[1].l1_miss_rate = 0.01;
    prof.per_instr[1].l2_miss_rate = 0.002;
    let sv = select_seeds(&p, &prof, &opts);
    assert!(sv.l1_targets.is_empty());
    assert_eq!(sv.l2_targets, set(&[1]));

    // Slow, but only one static consumer.
    prof.per_instr[1].mean_latency = 200.0;
    assert!(select_seeds(&p, &prof, &opts).value_reuse_targets.is_empty());
}

#[test]
fn alu_only_program_seeds_control_only() {
    let p = parse_program("ADDI r1, r0, 50\nloop: ADD r2, r2, r1\nADDI r1, r1, -1\nBNE r1, r0, loop\nHALT\n")
        .unwrap();
    let sv = select_seeds(&p, &train(&p), &SeedOptions::default());
    assert_eq!(sv.control, set(&[3, 4]));
    assert!(sv.l1_targets.is_empty() && sv.l2_targets.is_empty() && sv.t1_targets.is_empty());
    assert!(sv.value_reuse_targets.is_empty());
}

#[test]
fn strided_load_goes_to_t1_not_the_default_skeleton() {
    let p = gen_workload(&WorkloadParams::StridedLoop { stride: 64, iters: 10_000 }, 1).unwrap();
    let prof = train(&p);
    let ld = load_pcs(&p)[0];
    let sv = select_seeds(&p, &prof, &SeedOptions::default());
    assert!(sv.t1_targets.contains(&ld));

    let on = gen_skeleton_versions(&p, &prof);
    on.validate(&p).unwrap();
    assert!(on.s_bits.contains(ld));
    for v in [0, 1, 2, 4, 5] {
        assert!(!on.versions[v].contains(ld), "v{v}");
    }
    assert!(on.versions[3].contains(ld));

    let off = gen_skeleton_versions_with(
        &p,
        &prof,
        &SkeletonOptions {
            t1_offload: false,
            ..Default::default()
        },
    );
    assert_eq!(off.s_bits.count_ones(..), 0);
    assert!(off.versions[0].contains(ld));
    let f_on = dynamic_fraction(&p, &on.versions[0].bits, 100_000);
    let f_off = dynamic_fraction(&p, &off.versions[0].bits, 100_000);
    assert!(f_on < f_off, "{f_on} vs {f_off}");
}

#[test]
fn every_version_is_closed_and_keeps_control() {
    for seed in 0..5 {
        let p = random_program(seed, 80, 20);
        let s = gen_skeleton_versions(&p, &train(&p));
        s.validate(&p).unwrap();
        assert_eq!(s.versions.len(), NUM_VERSIONS);
        for (i, v) in s.versions.iter().enumerate() {
            assert_eq!(v.version_id, i);
            let conv: BTreeSet<usize> = v.converted_branches.iter().map(|c| c.0).collect();
            let again = backward_closure(&p, &v.bits.ones().collect(), &conv);
            assert_eq!(again, v.bits, "version {i} not closed");
        }
    }
}

#[test]
fn biased_conversion_drops_an_exclusive_chain() {
    // pc 3 is never taken: r1 always loads zero. Only pc 3 needs r1.
    let p = parse_program(
        "\
ADDI r5, r0, 4096
ADDI r10, r0, 2000
loop: LD r1, 0(r5)
BNE r1, r0, skip
ADDI r3, r3, 1
skip: ADDI r10, r10, -1
BNE r10, r0, loop
HALT
",
    )
    .unwrap();
    let s = gen_skeleton_versions(&p, &train(&p));
    // The loop branch (taken 1999 of 2000 times) is converted as well.
    assert_eq!(s.versions[4].converted_branches, vec![(3, false), (6, true)]);
    assert!(s.versions[0].contains(2) && s.versions[0].contains(0));
    assert!(!s.versions[4].contains(2) && !s.versions[4].contains(0));
    assert!(s.versions[4].contains(3));
    assert_eq!(s.versions[4].converted(3), Some(false));
}

#[test]
fn json_round_trip_and_hash_check() {
    let p = random_program(11, 90, 10);
    let s = gen_skeleton_versions(&p, &train(&p));
    let back = SkeletonSet::from_json(&s.to_json()).unwrap();
    assert_eq!(back, s);

    let other = random_program(12, 90, 10);
    assert!(matches!(s.validate(&other), Err(SkeletonError::HashMismatch { .. })));
    assert!(matches!(SkeletonSet::from_json("{"), Err(SkeletonError::Json(_))));
}

#[test]
fn validate_rejects_missing_control() {
    let p = random_program(5, 40, 2);
    let s = SkeletonSet::uniform(&p, FixedBitSet::with_capacity(p.len()));
    assert!(matches!(s.validate(&p), Err(SkeletonError::MissingControl { version: 0, .. })));
    SkeletonSet::full(&p).validate(&p).unwrap();
    SkeletonSet::control_only(&p).validate(&p).unwrap();
}
