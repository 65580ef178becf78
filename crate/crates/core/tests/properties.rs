use mico_core::heuristics::{argmax_placement, best_fit, first_fit, Baseline, Lifetimes};
use mico_core::sim::{Action, PlacementPolicy, SimState};
use mico_core::trace::{
    classify_vm, generate_scenarios, read_trace, synth_workload, write_canonical, Lifetime, MixtureSchedule,
    Segment, Thresholds, TraceMapping, VmType, Window,
};
use mico_testkit::{check_episode, random_instance, InstanceSpec};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn environment_invariants(seed in any::<u64>(), choice_seed in any::<u64>()) {
        let (cluster, seq) = random_instance(&InstanceSpec::medium(), seed);
        prop_assert_eq!(check_episode(&cluster, &seq, choice_seed), Ok(()));
    }

    #[test]
    fn queued_release_order_is_irrelevant(seed in any::<u64>()) {
        let (cluster, seq) = random_instance(&InstanceSpec { delete_prob: 0.6, ..InstanceSpec::medium() }, seed);
        let reqs = seq.requests().to_vec();
        // reverse every maximal run of deletes
        let mut swapped = reqs.clone();
        let mut i = 0;
        while i < swapped.len() {
            let j = (i..swapped.len()).find(|&k| swapped[k].is_create()).unwrap_or(swapped.len());
            swapped[i..j].reverse();
            i = j + 1;
        }
        let a = mico_core::run_episode(&Baseline::FirstFit, &cluster, &reqs, 0).unwrap();
        let b = mico_core::run_episode(&Baseline::FirstFit, &cluster, &swapped, 0).unwrap();
        prop_assert_eq!(a.scheduled_length, b.scheduled_length);
        prop_assert_eq!(a.steps, b.steps);
    }

    #[test]
    fn baselines_stay_feasible_and_perfect_fill_wins(seed in any::<u64>()) {
        let (cluster, seq) = random_instance(&InstanceSpec::medium(), seed);
        let lifetimes = Lifetimes::from_sequence(&seq);
        for b in [Baseline::BestFit, Baseline::FirstFit, Baseline::Hindsight(lifetimes)] {
            let mut state = SimState::new(&cluster, &seq, 0).unwrap();
            while let Some(req) = state.pending() {
                let action = if req.is_create() { b.decide(&state).unwrap() } else { Action::NoOp };
                if req.is_create() {
                    let feasible = state.feasible().unwrap();
                    match action {
                        Action::Place(i) => prop_assert!(feasible.contains(&i)),
                        _ => prop_assert!(feasible.is_empty()),
                    }
                    let perfect: Vec<usize> = feasible.iter().copied()
                        .filter(|&i| state.available(i) == req.demand.as_slice()).collect();
                    if !perfect.is_empty() {
                        if let Action::Place(i) = best_fit(&state).unwrap() {
                            prop_assert!(perfect.contains(&i));
                        }
                    }
                }
                if state.step(action).unwrap().terminal { break; }
            }
        }
    }

    #[test]
    fn argmax_invariant_under_monotone_transform(seed in any::<u64>()) {
        let (cluster, seq) = random_instance(&InstanceSpec::medium(), seed);
        let f = |b: &[u64], i: &[u64]| -((b[0] - i[0]) as f64) + 0.25 * b[1] as f64;
        let g = |b: &[u64], i: &[u64]| (f(b, i) / 3.0).exp() * 7.0 + 1.0;
        let mut state = SimState::new(&cluster, &seq, 0).unwrap();
        while let Some(req) = state.pending() {
            let action = if req.is_create() {
                let a = argmax_placement(&f, &state).unwrap();
                prop_assert_eq!(a, argmax_placement(&g, &state).unwrap());
                a
            } else {
                Action::NoOp
            };
            if state.step(action).unwrap().terminal { break; }
        }
    }

    #[test]
    fn scenario_cover(seed in any::<u64>(), w in 1usize..40, k in 1usize..9, tw in 1u64..10) {
        let (_, seq) = random_instance(&InstanceSpec { max_creates: 60, ..InstanceSpec::medium() }, seed);
        prop_assume!(!seq.is_empty());
        for window in [Window::Count(w), Window::Equal(k), Window::Time(tw)] {
            let parts = generate_scenarios(&seq, window).unwrap();
            let joined: Vec<_> = parts.iter().flat_map(|s| s.requests.clone()).collect();
            prop_assert_eq!(joined.as_slice(), seq.requests());
            prop_assert!(parts.windows(2).all(|p| p[0].range.end == p[1].range.start));
        }
        prop_assert_eq!(generate_scenarios(&seq, Window::Count(w)).unwrap().len(), seq.len().div_ceil(w));
    }

    #[test]
    fn parse_roundtrip(seed in any::<u64>()) {
        let (_, seq) = random_instance(&InstanceSpec::medium(), seed);
        let mut text = Vec::new();
        write_canonical(&seq, &mut text).unwrap();
        let parsed = read_trace(text.as_slice(), &TraceMapping::canonical()).unwrap();
        prop_assert_eq!(&parsed, &seq);
        let mut again = Vec::new();
        write_canonical(&parsed, &mut again).unwrap();
        prop_assert_eq!(text, again);
    }

    #[test]
    fn classification_is_total(cpu in 0u64..1000, mem in 0u64..4000) {
        let ty = classify_vm(&[cpu, mem], &Thresholds::default()).unwrap();
        prop_assert!(VmType::ALL.contains(&ty));
    }

    #[test]
    fn synthetic_sequences_are_well_formed(seed in any::<u64>(), n in 1usize..300, mean in 1.0f64..50.0) {
        let spec = MixtureSchedule::new(vec![
            Segment { creates: n, mixture: [0.4, 0.3, 0.1, 0.1, 0.1], lifetime: Lifetime::Exponential { mean } },
            Segment { creates: n, mixture: [0.0, 0.1, 0.2, 0.3, 0.4], lifetime: Lifetime::Uniform { lo: 1, hi: 30 } },
        ]);
        // RequestSequence::new validates matching and ordering
        let seq = synth_workload(&spec, seed).unwrap();
        prop_assert_eq!(seq.creates(), 2 * n);
        prop_assert!(seq.len() >= 2 * n && seq.len() <= 4 * n);
        // the trace ends at the last create
        let last = seq.iter().filter(|r| r.is_create()).map(|r| r.time).max().unwrap();
        prop_assert!(seq.iter().all(|r| r.time <= last));
    }
}

#[test]
fn first_fit_is_argmax_of_negated_index() {
    for seed in 0..50 {
        let (cluster, seq) = random_instance(&InstanceSpec::medium(), seed);
        let state = SimState::new(&cluster, &seq, 0).unwrap();
        if state.pending().is_some_and(|r| r.is_create()) {
            let by_index = mico_core::heuristics::argmax_by(&state, |pm, _, _| Ok(-(pm as f64))).unwrap();
            assert_eq!(by_index, first_fit(&state).unwrap());
        }
    }
}

#[test]
fn segment_proportions_follow_the_mixture() {
    let small_heavy = [0.7, 0.2, 0.1, 0.0, 0.0];
    let large_heavy = [0.0, 0.0, 0.1, 0.2, 0.7];
    let spec = MixtureSchedule::new(vec![
        Segment { creates: 12_000, mixture: small_heavy, lifetime: Lifetime::Fixed(50) },
        Segment { creates: 12_000, mixture: large_heavy, lifetime: Lifetime::Fixed(50) },
    ]);
    let seq = synth_workload(&spec, 2024).unwrap();
    let th = Thresholds::default();
    let creates: Vec<_> = seq.iter().filter(|r| r.is_create()).collect();
    for (half, want) in [(&creates[..12_000], small_heavy), (&creates[12_000..], large_heavy)] {
        let mut counts = [0usize; 5];
        for r in half {
            counts[classify_vm(&r.demand, &th).unwrap().index()] += 1;
        }
        for (c, p) in counts.iter().zip(want) {
            let freq = *c as f64 / half.len() as f64;
            assert!((freq - p).abs() <= 0.02, "{counts:?} vs {want:?}");
        }
    }
}
