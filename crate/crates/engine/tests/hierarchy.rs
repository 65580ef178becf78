use mico_core::sim::run_episode;
use mico_core::{Baseline, Scored};
use mico_engine::{run_hierarchical, ConstantSelector, ExecConfig, TermMode};
use mico_policy::{fixtures, CompiledPolicy, PolicyKind, Sandbox};
use mico_testkit::{random_instance, regime_cluster, two_regime, InstanceSpec};
use proptest::prelude::*;

fn compile(kind: PolicyKind, src: &str) -> CompiledPolicy {
    Sandbox::default().compile_source(kind, src).unwrap()
}

#[test]
fn single_option_collapses_to_flat_episode() {
    let spec = InstanceSpec::medium();
    let options = [Baseline::BestFit];
    for seed in 0..300 {
        let (cluster, seq) = random_instance(&spec, seed);
        let flat = run_episode(&Baseline::BestFit, &cluster, &seq, 0).unwrap();
        for term_mode in [TermMode::FixedLength, TermMode::Geometric { p: 0.3 }] {
            let cfg = ExecConfig { tau_max: 1 + seed as usize % 7, term_mode, seed, ..Default::default() };
            let (hier, trace) = run_hierarchical(&ConstantSelector(1), &options, &cluster, &seq, 0, &cfg).unwrap();
            assert_eq!(hier.scheduled_length, flat.scheduled_length, "seed {seed}");
            assert_eq!(hier.failed, flat.failed);
            assert_eq!(trace.scheduled_length, flat.scheduled_length);
        }
    }
}

proptest! {
    #[test]
    fn segments_partition_the_creates(seed in 0u64..10_000, tau in 1usize..6, p in 0.05f64..1.0) {
        let (cluster, seq) = random_instance(&InstanceSpec::medium(), seed);
        let options = [Baseline::BestFit, Baseline::FirstFit];
        let cfg = ExecConfig { tau_max: tau, term_mode: TermMode::Geometric { p }, seed, ..Default::default() };
        let (r, trace) = run_hierarchical(&ConstantSelector(2), &options, &cluster, &seq, 0, &cfg).unwrap();
        let placed: usize = trace.segments.iter().map(|s| s.placed).sum();
        prop_assert_eq!(placed, r.scheduled_length);
        prop_assert!(trace.segments.iter().all(|s| s.duration >= 1 && s.duration <= tau && s.option == 2));
    }
}

struct RegimeRuns {
    small_first: usize,
    large_first: usize,
    switching: usize,
    best_fit: usize,
    creates: usize,
}

fn regime_runs(small: usize, easy: usize, hard: usize) -> RegimeRuns {
    let cluster = regime_cluster();
    let seq = two_regime(small, easy, hard);
    let options = [
        Scored(compile(PolicyKind::Priority, fixtures::SEED_PRIORITY)),
        Scored(compile(PolicyKind::Priority, fixtures::SPREAD)),
    ];
    let selector = compile(PolicyKind::Selector, fixtures::REGIME_SELECTOR);
    let cfg = ExecConfig::default();
    let run = |k: usize| run_hierarchical(&ConstantSelector(k), &options, &cluster, &seq, 0, &cfg).unwrap().0.scheduled_length;
    RegimeRuns {
        small_first: run(1),
        large_first: run(2),
        switching: run_hierarchical(&selector, &options, &cluster, &seq, 0, &cfg).unwrap().0.scheduled_length,
        best_fit: run_episode(&Baseline::BestFit, &cluster, &seq, 0).unwrap().scheduled_length,
        creates: seq.creates(),
    }
}

#[test]
fn specialists_beat_best_fit_in_their_regime() {
    let cluster = regime_cluster();
    let small = two_regime(20, 0, 0);
    let hard = two_regime(0, 0, 20);
    let bf = |seq| run_episode(&Baseline::BestFit, &cluster, seq, 0).unwrap().scheduled_length;
    let seed = Scored(compile(PolicyKind::Priority, fixtures::SEED_PRIORITY));
    let spread = Scored(compile(PolicyKind::Priority, fixtures::SPREAD));
    assert!(run_episode(&seed, &cluster, &small, 0).unwrap().scheduled_length > bf(&small));
    assert!(run_episode(&spread, &cluster, &hard, 0).unwrap().scheduled_length > bf(&hard));
}

#[test]
fn switching_selector_beats_constant_selectors() {
    let r = regime_runs(20, 60, 20);
    assert!(r.switching > r.small_first.max(r.large_first), "{} vs {} / {}", r.switching, r.small_first, r.large_first);
    assert!(r.switching >= r.best_fit);
    assert_eq!(r.switching, r.creates);
}
