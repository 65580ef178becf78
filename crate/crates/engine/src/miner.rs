use mico_core::par::Parallelism;
use mico_core::sim::{run_episode, ClusterSpec};
use mico_core::trace::{split_train_test, Scenario, SplitSpec, TraceError};
use mico_core::Scored;
use mico_llm::{render_miner_prompt, Gateway};
use mico_policy::{fixtures, CompiledPolicy, PolicyArtifact, PolicyKind, ProbeSuite, Sandbox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evolve::{EvolutionLedger, EvolveParams, Evolver, Population};
use crate::exec::TermMode;
use crate::EngineError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinerConfig {
    pub iterations: usize,
    pub top_m: usize,
    /// Sampled start offsets per evaluation, `n_s`.
    pub n_s: usize,
    pub candidates: usize,
    pub seed_source: String,
    pub seed: u64,
    pub split: SplitSpec,
    pub tau_max: usize,
    pub term_mode: TermMode,
    pub parallelism: Parallelism,
}

impl Default for MinerConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            top_m: 2,
            n_s: 30,
            candidates: 1,
            seed_source: fixtures::SEED_PRIORITY.to_string(),
            seed: 0,
            split: SplitSpec::default(),
            tau_max: 50,
            term_mode: TermMode::FixedLength,
            parallelism: Parallelism::default(),
        }
    }
}

impl MinerConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.top_m == 0 || self.n_s == 0 || self.candidates == 0 || self.tau_max == 0 {
            return Err(EngineError::InvalidConfig("top_m, n_s, candidates and tau_max must be positive".into()));
        }
        Ok(())
    }
}

/// An intra-option policy and its termination parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptionDef {
    /// 1-based scenario the policy was mined on.
    pub scenario: usize,
    pub policy: PolicyArtifact,
    pub tau_max: usize,
    pub term_mode: TermMode,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptionLibrary {
    pub options: Vec<OptionDef>,
}

impl OptionLibrary {
    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    pub fn subset(&self, keep: &[usize]) -> OptionLibrary {
        OptionLibrary { options: keep.iter().map(|&k| self.options[k].clone()).collect() }
    }

    pub fn compile(&self, sandbox: &Sandbox) -> Result<Vec<Scored<CompiledPolicy>>, EngineError> {
        self.options.iter().map(|o| Ok(Scored(sandbox.compile(&o.policy)?))).collect()
    }
}

/// Training starts of a scenario, relative to its first request. Scenarios
/// shorter than the number of starting points train from offset 0 only.
pub fn training_starts(scenario: &Scenario, split: SplitSpec) -> Result<Vec<usize>, EngineError> {
    match split_train_test(scenario, split) {
        Ok(s) if !s.train.is_empty() => Ok(s.train),
        Ok(s) => Ok(vec![s.test]),
        Err(TraceError::ScenarioTooShort { .. }) if !scenario.is_empty() => Ok(vec![0]),
        Err(e) => Err(e.into()),
    }
}

/// Held-out start of a scenario; 0 when the scenario is too short to split.
pub fn test_start(scenario: &Scenario, split: SplitSpec) -> Result<usize, EngineError> {
    match split_train_test(scenario, split) {
        Ok(s) => Ok(s.test),
        Err(TraceError::ScenarioTooShort { .. }) if !scenario.is_empty() => Ok(0),
        Err(e) => Err(e.into()),
    }
}

/// `n_s` offsets drawn with replacement from `starts`.
pub fn sample_offsets(starts: &[usize], n_s: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n_s).map(|_| starts[rng.random_range(0..starts.len())]).collect()
}

/// Mean scheduled length of the policy over `n_s` seeded training offsets of
/// the scenario. Episodes end at the first failure or at the scenario end.
pub fn evaluate_policy(
    policy: &CompiledPolicy,
    scenario: &Scenario,
    cluster: &ClusterSpec,
    cfg: &MinerConfig,
) -> Result<f64, EngineError> {
    let starts = training_starts(scenario, cfg.split)?;
    let offsets = sample_offsets(&starts, cfg.n_s, cfg.seed, scenario.index as u64);
    let scored = Scored(policy.clone());
    let lengths = cfg.parallelism.try_map(&offsets, |&off| {
        run_episode(&scored, cluster, &scenario.requests, off)
            .map(|r| r.scheduled_length)
            .map_err(|source| EngineError::Episode { offset: off, source })
    })?;
    Ok(lengths.iter().sum::<usize>() as f64 / lengths.len() as f64)
}

/// Same as [`evaluate_policy`] for an artifact that must already be valid.
pub fn evaluate_artifact(
    artifact: &PolicyArtifact,
    sandbox: &Sandbox,
    scenario: &Scenario,
    cluster: &ClusterSpec,
    cfg: &MinerConfig,
) -> Result<f64, EngineError> {
    if !artifact.is_valid() {
        return Err(EngineError::InvalidPolicy { id: artifact.id.clone(), reason: "not validated".into() });
    }
    evaluate_policy(&sandbox.compile(artifact)?, scenario, cluster, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinedScenario {
    pub option: OptionDef,
    pub population: Population,
    pub ledger: EvolutionLedger,
}

pub fn mine_scenario(
    scenario: &Scenario,
    cluster: &ClusterSpec,
    gateway: &Gateway,
    sandbox: &Sandbox,
    cfg: &MinerConfig,
) -> Result<MinedScenario, EngineError> {
    cfg.validate()?;
    let probes = ProbeSuite::standard(1);
    let evolver = Evolver {
        kind: PolicyKind::Priority,
        gateway,
        sandbox,
        probes: &probes,
        render: render_miner_prompt,
        evaluate: |p: &CompiledPolicy| evaluate_policy(p, scenario, cluster, cfg),
        context: format!("scenario:{}", scenario.index),
    };
    let params = EvolveParams {
        iterations: cfg.iterations,
        top_m: cfg.top_m,
        candidates: cfg.candidates,
        nonce_base: (scenario.index as u64) << 32,
    };
    let (population, ledger) = evolver.run(PolicyArtifact::priority(cfg.seed_source.clone()), &params)?;
    let best = population.best().expect("seeded population is never empty").artifact.clone();
    Ok(MinedScenario {
        option: OptionDef { scenario: scenario.index, policy: best, tau_max: cfg.tau_max, term_mode: cfg.term_mode },
        population,
        ledger,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MiningReport {
    pub library: OptionLibrary,
    pub mined: Vec<MinedScenario>,
    /// Scenarios that produced no valid policy.
    pub failed: Vec<ScenarioFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFailure {
    pub scenario: usize,
    pub reason: String,
    /// The sampling backend, not the candidate, was at fault.
    pub backend: bool,
}

impl MiningReport {
    pub fn ledgers(&self) -> impl Iterator<Item = &EvolutionLedger> {
        self.mined.iter().map(|m| &m.ledger)
    }
}

/// Mines one option per scenario. Scenarios fail independently; if any
/// fails the partial report comes back inside [`EngineError::PartialLibrary`].
pub fn mine_options(
    scenarios: &[Scenario],
    cluster: &ClusterSpec,
    gateway: &Gateway,
    sandbox: &Sandbox,
    cfg: &MinerConfig,
) -> Result<MiningReport, EngineError> {
    if scenarios.is_empty() {
        return Err(EngineError::InvalidConfig("no scenarios to mine".into()));
    }
    cfg.validate()?;
    let results = cfg.parallelism.map(scenarios, |s| mine_scenario(s, cluster, gateway, sandbox, cfg));
    let mut report = MiningReport::default();
    for (s, r) in scenarios.iter().zip(results) {
        match r {
            Ok(m) => {
                report.library.options.push(m.option.clone());
                report.mined.push(m);
            }
            Err(e) => report.failed.push(ScenarioFailure { scenario: s.index, reason: e.to_string(), backend: e.is_backend() }),
        }
    }
    if report.failed.is_empty() {
        Ok(report)
    } else {
        Err(EngineError::PartialLibrary(Box::new(report)))
    }
}
