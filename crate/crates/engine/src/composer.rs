use std::fmt::Write as _;

use mico_core::par::Parallelism;
use mico_core::sim::ClusterSpec;
use mico_core::trace::{Request, Scenario, SplitSpec};
use mico_core::Scored;
use mico_llm::{render_composer_prompt, Gateway};
use mico_policy::{fixtures, CompiledPolicy, PolicyArtifact, PolicyKind, ProbeSuite, Sandbox};
use serde::{Deserialize, Serialize};

use crate::evolve::{EvolutionLedger, EvolveParams, Evolver, Population};
use crate::exec::{run_hierarchical, ExecConfig, HierPolicy};
use crate::miner::{evaluate_policy, sample_offsets, training_starts, MinerConfig, OptionDef, OptionLibrary};
use crate::EngineError;

/// `entries[k][j]`: score of option `k` on scenario `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    entries: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self, EngineError> {
        let k = entries.len();
        if k == 0 || entries.iter().any(|r| r.len() != k) {
            return Err(EngineError::InvalidConfig(format!("score matrix must be square and non-empty, got {k} rows")));
        }
        if entries.iter().flatten().any(|v| !v.is_finite()) {
            return Err(EngineError::InvalidConfig("score matrix entries must be finite".into()));
        }
        Ok(Self { entries })
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.entries[k][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.entries
    }

    /// Column maximum, `J*(S_j)`.
    pub fn best(&self, j: usize) -> f64 {
        self.entries.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Column mean, `J̄(S_j)`.
    pub fn mean(&self, j: usize) -> f64 {
        self.entries.iter().map(|r| r[j]).sum::<f64>() / self.k() as f64
    }

    /// Tab-separated text; floats use the shortest exact representation.
    pub fn to_text(&self) -> String {
        let mut out = format!("# mico-score-matrix v1\n# k {}\n", self.k());
        for row in &self.entries {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", cells.join("\t"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, EngineError> {
        let rows = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .map(|l| {
                l.split('\t')
                    .map(|c| c.trim().parse::<f64>().map_err(|e| EngineError::InvalidConfig(format!("score matrix cell {c:?}: {e}"))))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(rows)
    }
}

/// Scores every option on every scenario with the miner's evaluation.
pub fn build_score_matrix(
    library: &OptionLibrary,
    scenarios: &[Scenario],
    cluster: &ClusterSpec,
    cfg: &MinerConfig,
    sandbox: &Sandbox,
) -> Result<ScoreMatrix, EngineError> {
    if library.len() != scenarios.len() {
        return Err(EngineError::InvalidConfig(format!(
            "{} options for {} scenarios",
            library.len(),
            scenarios.len()
        )));
    }
    let compiled = library.compile(sandbox)?;
    let k = library.len();
    let cells = cfg.parallelism.map_range(k * k, |idx| {
        let (row, col) = (idx / k, idx % k);
        evaluate_policy(&compiled[row].0, &scenarios[col], cluster, cfg)
            .map_err(|e| EngineError::Cell { k: row, j: col, source: Box::new(e) })
    });
    let flat = cells.into_iter().collect::<Result<Vec<f64>, _>>()?;
    ScoreMatrix::new(flat.chunks(k).map(<[f64]>::to_vec).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self { q1: 0.95, q2: 0.95, q3: 0.5 }
    }
}

/// Keeps option `k` iff it is near the best on its own scenario and clears
/// the mean on at least a `q3` share of all scenarios. Indices are 0-based.
pub fn prune(matrix: &ScoreMatrix, cfg: &PruneConfig) -> Result<Vec<usize>, EngineError> {
    let k = matrix.k();
    let best: Vec<f64> = (0..k).map(|j| matrix.best(j)).collect();
    let mean: Vec<f64> = (0..k).map(|j| matrix.mean(j)).collect();
    let kept: Vec<usize> = (0..k)
        .filter(|&i| {
            let own = matrix.get(i, i) >= cfg.q1 * best[i];
            let robust = (0..k).filter(|&j| matrix.get(i, j) >= cfg.q2 * mean[j]).count() as f64 / k as f64;
            own && robust >= cfg.q3
        })
        .collect();
    if kept.is_empty() {
        Err(EngineError::EmptyRetention)
    } else {
        Ok(kept)
    }
}

/// A selector and the options its indices refer to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MasterPolicy {
    pub selector: PolicyArtifact,
    /// Selector index `i` (1-based) runs `options[i - 1]`.
    pub options: OptionLibrary,
}

impl MasterPolicy {
    pub fn compile(&self, sandbox: &Sandbox) -> Result<HierPolicy, EngineError> {
        Ok(HierPolicy { selector: sandbox.compile(&self.selector)?, options: self.options.compile(sandbox)? })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComposerConfig {
    pub iterations: usize,
    pub top_m: usize,
    pub n_s: usize,
    pub candidates: usize,
    pub seed_source: String,
    pub seed: u64,
    pub exec: ExecConfig,
    pub parallelism: Parallelism,
}

impl Default for ComposerConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            top_m: 2,
            n_s: 30,
            candidates: 1,
            seed_source: fixtures::SEED_SELECTOR.to_string(),
            seed: 0,
            exec: ExecConfig::default(),
            parallelism: Parallelism::default(),
        }
    }
}

/// Absolute training starts of every scenario.
pub fn all_training_starts(scenarios: &[Scenario], split: SplitSpec) -> Result<Vec<usize>, EngineError> {
    let mut out = Vec::new();
    for s in scenarios {
        out.extend(training_starts(s, split)?.into_iter().map(|o| s.range.start + o));
    }
    Ok(out)
}

/// Mean hierarchical scheduled length of `selector` over `n_s` offsets drawn
/// from `starts` of the whole sequence.
pub fn evaluate_selector(
    selector: &CompiledPolicy,
    options: &[Scored<CompiledPolicy>],
    requests: &[Request],
    starts: &[usize],
    cluster: &ClusterSpec,
    cfg: &ComposerConfig,
) -> Result<f64, EngineError> {
    let offsets = sample_offsets(starts, cfg.n_s, cfg.seed, u64::MAX);
    let lengths = cfg.parallelism.try_map(&offsets, |&off| {
        run_hierarchical(selector, options, cluster, requests, off, &cfg.exec).map(|(r, _)| r.scheduled_length)
    })?;
    Ok(lengths.iter().sum::<usize>() as f64 / lengths.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposedMaster {
    pub master: MasterPolicy,
    pub population: Population,
    pub ledger: EvolutionLedger,
}

/// Evolves a selector over the pruned options.
pub fn learn_master(
    pruned: &[OptionDef],
    requests: &[Request],
    starts: &[usize],
    cluster: &ClusterSpec,
    gateway: &Gateway,
    sandbox: &Sandbox,
    cfg: &ComposerConfig,
) -> Result<ComposedMaster, EngineError> {
    if pruned.is_empty() || starts.is_empty() {
        return Err(EngineError::InvalidConfig("composition needs options and starting points".into()));
    }
    if cfg.top_m == 0 || cfg.n_s == 0 || cfg.candidates == 0 {
        return Err(EngineError::InvalidConfig("top_m, n_s and candidates must be positive".into()));
    }
    cfg.exec.validate()?;
    let library = OptionLibrary { options: pruned.to_vec() };
    let options = library.compile(sandbox)?;
    let n = options.len();
    let probes = ProbeSuite::standard(n);
    let evolver = Evolver {
        kind: PolicyKind::Selector,
        gateway,
        sandbox,
        probes: &probes,
        render: |top: &[PolicyArtifact]| render_composer_prompt(top, n),
        evaluate: |sel: &CompiledPolicy| evaluate_selector(sel, &options, requests, starts, cluster, cfg),
        context: "master".into(),
    };
    let params = EvolveParams { iterations: cfg.iterations, top_m: cfg.top_m, candidates: cfg.candidates, nonce_base: 0 };
    let (population, ledger) = evolver.run(PolicyArtifact::selector(cfg.seed_source.clone()), &params)?;
    let selector = population.best().expect("seeded population is never empty").artifact.clone();
    Ok(ComposedMaster { master: MasterPolicy { selector, options: library }, population, ledger })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> ScoreMatrix {
        ScoreMatrix::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn column_stats() {
        let s = m(&[&[1.0, 4.0], &[3.0, 2.0]]);
        assert_eq!((s.best(0), s.mean(0)), (3.0, 2.0));
        assert_eq!((s.best(1), s.mean(1)), (4.0, 3.0));
        assert!(ScoreMatrix::new(vec![vec![1.0, 2.0]]).is_err());
        assert_eq!(ScoreMatrix::from_text(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn degenerate_and_vacuous() {
        let one = m(&[&[7.0]]);
        assert_eq!((one.best(0), one.mean(0)), (7.0, 7.0));
        assert_eq!(prune(&one, &PruneConfig::default()).unwrap(), [0]);
        let s = m(&[&[1.0, 9.0, 2.0], &[5.0, 1.0, 1.0], &[0.0, 0.0, 3.0]]);
        assert_eq!(prune(&s, &PruneConfig { q1: 0.0, q2: 0.0, q3: 0.0 }).unwrap(), [0, 1, 2]);
        assert!(matches!(prune(&s, &PruneConfig { q1: 1.01, ..Default::default() }), Err(EngineError::EmptyRetention)));
    }

    #[test]
    fn specialists_survive_generalist_drops() {
        // Row 2 is robust but weak on its own scenario.
        let s = m(&[&[10.0, 5.0, 6.0], &[5.0, 10.0, 5.0], &[8.0, 8.0, 4.0]]);
        let kept = prune(&s, &PruneConfig::default()).unwrap();
        assert_eq!(kept, [0, 1]);
    }
}
