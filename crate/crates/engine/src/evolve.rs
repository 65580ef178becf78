//! The generate, validate, evaluate, select loop shared by the miner and
//! the composer.

use mico_llm::{Gateway, LlmError, PromptBundle};
use mico_policy::{validate, ArtifactId, CompiledPolicy, PolicyArtifact, PolicyKind, ProbeSuite, Sandbox, Status};
use serde::{Deserialize, Serialize};

use crate::EngineError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub artifact: PolicyArtifact,
    pub j: f64,
    /// Order of arrival; breaks ties in favour of the incumbent.
    pub seen: usize,
}

/// The retained top-M.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub top_m: usize,
    pub members: Vec<Candidate>,
    seen: usize,
}

impl Population {
    pub fn new(top_m: usize) -> Self {
        Self { top_m: top_m.max(1), members: Vec::new(), seen: 0 }
    }

    /// Adds a scored candidate and keeps the best `top_m` by (J desc, arrival).
    pub fn offer(&mut self, artifact: PolicyArtifact, j: f64) {
        self.members.push(Candidate { artifact, j, seen: self.seen });
        self.seen += 1;
        self.members.sort_by(|a, b| b.j.total_cmp(&a.j).then(a.seen.cmp(&b.seen)));
        self.members.truncate(self.top_m);
    }

    pub fn best(&self) -> Option<&Candidate> {
        self.members.first()
    }

    pub fn best_j(&self) -> f64 {
        self.best().map_or(f64::NEG_INFINITY, |c| c.j)
    }

    /// Best first.
    pub fn artifacts(&self) -> Vec<PolicyArtifact> {
        self.members.iter().map(|c| c.artifact.clone()).collect()
    }

    pub fn seen(&self) -> usize {
        self.seen
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub iteration: usize,
    pub id: Option<ArtifactId>,
    /// False for the seed, which is not a generated sample.
    pub sampled: bool,
    pub valid: bool,
    pub reason: Option<String>,
    pub j: Option<f64>,
}

/// Every candidate seen by one loop, plus the best J after each iteration
/// (index 0 is the seed).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvolutionLedger {
    pub context: String,
    pub entries: Vec<LedgerEntry>,
    pub best_j: Vec<f64>,
}

impl EvolutionLedger {
    pub fn sampled(&self) -> usize {
        self.entries.iter().filter(|e| e.sampled).count()
    }

    pub fn valid(&self) -> usize {
        self.entries.iter().filter(|e| e.sampled && e.valid).count()
    }

    fn invalid(&mut self, iteration: usize, id: Option<ArtifactId>, reason: String) {
        self.entries.push(LedgerEntry { iteration, id, sampled: true, valid: false, reason: Some(reason), j: None });
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvolveParams {
    pub iterations: usize,
    pub top_m: usize,
    pub candidates: usize,
    pub nonce_base: u64,
}

/// Binds the gateway and validation to a prompt renderer and an evaluator.
pub struct Evolver<'a, R, E> {
    pub kind: PolicyKind,
    pub gateway: &'a Gateway,
    pub sandbox: &'a Sandbox,
    pub probes: &'a ProbeSuite,
    pub render: R,
    pub evaluate: E,
    pub context: String,
}

impl<R, E> Evolver<'_, R, E>
where
    R: Fn(&[PolicyArtifact]) -> Result<PromptBundle, LlmError>,
    E: Fn(&CompiledPolicy) -> Result<f64, EngineError>,
{
    fn score(&self, artifact: &mut PolicyArtifact) -> Result<f64, EngineError> {
        let report = validate(self.sandbox, artifact, self.probes);
        if !report.is_valid() {
            let Status::Invalid(reason) = report.verdict else { unreachable!() };
            return Err(EngineError::InvalidPolicy { id: artifact.id.clone(), reason });
        }
        let compiled = self.sandbox.compile(artifact)?;
        let j = (self.evaluate)(&compiled)?;
        artifact.record(self.context.clone(), j);
        Ok(j)
    }

    /// Validates and scores the seed; it must be valid.
    pub fn seed(&self, mut seed: PolicyArtifact, top_m: usize) -> Result<(Population, EvolutionLedger), EngineError> {
        if seed.kind != self.kind {
            return Err(EngineError::InvalidConfig(format!("seed is a {} policy, expected {}", seed.kind, self.kind)));
        }
        let j = self.score(&mut seed)?;
        let mut ledger = EvolutionLedger { context: self.context.clone(), ..Default::default() };
        ledger.entries.push(LedgerEntry { iteration: 0, id: Some(seed.id.clone()), sampled: false, valid: true, reason: None, j: Some(j) });
        let mut pop = Population::new(top_m);
        pop.offer(seed, j);
        ledger.best_j.push(pop.best_j());
        Ok((pop, ledger))
    }

    /// One round: prompt from the current top-M, sample, validate, score,
    /// merge. Returns how many new candidates were valid.
    pub fn improve_step(
        &self,
        pop: &mut Population,
        ledger: &mut EvolutionLedger,
        iteration: usize,
        params: &EvolveParams,
    ) -> Result<usize, EngineError> {
        let prompt = (self.render)(&pop.artifacts())?;
        let mut fresh = 0;
        for c in 0..params.candidates {
            let nonce = params.nonce_base + (iteration * params.candidates + c) as u64;
            let source = match self.gateway.sample(&prompt, nonce) {
                Ok(s) => s,
                Err(e @ (LlmError::ExtractionFailed | LlmError::BudgetExceeded { .. })) => {
                    ledger.invalid(iteration, None, e.to_string());
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let mut artifact = PolicyArtifact::new(self.kind, source);
            match self.score(&mut artifact) {
                Ok(j) => {
                    ledger.entries.push(LedgerEntry {
                        iteration,
                        id: Some(artifact.id.clone()),
                        sampled: true,
                        valid: true,
                        reason: None,
                        j: Some(j),
                    });
                    pop.offer(artifact, j);
                    fresh += 1;
                }
                Err(e @ (EngineError::InvalidPolicy { .. } | EngineError::Policy(_) | EngineError::Sim(_))) => {
                    ledger.invalid(iteration, Some(artifact.id.clone()), e.to_string());
                }
                Err(e) => return Err(e),
            }
        }
        ledger.best_j.push(pop.best_j());
        Ok(fresh)
    }

    pub fn run(&self, seed: PolicyArtifact, params: &EvolveParams) -> Result<(Population, EvolutionLedger), EngineError> {
        let (mut pop, mut ledger) = self.seed(seed, params.top_m)?;
        for it in 1..=params.iterations {
            self.improve_step(&mut pop, &mut ledger, it, params)?;
        }
        Ok((pop, ledger))
    }
}
