//! The learning pipeline: per-scenario option mining, option pruning,
//! master selector evolution, and hierarchical execution of the result.

pub mod composer;
pub mod context;
pub mod evolve;
pub mod exec;
pub mod miner;
pub mod report;

use mico_core::sim::SimError;
use mico_core::trace::TraceError;
use mico_llm::LlmError;
use mico_policy::{ArtifactId, PolicyVmError};
use thiserror::Error;

pub use composer::{
    all_training_starts, build_score_matrix, evaluate_selector, learn_master, prune, ComposedMaster, ComposerConfig,
    MasterPolicy, PruneConfig, ScoreMatrix,
};
pub use context::{context_features, ContextParams};
pub use evolve::{Candidate, EvolutionLedger, Population};
pub use exec::{option_terminated, run_hierarchical, ConstantSelector, ExecConfig, HierPolicy, HierTrace, OptionSelector, Segment, TermMode};
pub use miner::{
    evaluate_artifact, evaluate_policy, mine_options, mine_scenario, sample_offsets, test_start, training_starts, MinedScenario,
    MinerConfig, MiningReport, OptionDef, OptionLibrary, ScenarioFailure,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("policy {id} is not valid: {reason}")]
    InvalidPolicy { id: ArtifactId, reason: String },
    #[error("episode from offset {offset}: {source}")]
    Episode { offset: usize, source: SimError },
    #[error("option {k} on scenario {j}: {source}")]
    Cell { k: usize, j: usize, source: Box<EngineError> },
    #[error("selector fault: {0}")]
    SelectorFault(PolicyVmError),
    #[error("no option survives pruning")]
    EmptyRetention,
    #[error("{} scenario(s) produced no valid policy", .0.failed.len())]
    PartialLibrary(Box<MiningReport>),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Policy(#[from] PolicyVmError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

impl EngineError {
    /// The sampling backend failed, as opposed to a candidate or the input.
    pub fn is_backend(&self) -> bool {
        match self {
            EngineError::Llm(e) => matches!(e, LlmError::BackendUnavailable(_) | LlmError::Transcript(_)),
            EngineError::Cell { source, .. } => source.is_backend(),
            EngineError::PartialLibrary(r) => !r.failed.is_empty() && r.failed.iter().all(|f| f.backend),
            _ => false,
        }
    }
}
