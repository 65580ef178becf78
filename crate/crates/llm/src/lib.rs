//! Prompt construction and sampling for generated policies.
//!
//! Prompts follow the scheduler and context-aware scheduler templates with
//! the code dialect switched to Rhai. Backends turn a prompt into a raw
//! response; the [`Gateway`] extracts code from it, caps concurrency and
//! optionally writes a transcript per call.

mod backend;
mod gateway;
mod prompt;
pub mod text;

use mico_policy::PolicyKind;
use thiserror::Error;

pub use backend::{
    CompletionBackend, MockBackend, Mutation, RemoteBackend, SamplerConfig, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL,
};
pub use gateway::Gateway;
pub use prompt::{render_composer_prompt, render_miner_prompt, Exemplar, PromptBundle};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("no exemplars to put in the prompt")]
    EmptyExemplars,
    #[error("exemplar is a {found} policy, expected {expected}")]
    WrongKind { expected: PolicyKind, found: PolicyKind },
    #[error("exemplar declares no `{0}` entry")]
    MissingEntry(&'static str),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("response exceeded the token budget of {limit}")]
    BudgetExceeded { limit: u32 },
    #[error("no code block found in the response")]
    ExtractionFailed,
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("transcript: {0}")]
    Transcript(String),
}

impl From<std::io::Error> for LlmError {
    fn from(e: std::io::Error) -> Self {
        LlmError::Transcript(e.to_string())
    }
}
