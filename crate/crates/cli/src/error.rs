use std::path::{Path, PathBuf};

use mico_core::metrics::MetricError;
use mico_core::oracle::OracleError;
use mico_core::sim::{ReplayError, SimError};
use mico_core::trace::TraceError;
use mico_engine::EngineError;
use mico_llm::LlmError;
use mico_policy::StoreError;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing {}; run `mico {stage}` first", path.display())]
    MissingInput { path: PathBuf, stage: &'static str },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Usage(String),
    #[error("replay mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::MissingInput { .. } => "missing_input",
            CliError::Json { .. } => "artifact",
            CliError::Usage(_) => "usage",
            CliError::Mismatch(_) => "mismatch",
            CliError::Trace(_) => "trace",
            CliError::Sim(_) => "simulation",
            CliError::Engine(_) => "engine",
            CliError::Llm(_) => "backend",
            CliError::Store(_) => "store",
            CliError::Replay(_) => "replay",
            CliError::Oracle(_) => "oracle",
            CliError::Metric(_) => "metric",
        }
    }

    pub fn is_backend(&self) -> bool {
        match self {
            CliError::Llm(e) => matches!(e, LlmError::BackendUnavailable(_) | LlmError::Transcript(_)),
            CliError::Engine(e) => e.is_backend(),
            _ => false,
        }
    }

    /// 3 when the sampling backend failed, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        if self.is_backend() {
            EXIT_BACKEND
        } else {
            EXIT_VALIDATION
        }
    }

    /// Machine-readable error record written to stderr.
    pub fn record(&self, stage: &str) -> serde_json::Value {
        json!({
            "stage": stage,
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Llm(LlmError::BackendUnavailable("down".into())).exit_code(), 3);
        assert_eq!(CliError::Engine(EngineError::Llm(LlmError::BackendUnavailable("down".into()))).exit_code(), 3);
        assert_eq!(CliError::Llm(LlmError::ExtractionFailed).exit_code(), 2);
        let r = CliError::Usage("bad".into()).record("mine");
        assert_eq!(r["exit_code"], 2);
        assert_eq!(r["stage"], "mine");
    }
}
