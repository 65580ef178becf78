use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Priority,
    Selector,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Priority => "priority",
            PolicyKind::Selector => "selector",
        })
    }
}

/// First 16 hex digits of the SHA-256 of the source text.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArtifactId(String);

impl ArtifactId {
    pub fn of(source: &str) -> Self {
        let digest = Sha256::digest(source.as_bytes());
        Self(hex::encode(&digest[..8]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ArtifactId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "reason", rename_all = "lowercase")]
pub enum Status {
    Uncompiled,
    Valid,
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    /// Where the score was measured, e.g. `scenario:3`.
    pub context: String,
    pub j: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyArtifact {
    pub id: ArtifactId,
    pub kind: PolicyKind,
    pub source: String,
    pub status: Status,
    pub scores: Vec<ScoreRecord>,
}

impl PolicyArtifact {
    pub fn new(kind: PolicyKind, source: impl Into<String>) -> Self {
        let source = source.into();
        Self { id: ArtifactId::of(&source), kind, source, status: Status::Uncompiled, scores: Vec::new() }
    }

    pub fn priority(source: impl Into<String>) -> Self {
        Self::new(PolicyKind::Priority, source)
    }

    pub fn selector(source: impl Into<String>) -> Self {
        Self::new(PolicyKind::Selector, source)
    }

    pub fn is_valid(&self) -> bool {
        self.status == Status::Valid
    }

    pub fn record(&mut self, context: impl Into<String>, j: f64) {
        self.scores.push(ScoreRecord { context: context.into(), j });
    }
}
