use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{ArtifactId, PolicyArtifact, PolicyKind, ScoreRecord, Status};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest line {line}: {source}")]
    Manifest { line: usize, source: serde_json::Error },
    #[error("unknown artifact {0}")]
    Unknown(ArtifactId),
    #[error("source of {0} does not hash to its id")]
    Corrupt(ArtifactId),
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: ArtifactId,
    kind: PolicyKind,
    status: Status,
    scores: Vec<ScoreRecord>,
}

/// Directory of `<id>.rhai` sources plus `manifest.jsonl`, one entry per
/// artifact sorted by id.
#[derive(Debug, Clone)]
pub struct ArtifactStore {
    root: PathBuf,
}

const MANIFEST: &str = "manifest.jsonl";

impl ArtifactStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn source_path(&self, id: &ArtifactId) -> PathBuf {
        self.root.join(format!("{id}.rhai"))
    }

    fn read_manifest(&self) -> Result<Vec<ManifestEntry>, StoreError> {
        let path = self.root.join(MANIFEST);
        if !path.exists() {
            return Ok(Vec::new());
        }
        BufReader::new(fs::File::open(path)?)
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .map(|(i, l)| serde_json::from_str(&l?).map_err(|source| StoreError::Manifest { line: i + 1, source }))
            .collect()
    }

    fn write_manifest(&self, mut entries: Vec<ManifestEntry>) -> Result<(), StoreError> {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        let tmp = self.root.join(format!("{MANIFEST}.tmp"));
        let mut f = fs::File::create(&tmp)?;
        for e in &entries {
            let line = serde_json::to_string(e).map_err(|source| StoreError::Manifest { line: 0, source })?;
            writeln!(f, "{line}")?;
        }
        f.sync_all()?;
        fs::rename(tmp, self.root.join(MANIFEST))?;
        Ok(())
    }

    /// Inserts or replaces the artifact with the same id.
    pub fn put(&self, artifact: &PolicyArtifact) -> Result<(), StoreError> {
        self.put_all(std::slice::from_ref(artifact))
    }

    pub fn put_all(&self, artifacts: &[PolicyArtifact]) -> Result<(), StoreError> {
        let mut entries = self.read_manifest()?;
        for a in artifacts {
            fs::write(self.source_path(&a.id), &a.source)?;
            entries.retain(|e| e.id != a.id);
            entries.push(ManifestEntry { id: a.id.clone(), kind: a.kind, status: a.status.clone(), scores: a.scores.clone() });
        }
        self.write_manifest(entries)
    }

    pub fn get(&self, id: &ArtifactId) -> Result<PolicyArtifact, StoreError> {
        let entry = self
            .read_manifest()?
            .into_iter()
            .find(|e| &e.id == id)
            .ok_or_else(|| StoreError::Unknown(id.clone()))?;
        self.load(entry)
    }

    fn load(&self, e: ManifestEntry) -> Result<PolicyArtifact, StoreError> {
        let source = fs::read_to_string(self.source_path(&e.id))?;
        if ArtifactId::of(&source) != e.id {
            return Err(StoreError::Corrupt(e.id));
        }
        Ok(PolicyArtifact { id: e.id, kind: e.kind, source, status: e.status, scores: e.scores })
    }

    /// All artifacts in id order.
    pub fn list(&self) -> Result<Vec<PolicyArtifact>, StoreError> {
        self.read_manifest()?.into_iter().map(|e| self.load(e)).collect()
    }
}
