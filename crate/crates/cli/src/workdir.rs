//! Layout of a run directory. Each stage reads the files of the stages
//! before it and writes its own.
//!
//! ```text
//! trace.csv          ingest | synth   canonical request stream
//! scenarios.json     split            scenario slices
//! store/             mine, compose    <id>.rhai sources + manifest.jsonl
//! options.json       mine             one option per scenario
//! mining.json        mine             populations and evolution ledgers
//! scores.txt         prune            cross-scenario score matrix
//! pruned.json        prune            retained options
//! composition.json   compose          master selector, population, ledger
//! report.json        evaluate         report bundle
//! report.txt, bars.tsv, boxplot.tsv, hierarchy.tsv
//! logs/              evaluate --record  replay logs
//! transcripts/       mine, compose    backend transcripts when enabled
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use mico_core::trace::{parse_trace, RequestSequence, TraceMapping};
use mico_policy::ArtifactStore;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::CliError;

pub const TRACE: &str = "trace.csv";
pub const SCENARIOS: &str = "scenarios.json";
pub const OPTIONS: &str = "options.json";
pub const MINING: &str = "mining.json";
pub const SCORES: &str = "scores.txt";
pub const PRUNED: &str = "pruned.json";
pub const COMPOSITION: &str = "composition.json";
pub const REPORT: &str = "report.json";

#[derive(Clone, Debug)]
pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CliError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).exists()
    }

    fn require(&self, name: &str, stage: &'static str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        if path.exists() {
            Ok(path)
        } else {
            Err(CliError::MissingInput { path, stage })
        }
    }

    pub fn read_text(&self, name: &str, stage: &'static str) -> Result<String, CliError> {
        let path = self.require(name, stage)?;
        fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str, stage: &'static str) -> Result<T, CliError> {
        let text = self.read_text(name, stage)?;
        serde_json::from_str(&text).map_err(|source| CliError::Json { path: self.path(name), source })
    }

    /// Writes through a temporary file so a crash never leaves half a file.
    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, text).map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json { path: self.path(name), source })?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn store(&self) -> Result<ArtifactStore, CliError> {
        Ok(ArtifactStore::open(self.path("store"))?)
    }

    pub fn load_trace(&self) -> Result<RequestSequence, CliError> {
        let path = self.require(TRACE, "ingest")?;
        Ok(parse_trace(path, &TraceMapping::canonical())?)
    }
}
