//! Run configuration. Every field has a default; a TOML file only needs the
//! keys it changes.

use std::path::{Path, PathBuf};
use std::time::Duration;

use mico_core::par::Parallelism;
use mico_core::sim::ClusterSpec;
use mico_core::trace::{SplitSpec, Thresholds, TraceMapping, Window};
use mico_engine::{ComposerConfig, ContextParams, ExecConfig, MinerConfig, PruneConfig, TermMode};
use mico_llm::SamplerConfig;
use mico_policy::fixtures;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds offset sampling, the termination coin and the mock backend.
    pub seed: u64,
    pub env: EnvConfig,
    pub general: GeneralConfig,
    pub miner: StageConfig,
    pub composer: ComposerStage,
    pub prune: PruneConfig,
    pub llm: LlmConfig,
    pub paths: PathsConfig,
    pub trace: TraceConfig,
    pub oracle: OracleConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Number of PMs, `N`.
    pub n_pms: usize,
    pub pm_capacity: Vec<u64>,
    pub thresholds: Thresholds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneralConfig {
    /// Sampling temperature, `ξ`.
    pub temperature: f64,
    pub top_m: usize,
    pub tau_max: usize,
    pub term_mode: TermMode,
    /// Scenarios, `K`.
    pub k: usize,
    pub n_s: usize,
    /// Starting points per scenario; the last is the test offset.
    pub n_starts: usize,
    pub sequential: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub iterations: usize,
    pub tokens: u32,
    pub candidates: usize,
    /// Seed policy source file; the built-in seed when absent.
    pub seed_policy: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComposerStage {
    pub iterations: usize,
    pub tokens: u32,
    pub candidates: usize,
    pub seed_policy: Option<PathBuf>,
    /// Context length `L` in requests.
    pub history: usize,
    pub group: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub backend: BackendKind,
    pub model: String,
    pub retries: u32,
    pub timeout_ms: u64,
    pub concurrency: usize,
    pub transcripts: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub work_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub mapping: TraceMapping,
    /// `general.k` equal slices when absent.
    pub window: Option<Window>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub max_nodes: u64,
    pub max_seconds: Option<u64>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { n_pms: 50, pm_capacity: vec![64, 256], thresholds: Thresholds::default() }
    }
}

impl Default for GeneralConfig {
    fn default() -> Self {
        Self {
            temperature: 0.8,
            top_m: 2,
            tau_max: 50,
            term_mode: TermMode::FixedLength,
            k: 6,
            n_s: 30,
            n_starts: SplitSpec::default().n_starts,
            sequential: false,
        }
    }
}

impl Default for StageConfig {
    fn default() -> Self {
        Self { iterations: 300, tokens: 1000, candidates: 1, seed_policy: None }
    }
}

impl Default for ComposerStage {
    fn default() -> Self {
        let ctx = ContextParams::default();
        Self { iterations: 300, tokens: 1000, candidates: 1, seed_policy: None, history: ctx.history, group: ctx.group }
    }
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self { backend: BackendKind::Mock, model: "gpt-4".into(), retries: 3, timeout_ms: 60_000, concurrency: 4, transcripts: false }
    }
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { work_dir: PathBuf::from("mico-run") }
    }
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self { mapping: TraceMapping::canonical(), window: None }
    }
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { max_nodes: 20_000_000, max_seconds: Some(60) }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            env: EnvConfig::default(),
            general: GeneralConfig::default(),
            miner: StageConfig::default(),
            composer: ComposerStage::default(),
            prune: PruneConfig::default(),
            llm: LlmConfig::default(),
            paths: PathsConfig::default(),
            trace: TraceConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

fn read_seed(path: &Option<PathBuf>, builtin: &str) -> Result<String, CliError> {
    match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::io(p, e)),
        None => Ok(builtin.to_string()),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        if self.env.n_pms == 0 || self.env.pm_capacity.is_empty() || self.env.pm_capacity.contains(&0) {
            return bad("env: need at least one PM with positive capacity");
        }
        if !(self.general.temperature >= 0.0 && self.general.temperature <= 2.0) {
            return bad("general.temperature must lie in [0, 2]");
        }
        if self.general.k == 0 || self.general.n_starts < 2 {
            return bad("general.k must be positive and general.n_starts at least 2");
        }
        self.exec().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.miner_config()?.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.sampler(self.miner.tokens).validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn cluster(&self) -> ClusterSpec {
        ClusterSpec::homogeneous(self.env.n_pms, self.env.pm_capacity.clone())
    }

    pub fn parallelism(&self) -> Parallelism {
        if self.general.sequential {
            Parallelism::Sequential
        } else {
            Parallelism::default()
        }
    }

    pub fn window(&self) -> Window {
        self.trace.window.unwrap_or(Window::Equal(self.general.k))
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec { n_starts: self.general.n_starts }
    }

    pub fn exec(&self) -> ExecConfig {
        ExecConfig {
            tau_max: self.general.tau_max,
            term_mode: self.general.term_mode,
            context: ContextParams { history: self.composer.history, group: self.composer.group },
            thresholds: self.env.thresholds.clone(),
            seed: self.seed,
            record: false,
        }
    }

    pub fn miner_config(&self) -> Result<MinerConfig, CliError> {
        Ok(MinerConfig {
            iterations: self.miner.iterations,
            top_m: self.general.top_m,
            n_s: self.general.n_s,
            candidates: self.miner.candidates,
            seed_source: read_seed(&self.miner.seed_policy, fixtures::SEED_PRIORITY)?,
            seed: self.seed,
            split: self.split(),
            tau_max: self.general.tau_max,
            term_mode: self.general.term_mode,
            parallelism: self.parallelism(),
        })
    }

    pub fn composer_config(&self) -> Result<ComposerConfig, CliError> {
        Ok(ComposerConfig {
            iterations: self.composer.iterations,
            top_m: self.general.top_m,
            n_s: self.general.n_s,
            candidates: self.composer.candidates,
            seed_source: read_seed(&self.composer.seed_policy, fixtures::SEED_SELECTOR)?,
            seed: self.seed,
            exec: self.exec(),
            parallelism: self.parallelism(),
        })
    }

    pub fn sampler(&self, tokens: u32) -> SamplerConfig {
        SamplerConfig {
            temperature: self.general.temperature,
            token_budget: tokens,
            model: self.llm.model.clone(),
            retries: self.llm.retries,
            timeout: Duration::from_millis(self.llm.timeout_ms),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn roundtrip() {
        let mut cfg = RunConfig::default();
        cfg.general.term_mode = TermMode::Geometric { p: 0.1 };
        cfg.llm.backend = BackendKind::Remote;
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[general]\ntopm = 3\n").is_err());
    }

    #[test]
    fn window_follows_k() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.window(), Window::Equal(6));
        cfg.general.k = 4;
        assert_eq!(cfg.window(), Window::Equal(4));
        cfg.trace.window = Some(Window::Count(500));
        assert_eq!(cfg.window(), Window::Count(500));
    }

    #[test]
    fn invalid_values() {
        let mut cfg = RunConfig::default();
        cfg.env.pm_capacity = vec![64, 0];
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        let mut cfg = RunConfig::default();
        cfg.general.tau_max = 0;
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }
}
