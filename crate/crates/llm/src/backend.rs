use std::time::Duration;

use mico_policy::PolicyKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::prompt::{base_name, PromptBundle};
use crate::text::{declared_functions, float_literals, rename_ident};
use crate::LlmError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub token_budget: u32,
    pub model: String,
    pub retries: u32,
    #[serde(with = "millis")]
    pub timeout: Duration,
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            temperature: 0.8,
            token_budget: 1000,
            model: "gpt-4o-mini".into(),
            retries: 3,
            timeout: Duration::from_secs(60),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidConfig(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.token_budget == 0 {
            return Err(LlmError::InvalidConfig("token budget must be positive".into()));
        }
        Ok(())
    }
}

/// Something that turns a prompt into a raw model response. `nonce`
/// distinguishes repeated calls on the same prompt.
pub trait CompletionBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &PromptBundle, cfg: &SamplerConfig, nonce: u64) -> Result<String, LlmError>;
}

/// Chat-completion endpoint speaking the common `messages` JSON shape.
#[derive(Clone, Debug)]
pub struct RemoteBackend {
    endpoint: String,
    api_key: Option<String>,
    model: Option<String>,
    client: reqwest::blocking::Client,
    backoff: Duration,
}

pub const ENV_ENDPOINT: &str = "MICO_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "MICO_LLM_API_KEY";
pub const ENV_MODEL: &str = "MICO_LLM_MODEL";

impl RemoteBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::BackendUnavailable(e.to_string()))?;
        Ok(Self { endpoint: endpoint.into(), api_key, model: None, client, backoff: Duration::from_millis(500) })
    }

    /// Reads the endpoint, key and optional model override from the environment.
    pub fn from_env(timeout: Duration) -> Result<Self, LlmError> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| LlmError::BackendUnavailable(format!("{ENV_ENDPOINT} is not set")))?;
        let mut b = Self::new(endpoint, std::env::var(ENV_API_KEY).ok(), timeout)?;
        b.model = std::env::var(ENV_MODEL).ok();
        Ok(b)
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn request_body(&self, prompt: &PromptBundle, cfg: &SamplerConfig) -> Value {
        json!({
            "model": self.model.as_deref().unwrap_or(&cfg.model),
            "messages": [{"role": "user", "content": prompt.rendered}],
            "temperature": cfg.temperature,
            "max_tokens": cfg.token_budget,
        })
    }

    fn attempt(&self, body: &Value, cfg: &SamplerConfig) -> Result<String, Attempt> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(format!("http {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(LlmError::BackendUnavailable(format!("http {status}"))));
        }
        let v: Value = resp.json().map_err(|e| Attempt::Retry(e.to_string()))?;
        let choice = &v["choices"][0];
        if choice["finish_reason"] == "length"
            || v["usage"]["completion_tokens"].as_u64().is_some_and(|n| n > cfg.token_budget as u64)
        {
            return Err(Attempt::Fatal(LlmError::BudgetExceeded { limit: cfg.token_budget }));
        }
        choice["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| Attempt::Fatal(LlmError::BackendUnavailable("response without message content".into())))
    }
}

enum Attempt {
    Retry(String),
    Fatal(LlmError),
}

impl CompletionBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn complete(&self, prompt: &PromptBundle, cfg: &SamplerConfig, _nonce: u64) -> Result<String, LlmError> {
        cfg.validate()?;
        let body = self.request_body(prompt, cfg);
        let mut last = String::new();
        for k in 0..=cfg.retries {
            if k > 0 {
                std::thread::sleep(self.backoff * 2u32.saturating_pow(k - 1));
            }
            match self.attempt(&body, cfg) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(why)) => last = why,
            }
        }
        Err(LlmError::BackendUnavailable(format!("gave up after {} attempts: {last}", cfg.retries + 1)))
    }
}

/// Edits the mock can apply to the best exemplar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    /// Scale one float literal.
    Reweight,
    /// Subtract a weighted normalized slack term.
    SlackPenalty,
    /// Add a bonus per tightly filled dimension.
    TightBonus,
    /// Penalize uneven residual fractions.
    BalancePenalty,
    /// Override the choice when the latest share of one type is high.
    ShareOverride,
    /// Override the choice when one type's share is rising.
    TrendOverride,
}

impl Mutation {
    pub const ALL: [Mutation; 6] = [
        Mutation::Reweight,
        Mutation::SlackPenalty,
        Mutation::TightBonus,
        Mutation::BalancePenalty,
        Mutation::ShareOverride,
        Mutation::TrendOverride,
    ];

    pub fn applies_to(self, kind: PolicyKind) -> bool {
        match self {
            Mutation::Reweight => true,
            Mutation::SlackPenalty | Mutation::TightBonus | Mutation::BalancePenalty => kind == PolicyKind::Priority,
            Mutation::ShareOverride | Mutation::TrendOverride => kind == PolicyKind::Selector,
        }
    }
}

/// Deterministic offline stand-in for a model: mutates the best exemplar.
#[derive(Clone, Debug)]
pub struct MockBackend {
    corpus: Vec<Mutation>,
    seed: u64,
    max_depth: usize,
}

const TYPE_KEYS: [&str; 5] = ["small", "medium_small", "medium_medium", "medium_large", "large"];

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self::with_corpus(Mutation::ALL.to_vec(), seed)
    }

    pub fn with_corpus(corpus: Vec<Mutation>, seed: u64) -> Self {
        Self { corpus, seed, max_depth: 6 }
    }

    fn rng(&self, prompt: &PromptBundle, nonce: u64) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(nonce.to_le_bytes());
        h.update(prompt.rendered.as_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    /// The mutated source, without any surrounding prose.
    pub fn mutate(&self, prompt: &PromptBundle, nonce: u64) -> Result<String, LlmError> {
        let mut rng = self.rng(prompt, nonce);
        let choices: Vec<Mutation> = self.corpus.iter().copied().filter(|m| m.applies_to(prompt.kind)).collect();
        if choices.is_empty() {
            return Err(LlmError::BackendUnavailable("mock corpus has no mutation for this prompt".into()));
        }
        let best = prompt.best();
        let target = prompt.target();
        let depth = declared_functions(&best.source).iter().filter(|f| f.starts_with("mut_")).count();
        let mut m = choices[rng.random_range(0..choices.len())];
        if m != Mutation::Reweight && depth >= self.max_depth {
            m = Mutation::Reweight;
        }
        if m == Mutation::Reweight {
            if let Some(src) = reweight(&best.source, &mut rng) {
                return Ok(rename_ident(&src, &best.label, &target));
            }
            m = choices.iter().copied().find(|&c| c != Mutation::Reweight).unwrap_or(Mutation::Reweight);
            if m == Mutation::Reweight || depth >= self.max_depth {
                return Ok(rename_ident(&best.source, &best.label, &target));
            }
        }
        let inner = format!("mut_{:08x}", rng.random::<u32>());
        let body = wrapper(m, &inner, prompt, &mut rng);
        Ok(format!(
            "{}\n\nfn {target}({}) {{\n{body}}}\n",
            rename_ident(&best.source, &best.label, &inner).trim_end(),
            if prompt.kind == PolicyKind::Priority { "bin, item" } else { "condition" },
        ))
    }
}

fn reweight(src: &str, rng: &mut ChaCha8Rng) -> Option<String> {
    let lits: Vec<(usize, usize)> = float_literals(src)
        .into_iter()
        .filter(|&(s, e)| src[s..e].parse::<f64>().is_ok_and(|v| v != 0.0))
        .collect();
    if lits.is_empty() {
        return None;
    }
    let (s, e) = lits[rng.random_range(0..lits.len())];
    let v: f64 = src[s..e].parse().ok()?;
    let scaled = v * rng.random_range(0.5..1.5);
    Some(format!("{}{scaled:.4}{}", &src[..s], &src[e..]))
}

fn wrapper(m: Mutation, inner: &str, prompt: &PromptBundle, rng: &mut ChaCha8Rng) -> String {
    // log-uniform over [0.05, 20]
    let w: f64 = 10f64.powf(rng.random_range(-1.3..1.3));
    match m {
        Mutation::SlackPenalty => format!(
            "    let s = {inner}(bin, item);\n    if s == neg_inf() {{ return s; }}\n    let slack = 0.0;\n    \
for i in 0..bin.len() {{\n        slack += (bin[i] - item[i]) / (bin[i] + 1.0);\n    }}\n    s - {w:.4} * slack\n"
        ),
        Mutation::TightBonus => format!(
            "    let s = {inner}(bin, item);\n    if s == neg_inf() {{ return s; }}\n    let bonus = 0.0;\n    \
for i in 0..bin.len() {{\n        if bin[i] - item[i] >= 0.0 && bin[i] - item[i] < {t:.4} * (bin[i] + 1.0) {{\n            \
bonus += {w:.4};\n        }}\n    }}\n    s + bonus\n",
            t = rng.random_range(0.05..0.4)
        ),
        Mutation::BalancePenalty => format!(
            "    let s = {inner}(bin, item);\n    if s == neg_inf() {{ return s; }}\n    let r = [];\n    \
for i in 0..bin.len() {{\n        r.push((bin[i] - item[i]) / (bin[i] + 1.0));\n    }}\n    s - {w:.4} * std(r)\n"
        ),
        Mutation::ShareOverride | Mutation::TrendOverride => {
            let n = prompt.n_options.unwrap_or(1).max(1);
            let pick = rng.random_range(1..=n);
            let key = TYPE_KEYS[rng.random_range(0..TYPE_KEYS.len())];
            let cond = if m == Mutation::ShareOverride {
                format!("condition[condition.len() - 1][\"{key}\"] > {:.4}", rng.random_range(0.3..0.9))
            } else {
                format!(
                    "condition.len() > 1 && condition[condition.len() - 1][\"{key}\"] - condition[0][\"{key}\"] > {:.4}",
                    rng.random_range(0.05..0.5)
                )
            };
            format!("    let r = {inner}(condition);\n    if {cond} {{\n        return {pick};\n    }}\n    r\n")
        }
        Mutation::Reweight => unreachable!("reweight does not wrap"),
    }
}

impl CompletionBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, prompt: &PromptBundle, cfg: &SamplerConfig, nonce: u64) -> Result<String, LlmError> {
        cfg.validate()?;
        let code = self.mutate(prompt, nonce)?;
        Ok(format!("Here is an improved {}:\n\n```rhai\n{code}```\n", base_name(prompt.kind)))
    }
}
