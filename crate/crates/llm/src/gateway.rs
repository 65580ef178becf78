use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};

use mico_policy::Sandbox;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::backend::{CompletionBackend, SamplerConfig};
use crate::prompt::PromptBundle;
use crate::text::extract_code;
use crate::LlmError;

/// Counting semaphore bounding in-flight backend calls.
#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Serialize)]
struct Transcript<'a> {
    backend: &'a str,
    nonce: u64,
    config: &'a SamplerConfig,
    prompt: &'a str,
    response: Option<&'a str>,
    extracted: Option<&'a str>,
    error: Option<String>,
}

/// Shareable front door to a completion backend.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn CompletionBackend>,
    cfg: SamplerConfig,
    sandbox: Sandbox,
    permits: Arc<Permits>,
    transcripts: Option<PathBuf>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.name())
            .field("cfg", &self.cfg)
            .field("transcripts", &self.transcripts)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: impl CompletionBackend + 'static, cfg: SamplerConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        Ok(Self {
            backend: Arc::new(backend),
            cfg,
            sandbox: Sandbox::default(),
            permits: Arc::new(Permits { free: Mutex::new(4), cv: Condvar::new() }),
            transcripts: None,
        })
    }

    pub fn with_concurrency(mut self, cap: usize) -> Self {
        self.permits = Arc::new(Permits { free: Mutex::new(cap.max(1)), cv: Condvar::new() });
        self
    }

    /// Persists one JSON file per call under `dir`.
    pub fn with_transcripts(mut self, dir: impl Into<PathBuf>) -> Self {
        self.transcripts = Some(dir.into());
        self
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// One candidate source for `prompt`.
    pub fn sample(&self, prompt: &PromptBundle, nonce: u64) -> Result<String, LlmError> {
        let raw = {
            let _permit = self.permits.acquire();
            self.backend.complete(prompt, &self.cfg, nonce)
        };
        let out = match &raw {
            Ok(text) => extract_code(text, &self.sandbox).ok_or(LlmError::ExtractionFailed),
            Err(e) => Err(e.clone()),
        };
        if let Some(dir) = &self.transcripts {
            let t = Transcript {
                backend: self.backend.name(),
                nonce,
                config: &self.cfg,
                prompt: &prompt.rendered,
                response: raw.as_deref().ok(),
                extracted: out.as_deref().ok(),
                error: out.as_ref().err().map(ToString::to_string),
            };
            let digest = hex::encode(&Sha256::digest(prompt.rendered.as_bytes())[..6]);
            std::fs::create_dir_all(dir)?;
            let body = serde_json::to_vec_pretty(&t).map_err(|e| LlmError::Transcript(e.to_string()))?;
            std::fs::write(dir.join(format!("{nonce:010}-{digest}.json")), body)?;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::time::Duration;

    use mico_policy::{fixtures, PolicyArtifact};

    use super::*;
    use crate::backend::MockBackend;
    use crate::prompt::render_miner_prompt;

    struct Canned(&'static str);

    impl CompletionBackend for Canned {
        fn name(&self) -> &str {
            "canned"
        }
        fn complete(&self, _: &PromptBundle, _: &SamplerConfig, _: u64) -> Result<String, LlmError> {
            Ok(self.0.to_string())
        }
    }

    fn prompt() -> PromptBundle {
        render_miner_prompt(&[PolicyArtifact::priority(fixtures::SEED_PRIORITY)]).unwrap()
    }

    #[test]
    fn extracts_and_records() {
        let dir = tempfile::tempdir().unwrap();
        let g = Gateway::new(Canned("Reasoning first.\n```rhai\nfn priority(b, i) { 1.0 }\n```\nDone."), SamplerConfig::default())
            .unwrap()
            .with_transcripts(dir.path());
        assert_eq!(g.sample(&prompt(), 3).unwrap(), "fn priority(b, i) { 1.0 }\n");
        let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 1);
        let g = Gateway::new(Canned("I cannot help with that."), SamplerConfig::default()).unwrap();
        assert_eq!(g.sample(&prompt(), 0), Err(LlmError::ExtractionFailed));
    }

    struct Slow {
        live: AtomicUsize,
        peak: AtomicUsize,
    }

    impl CompletionBackend for Slow {
        fn name(&self) -> &str {
            "slow"
        }
        fn complete(&self, _: &PromptBundle, _: &SamplerConfig, _: u64) -> Result<String, LlmError> {
            let now = self.live.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(20));
            self.live.fetch_sub(1, Ordering::SeqCst);
            Ok("fn priority(b, i) { 0.0 }".into())
        }
    }

    #[test]
    fn concurrency_is_capped() {
        let slow = Arc::new(Slow { live: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
        struct Shared(Arc<Slow>);
        impl CompletionBackend for Shared {
            fn name(&self) -> &str {
                "shared"
            }
            fn complete(&self, p: &PromptBundle, c: &SamplerConfig, n: u64) -> Result<String, LlmError> {
                self.0.complete(p, c, n)
            }
        }
        let g = Gateway::new(Shared(slow.clone()), SamplerConfig::default()).unwrap().with_concurrency(2);
        let p = prompt();
        std::thread::scope(|s| {
            for n in 0..8 {
                let (g, p) = (&g, &p);
                s.spawn(move || g.sample(p, n).unwrap());
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn mock_through_gateway() {
        let g = Gateway::new(MockBackend::new(7), SamplerConfig::default()).unwrap();
        let a = g.sample(&prompt(), 1).unwrap();
        assert_eq!(a, g.sample(&prompt(), 1).unwrap());
        assert!(a.contains("fn priority_v1("));
    }
}
