use mico_core::sim::{advance, ClusterSpec, EpisodeOptions, EpisodeResult, PlacementPolicy, ReplayLog, SimState};
use mico_core::trace::{Request, Thresholds};
use mico_core::Scored;
use mico_policy::{CompiledPolicy, PolicyVmError, SelectorContext};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{context_features, ContextParams};
use crate::EngineError;

/// When an option hands control back to the master.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum TermMode {
    /// Run exactly `tau_max` creates.
    #[default]
    FixedLength,
    /// After each create stop with probability `p`, truncated at `tau_max`.
    Geometric { p: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecConfig {
    pub tau_max: usize,
    pub term_mode: TermMode,
    pub context: ContextParams,
    pub thresholds: Thresholds,
    /// Seeds the termination coin; combined with the episode start.
    pub seed: u64,
    pub record: bool,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            tau_max: 50,
            term_mode: TermMode::FixedLength,
            context: ContextParams::default(),
            thresholds: Thresholds::default(),
            seed: 0,
            record: false,
        }
    }
}

impl ExecConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.tau_max == 0 {
            return Err(EngineError::InvalidConfig("tau_max must be at least 1".into()));
        }
        if let TermMode::Geometric { p } = self.term_mode {
            if !(p > 0.0 && p <= 1.0) {
                return Err(EngineError::InvalidConfig(format!("geometric p = {p} outside (0, 1]")));
            }
        }
        self.context.validate()?;
        self.thresholds.validate().map_err(|e| EngineError::InvalidConfig(e.to_string()))
    }
}

/// Whether the running option stops before the next create. `steps` counts
/// creates the option has already handled.
pub fn option_terminated<R: Rng + ?Sized>(steps: usize, state: &SimState<'_>, cfg: &ExecConfig, rng: &mut R) -> bool {
    if state.pending_create().is_ok() && state.feasible().is_ok_and(|f| f.is_empty()) {
        return true;
    }
    if steps >= cfg.tau_max {
        return true;
    }
    match cfg.term_mode {
        TermMode::FixedLength => false,
        TermMode::Geometric { p } => steps > 0 && rng.random_bool(p),
    }
}

/// Picks a 1-based option index from the context.
pub trait OptionSelector: Send + Sync {
    fn select(&self, ctx: &SelectorContext, n_options: usize) -> Result<usize, PolicyVmError>;
}

impl OptionSelector for CompiledPolicy {
    fn select(&self, ctx: &SelectorContext, n_options: usize) -> Result<usize, PolicyVmError> {
        self.eval_selector(ctx, n_options)
    }
}

/// Always the same option.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConstantSelector(pub usize);

impl OptionSelector for ConstantSelector {
    fn select(&self, _: &SelectorContext, n_options: usize) -> Result<usize, PolicyVmError> {
        if (1..=n_options).contains(&self.0) {
            Ok(self.0)
        } else {
            Err(PolicyVmError::OutOfRange(self.0.to_string(), n_options))
        }
    }
}

impl<S: OptionSelector + ?Sized> OptionSelector for &S {
    fn select(&self, ctx: &SelectorContext, n_options: usize) -> Result<usize, PolicyVmError> {
        (**self).select(ctx, n_options)
    }
}

/// One uninterrupted run of an option.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// 1-based index returned by the selector.
    pub option: usize,
    /// Cursor of the first create handled.
    pub start: usize,
    /// Creates handled, the failing one included.
    pub duration: usize,
    pub placed: usize,
    pub reward: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HierTrace {
    pub segments: Vec<Segment>,
    pub scheduled_length: usize,
    pub failed: bool,
}

impl HierTrace {
    pub fn distinct_options(&self) -> usize {
        let mut ids: Vec<usize> = self.segments.iter().map(|s| s.option).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

/// Compiled selector plus the intra-option policies in selector order.
#[derive(Clone)]
pub struct HierPolicy {
    pub selector: CompiledPolicy,
    pub options: Vec<Scored<CompiledPolicy>>,
}

fn skip_deletes(state: &mut SimState<'_>, log: &mut Option<ReplayLog>, reward: &mut f64) -> Result<(), EngineError> {
    while let Some(r) = state.pending() {
        if r.is_create() {
            break;
        }
        let idx = state.cursor();
        let (action, outcome) = advance(state, &NoDecision)?;
        *reward += outcome.reward;
        if let Some(log) = log.as_mut() {
            log.push(idx - state.start(), r.clone(), action, &outcome);
        }
    }
    Ok(())
}

struct NoDecision;

impl PlacementPolicy for NoDecision {
    fn decide(&self, _: &SimState<'_>) -> Result<mico_core::Action, mico_core::PolicyError> {
        Err(mico_core::PolicyError::new("create reached while skipping deletes"))
    }
}

/// Alternates master selections and option runs until the episode ends.
pub fn run_hierarchical<S, P>(
    selector: &S,
    options: &[P],
    cluster: &ClusterSpec,
    requests: &[Request],
    start: usize,
    cfg: &ExecConfig,
) -> Result<(EpisodeResult, HierTrace), EngineError>
where
    S: OptionSelector + ?Sized,
    P: PlacementPolicy,
{
    if options.is_empty() {
        return Err(EngineError::InvalidConfig("empty option library".into()));
    }
    let mut state = SimState::new(cluster, requests, start)?.with_weights(EpisodeOptions::default().weights);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (start as u64).rotate_left(32));
    let mut log = cfg.record.then(|| ReplayLog::new(cluster, start));
    let mut trace = HierTrace::default();
    let mut reward = 0.0;

    loop {
        skip_deletes(&mut state, &mut log, &mut reward)?;
        if state.is_done() {
            break;
        }
        let t = state.cursor();
        let ctx = context_features(&requests[t.saturating_sub(cfg.context.history)..t], &cfg.thresholds, cfg.context);
        let k = selector.select(&ctx, options.len()).map_err(EngineError::SelectorFault)?;
        let policy = &options[k - 1];
        let mut seg = Segment { option: k, start: t, duration: 0, placed: 0, reward: 0.0 };
        loop {
            skip_deletes(&mut state, &mut log, &mut reward)?;
            if state.is_done() || (seg.duration > 0 && option_terminated(seg.duration, &state, cfg, &mut rng)) {
                break;
            }
            let idx = state.cursor();
            let (action, outcome) = advance(&mut state, policy)?;
            seg.duration += 1;
            seg.placed += usize::from(outcome.placed);
            seg.reward += outcome.reward;
            if let Some(log) = log.as_mut() {
                log.push(idx - start, requests[idx].clone(), action, &outcome);
            }
        }
        reward += seg.reward;
        trace.segments.push(seg);
    }
    trace.scheduled_length = state.placed();
    trace.failed = state.is_terminal();
    let result = EpisodeResult {
        scheduled_length: state.placed(),
        steps: state.steps(),
        reward,
        failed: state.is_terminal(),
        trajectory: log,
    };
    Ok((result, trace))
}

impl HierPolicy {
    pub fn run(
        &self,
        cluster: &ClusterSpec,
        requests: &[Request],
        start: usize,
        cfg: &ExecConfig,
    ) -> Result<(EpisodeResult, HierTrace), EngineError> {
        run_hierarchical(&self.selector, &self.options, cluster, requests, start, cfg)
    }
}
