use mico_core::trace::{Request, Thresholds};
use mico_policy::SelectorContext;
use serde::{Deserialize, Serialize};

use crate::EngineError;

/// How much history the selector sees and how it is grouped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextParams {
    /// Requests of history, `L`.
    pub history: usize,
    pub group: usize,
}

impl Default for ContextParams {
    fn default() -> Self {
        Self { history: 200, group: 50 }
    }
}

impl ContextParams {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.group == 0 || self.history == 0 || self.history % self.group != 0 {
            return Err(EngineError::InvalidConfig(format!(
                "history {} must be a positive multiple of group {}",
                self.history, self.group
            )));
        }
        Ok(())
    }

    pub fn groups(&self) -> usize {
        self.history / self.group
    }
}

fn distribution(reqs: &[Request], thresholds: &Thresholds) -> Option<[f64; 5]> {
    let mut counts = [0usize; 5];
    for r in reqs.iter().filter(|r| r.is_create()) {
        counts[thresholds.classify(&r.demand).index()] += 1;
    }
    let n: usize = counts.iter().sum();
    (n > 0).then(|| counts.map(|c| c as f64 / n as f64))
}

/// Type proportions of the creates in the last `history` requests of
/// `recent`, in consecutive groups, oldest first.
///
/// Groups are aligned to the end of `recent`. A group with no history (or
/// no creates) repeats the oldest available distribution before it, or
/// carries the previous one forward after it; with no creates at all every
/// group is uniform.
pub fn context_features(recent: &[Request], thresholds: &Thresholds, params: ContextParams) -> SelectorContext {
    let g = params.groups();
    let end = recent.len();
    let dists: Vec<Option<[f64; 5]>> = (0..g)
        .map(|i| {
            let back_hi = (g - 1 - i) * params.group;
            let back_lo = back_hi + params.group;
            let hi = end.saturating_sub(back_hi);
            let lo = end.saturating_sub(back_lo);
            distribution(&recent[lo..hi], thresholds)
        })
        .collect();
    let Some(first) = dists.iter().position(Option::is_some) else {
        return SelectorContext::uniform(g);
    };
    let mut groups = Vec::with_capacity(g);
    let mut carry = dists[first].unwrap_or([0.2; 5]);
    for d in dists {
        if let Some(d) = d {
            carry = d;
        }
        groups.push(carry);
    }
    SelectorContext { groups }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn creates(n: usize, demand: [u64; 2]) -> Vec<Request> {
        (0..n).map(|i| Request::create(i as u64, demand, i as u64)).collect()
    }

    #[test]
    fn homogeneous_window() {
        let ctx = context_features(&creates(200, [1, 2]), &Thresholds::default(), ContextParams::default());
        assert_eq!(ctx.groups.len(), 4);
        assert!(ctx.groups.iter().all(|g| *g == [1.0, 0.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn cold_start_is_uniform() {
        let ctx = context_features(&[], &Thresholds::default(), ContextParams::default());
        assert_eq!(ctx.groups, vec![[0.2; 5]; 4]);
    }

    #[test]
    fn short_history_pads_with_oldest() {
        let mut reqs = creates(30, [1, 2]);
        reqs.extend((30..80).map(|i| Request::create(i, [32, 64], i)));
        let ctx = context_features(&reqs, &Thresholds::default(), ContextParams::default());
        // Last group: 50 large. Group before: 30 small only.
        assert_eq!(ctx.groups[3], [0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(ctx.groups[2], [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(ctx.groups[0], ctx.groups[2]);
    }

    #[test]
    fn only_the_last_window_counts() {
        let mut reqs = creates(500, [32, 64]);
        reqs.extend((500..700).map(|i| Request::create(i, [1, 2], i)));
        let ctx = context_features(&reqs, &Thresholds::default(), ContextParams::default());
        assert!(ctx.groups.iter().all(|g| g[0] == 1.0));
        let ctx = context_features(&reqs[..650], &Thresholds::default(), ContextParams::default());
        assert_eq!(ctx.groups[0][4], 1.0);
        assert_eq!(ctx.groups[1][0], 1.0);
    }

    #[test]
    fn params() {
        assert!(ContextParams { history: 200, group: 30 }.validate().is_err());
        assert_eq!(ContextParams::default().groups(), 4);
    }
}
