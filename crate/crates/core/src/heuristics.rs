//! Baseline placement rules and the score-argmax wrapper for priority
//! functions.

use std::collections::HashMap;

use crate::sim::{Action, PlacementPolicy, PolicyError, SimState};
use crate::trace::{Request, VmId};

/// Scores placing `item` into a bin with residual capacity `bin`; higher is
/// better and `-inf` refuses the bin.
pub trait PriorityFn: Send + Sync {
    fn score(&self, bin: &[u64], item: &[u64]) -> Result<f64, PolicyError>;
}

impl<F> PriorityFn for F
where
    F: Fn(&[u64], &[u64]) -> f64 + Send + Sync,
{
    fn score(&self, bin: &[u64], item: &[u64]) -> Result<f64, PolicyError> {
        Ok(self(bin, item))
    }
}

/// Highest score over feasible PMs, lowest index on ties. Bins scored
/// `-inf` are skipped; no candidate means `Reject`.
pub fn argmax_by<F>(state: &SimState<'_>, mut f: F) -> Result<Action, PolicyError>
where
    F: FnMut(usize, &[u64], &[u64]) -> Result<f64, PolicyError>,
{
    let item = &state.pending_create().map_err(|e| PolicyError::new(e.to_string()))?.demand;
    let mut best: Option<(usize, f64)> = None;
    for pm in (0..state.n_pms()).filter(|&i| state.fits(i, item)) {
        let s = f(pm, state.available(pm), item).map_err(|mut e| {
            e.pm.get_or_insert(pm);
            e
        })?;
        if s.is_nan() {
            return Err(PolicyError::on_pm(pm, "score is NaN"));
        }
        if s == f64::NEG_INFINITY {
            continue;
        }
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((pm, s));
        }
    }
    Ok(best.map_or(Action::Reject, |(pm, _)| Action::Place(pm)))
}

pub fn argmax_placement<P: PriorityFn + ?Sized>(f: &P, state: &SimState<'_>) -> Result<Action, PolicyError> {
    argmax_by(state, |_, bin, item| f.score(bin, item))
}

/// Picks the PM left most utilised after placement: maximises
/// `-Σ_j (bin_j - item_j) / cap_j`.
pub fn best_fit(state: &SimState<'_>) -> Result<Action, PolicyError> {
    argmax_by(state, |pm, bin, item| {
        let cap = state.capacity(pm);
        Ok(-bin.iter().zip(item).zip(cap).map(|((&b, &i), &c)| (b - i) as f64 / c as f64).sum::<f64>())
    })
}

pub fn first_fit(state: &SimState<'_>) -> Result<Action, PolicyError> {
    Ok(state.feasible().map_err(|e| PolicyError::new(e.to_string()))?.first().map_or(Action::Reject, |&i| Action::Place(i)))
}

/// Known VM departure times, used by the Hindsight baseline.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lifetimes {
    departures: HashMap<VmId, u64>,
}

impl Lifetimes {
    /// VMs without a delete never depart.
    pub fn from_sequence(requests: &[Request]) -> Self {
        let mut departures = HashMap::new();
        for r in requests {
            if r.is_create() {
                departures.insert(r.vm_id, u64::MAX);
            } else {
                departures.insert(r.vm_id, r.time);
            }
        }
        Self { departures }
    }

    pub fn from_durations(requests: &[Request], durations: &HashMap<VmId, u64>) -> Self {
        let departures = requests
            .iter()
            .filter(|r| r.is_create())
            .filter_map(|r| durations.get(&r.vm_id).map(|d| (r.vm_id, r.time.saturating_add(*d))))
            .collect();
        Self { departures }
    }

    pub fn departure(&self, vm: VmId) -> Option<u64> {
        self.departures.get(&vm).copied()
    }
}

fn missing(vm: VmId) -> PolicyError {
    PolicyError::new(format!("missing duration for vm {vm}"))
}

/// Among feasible PMs already hosting VMs, picks the one whose latest
/// departure is closest to the pending VM's; falls back to the lowest
/// feasible empty PM.
pub fn hindsight(state: &SimState<'_>, lifetimes: &Lifetimes) -> Result<Action, PolicyError> {
    let req = state.pending_create().map_err(|e| PolicyError::new(e.to_string()))?;
    let dep = lifetimes.departure(req.vm_id).ok_or_else(|| missing(req.vm_id))?;
    let mut latest: Vec<Option<u64>> = vec![None; state.n_pms()];
    for (vm, pm, _) in state.allocations() {
        if state.is_queued(vm) {
            continue;
        }
        let d = lifetimes.departure(vm).ok_or_else(|| missing(vm))?;
        latest[pm] = Some(latest[pm].map_or(d, |m| m.max(d)));
    }
    let feasible = state.feasible().map_err(|e| PolicyError::new(e.to_string()))?;
    let hosted = feasible
        .iter()
        .filter_map(|&i| latest[i].map(|m| (m.abs_diff(dep), i)))
        .min();
    Ok(match hosted {
        Some((_, i)) => Action::Place(i),
        None => feasible.first().map_or(Action::Reject, |&i| Action::Place(i)),
    })
}

/// Wraps a priority function as a placement policy.
#[derive(Clone, Debug)]
pub struct Scored<P>(pub P);

impl<P: PriorityFn> PlacementPolicy for Scored<P> {
    fn decide(&self, state: &SimState<'_>) -> Result<Action, PolicyError> {
        argmax_placement(&self.0, state)
    }
}

#[derive(Clone, Debug)]
pub enum Baseline {
    BestFit,
    FirstFit,
    Hindsight(Lifetimes),
}

impl Baseline {
    pub fn name(&self) -> &'static str {
        match self {
            Baseline::BestFit => "Best-Fit",
            Baseline::FirstFit => "First-Fit",
            Baseline::Hindsight(_) => "Hindsight",
        }
    }
}

impl PlacementPolicy for Baseline {
    fn decide(&self, state: &SimState<'_>) -> Result<Action, PolicyError> {
        match self {
            Baseline::BestFit => best_fit(state),
            Baseline::FirstFit => first_fit(state),
            Baseline::Hindsight(l) => hindsight(state, l),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_episode, ClusterSpec};

    fn state_with<'a>(caps: Vec<Vec<u64>>, reqs: &'a [Request], placements: &[usize]) -> SimState<'a> {
        let c = ClusterSpec::new(caps).unwrap();
        let mut s = SimState::new(&c, reqs, 0).unwrap();
        for &p in placements {
            s.step(Action::Place(p)).unwrap();
        }
        s
    }

    #[test]
    fn argmax_prefers_higher_score_then_lowest_index() {
        let reqs = [Request::create(1, [1, 1], 0)];
        let s = state_with(vec![vec![4, 4], vec![2, 2]], &reqs, &[]);
        let neg_sum = |b: &[u64], _: &[u64]| -(b.iter().sum::<u64>() as f64);
        assert_eq!(argmax_placement(&neg_sum, &s).unwrap(), Action::Place(1));
        let flat = |_: &[u64], _: &[u64]| 1.0;
        assert_eq!(argmax_placement(&flat, &s).unwrap(), Action::Place(0));
        let refuse = |_: &[u64], _: &[u64]| f64::NEG_INFINITY;
        assert_eq!(argmax_placement(&refuse, &s).unwrap(), Action::Reject);
        let nan = |_: &[u64], _: &[u64]| f64::NAN;
        assert_eq!(argmax_placement(&nan, &s).unwrap_err().pm, Some(0));

        let reqs = [Request::create(1, [5, 5], 0)];
        let s = state_with(vec![vec![4, 4], vec![2, 2]], &reqs, &[]);
        assert_eq!(argmax_placement(&flat, &s).unwrap(), Action::Reject);
    }

    #[test]
    fn best_fit_prefers_perfect_fill() {
        let reqs = [Request::create(1, [2, 4], 0), Request::create(2, [2, 4], 1)];
        let s = state_with(vec![vec![4, 8], vec![4, 8]], &reqs, &[1]);
        assert_eq!(best_fit(&s).unwrap(), Action::Place(1));

        let c = ClusterSpec::homogeneous(1, [4, 4]);
        let reqs: Vec<_> = (0..3).map(|i| Request::create(i, [2, 2], i)).collect();
        let r = run_episode(&Baseline::BestFit, &c, &reqs, 0).unwrap();
        assert_eq!(r.scheduled_length, 2);
    }

    #[test]
    fn first_fit_takes_lowest_feasible() {
        let reqs = [Request::create(1, [3, 3], 0)];
        let s = state_with(vec![vec![4, 4]; 3], &reqs, &[]);
        assert_eq!(first_fit(&s).unwrap(), Action::Place(0));
        let s = state_with(vec![vec![1, 1], vec![2, 2], vec![4, 4]], &reqs, &[]);
        assert_eq!(first_fit(&s).unwrap(), Action::Place(2));
        let s = state_with(vec![vec![1, 1]], &reqs, &[]);
        assert_eq!(first_fit(&s).unwrap(), Action::Reject);
    }

    #[test]
    fn hindsight_matches_departures() {
        let reqs = [
            Request::create(1, [1, 1], 0),
            Request::create(2, [1, 1], 0),
            Request::create(3, [1, 1], 0),
            Request::delete(2, [1, 1], 1),
            Request::delete(1, [1, 1], 10),
            Request::delete(3, [1, 1], 10),
        ];
        let life = Lifetimes::from_sequence(&reqs);
        let s = state_with(vec![vec![4, 4]; 3], &reqs, &[1, 0]);
        // vm 3 leaves at 10 like vm 1 on PM 1, not like vm 2 on PM 0
        assert_eq!(hindsight(&s, &life).unwrap(), Action::Place(1));

        let s = state_with(vec![vec![4, 4]; 3], &reqs, &[]);
        assert_eq!(hindsight(&s, &life).unwrap(), Action::Place(0));
        assert!(hindsight(&s, &Lifetimes::default()).unwrap_err().cause.contains("missing duration"));
    }
}
