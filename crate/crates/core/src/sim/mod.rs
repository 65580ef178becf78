//! Event-driven environment with delayed deletion release and first-failure
//! termination.
//!
//! PM indices are 0-based throughout the API.

mod replay;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{Op, Request, VmId};

pub use replay::{replay, ReplayError, ReplayLog, ReplayRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("cluster needs at least one PM with positive capacities of equal dimension")]
    InvalidCluster,
    #[error("start offset {start} beyond sequence of length {len}")]
    OffsetOutOfRange { start: usize, len: usize },
    #[error("request dimension {found} does not match cluster dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("pending event is not a create")]
    NotACreateEvent,
    #[error("action {action:?} is illegal for the pending event")]
    IllegalAction { action: Action },
    #[error("step called on a terminal state")]
    SteppedAfterTerminal,
    #[error("no pending request")]
    SequenceExhausted,
    #[error("vm {0} is created while still placed")]
    DuplicateVm(VmId),
    #[error("episode aborted at request {cursor}: {source}")]
    EpisodeAborted { cursor: usize, source: PolicyError },
}

/// A failure raised by a placement policy.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("policy failed{}: {cause}", pm.map(|i| format!(" on pm {i}")).unwrap_or_default())]
pub struct PolicyError {
    pub pm: Option<usize>,
    pub cause: String,
}

impl PolicyError {
    pub fn new(cause: impl Into<String>) -> Self {
        Self { pm: None, cause: cause.into() }
    }

    pub fn on_pm(pm: usize, cause: impl Into<String>) -> Self {
        Self { pm: Some(pm), cause: cause.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub capacities: Vec<Vec<u64>>,
}

impl ClusterSpec {
    pub fn new(capacities: Vec<Vec<u64>>) -> Result<Self, SimError> {
        let spec = Self { capacities };
        spec.validate()?;
        Ok(spec)
    }

    pub fn homogeneous(n_pms: usize, capacity: impl Into<Vec<u64>>) -> Self {
        let capacity = capacity.into();
        Self { capacities: vec![capacity; n_pms] }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let d = self.dims();
        let ok = !self.capacities.is_empty()
            && d > 0
            && self.capacities.iter().all(|c| c.len() == d && c.iter().all(|&x| x > 0));
        ok.then_some(()).ok_or(SimError::InvalidCluster)
    }

    pub fn n_pms(&self) -> usize {
        self.capacities.len()
    }

    pub fn dims(&self) -> usize {
        self.capacities.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Place(usize),
    Reject,
    NoOp,
}

/// Optional shaping terms added to the unit placement reward. Both default
/// to zero, which leaves the reward equal to the placement indicator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub util: f64,
    pub vm_type: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub placed: bool,
    pub terminal: bool,
    /// Queued VMs whose resources returned to their host on this step.
    pub released: Vec<(VmId, usize)>,
}

#[derive(Clone, Copy, Debug)]
struct Placement {
    pm: usize,
    request: usize,
    queued: bool,
}

/// Endogenous state: residual capacities, allocation map, deletion queue,
/// cursor and terminal flag.
#[derive(Clone, Debug)]
pub struct SimState<'a> {
    requests: &'a [Request],
    dims: usize,
    capacity: Vec<u64>,
    residual: Vec<u64>,
    /// Residual plus resources of queued VMs: what a placement at the next
    /// create will see.
    available: Vec<u64>,
    alloc: HashMap<VmId, Placement>,
    queue: Vec<VmId>,
    cursor: usize,
    start: usize,
    terminal: bool,
    placed: usize,
    creates_seen: usize,
    weights: RewardWeights,
}

impl<'a> SimState<'a> {
    pub fn new(cluster: &ClusterSpec, requests: &'a [Request], start: usize) -> Result<Self, SimError> {
        cluster.validate()?;
        if start > requests.len() {
            return Err(SimError::OffsetOutOfRange { start, len: requests.len() });
        }
        let dims = cluster.dims();
        if let Some(r) = requests.iter().find(|r| r.demand.len() != dims) {
            return Err(SimError::DimensionMismatch { expected: dims, found: r.demand.len() });
        }
        let capacity: Vec<u64> = cluster.capacities.concat();
        Ok(Self {
            requests,
            dims,
            residual: capacity.clone(),
            available: capacity.clone(),
            capacity,
            alloc: HashMap::new(),
            queue: Vec::new(),
            cursor: start,
            start,
            terminal: false,
            placed: 0,
            creates_seen: 0,
            weights: RewardWeights::default(),
        })
    }

    pub fn with_weights(mut self, weights: RewardWeights) -> Self {
        self.weights = weights;
        self
    }

    pub fn n_pms(&self) -> usize {
        self.capacity.len() / self.dims
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn requests(&self) -> &'a [Request] {
        self.requests
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn pending(&self) -> Option<&'a Request> {
        if self.terminal {
            None
        } else {
            self.requests.get(self.cursor)
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    /// Neither terminal nor with anything left to consume.
    pub fn is_done(&self) -> bool {
        self.terminal || self.cursor >= self.requests.len()
    }

    /// Successful placements so far.
    pub fn placed(&self) -> usize {
        self.placed
    }

    /// Events consumed so far.
    pub fn steps(&self) -> usize {
        self.cursor - self.start
    }

    pub fn creates_seen(&self) -> usize {
        self.creates_seen
    }

    fn slot(&self, pm: usize) -> std::ops::Range<usize> {
        pm * self.dims..(pm + 1) * self.dims
    }

    pub fn capacity(&self, pm: usize) -> &[u64] {
        &self.capacity[self.slot(pm)]
    }

    /// Literal residual capacity, not counting queued releases.
    pub fn residual(&self, pm: usize) -> &[u64] {
        &self.residual[self.slot(pm)]
    }

    /// Residual capacity after the pending queue release.
    pub fn available(&self, pm: usize) -> &[u64] {
        &self.available[self.slot(pm)]
    }

    pub fn queue(&self) -> &[VmId] {
        &self.queue
    }

    pub fn host_of(&self, vm: VmId) -> Option<usize> {
        self.alloc.get(&vm).map(|p| p.pm)
    }

    pub fn is_queued(&self, vm: VmId) -> bool {
        self.alloc.get(&vm).is_some_and(|p| p.queued)
    }

    /// Every VM in the allocation map with its host and create request,
    /// including VMs waiting in the deletion queue.
    pub fn allocations(&self) -> impl Iterator<Item = (VmId, usize, &'a Request)> + '_ {
        self.alloc.iter().map(|(&vm, p)| (vm, p.pm, &self.requests[p.request]))
    }

    pub fn fits(&self, pm: usize, demand: &[u64]) -> bool {
        self.available(pm).iter().zip(demand).all(|(a, d)| a >= d)
    }

    /// PMs able to host the pending create.
    pub fn feasible(&self) -> Result<Vec<usize>, SimError> {
        let req = self.pending_create()?;
        Ok((0..self.n_pms()).filter(|&i| self.fits(i, &req.demand)).collect())
    }

    pub fn pending_create(&self) -> Result<&'a Request, SimError> {
        match self.pending() {
            Some(r) if r.is_create() => Ok(r),
            _ => Err(SimError::NotACreateEvent),
        }
    }

    fn flush_queue(&mut self) -> Vec<(VmId, usize)> {
        let mut released = Vec::with_capacity(self.queue.len());
        for vm in self.queue.drain(..) {
            let p = self.alloc.remove(&vm).expect("queued vm is allocated");
            let demand = &self.requests[p.request].demand;
            let slot = p.pm * self.dims..(p.pm + 1) * self.dims;
            for (r, d) in self.residual[slot].iter_mut().zip(demand) {
                *r += d;
            }
            released.push((vm, p.pm));
        }
        released
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome, SimError> {
        if self.terminal {
            return Err(SimError::SteppedAfterTerminal);
        }
        let idx = self.cursor;
        let req = self.requests.get(idx).ok_or(SimError::SequenceExhausted)?;
        match req.op {
            Op::Delete => {
                if action != Action::NoOp {
                    return Err(SimError::IllegalAction { action });
                }
                if let Some(p) = self.alloc.get_mut(&req.vm_id).filter(|p| !p.queued) {
                    p.queued = true;
                    let slot = p.pm * self.dims..(p.pm + 1) * self.dims;
                    for (a, d) in self.available[slot].iter_mut().zip(&req.demand) {
                        *a += d;
                    }
                    self.queue.push(req.vm_id);
                }
                self.cursor += 1;
                Ok(StepOutcome { reward: 0.0, placed: false, terminal: false, released: Vec::new() })
            }
            Op::Create => {
                let target = match action {
                    Action::NoOp => return Err(SimError::IllegalAction { action }),
                    Action::Place(i) if i >= self.n_pms() => return Err(SimError::IllegalAction { action }),
                    Action::Place(i) => Some(i),
                    Action::Reject => None,
                };
                if self.alloc.get(&req.vm_id).is_some_and(|p| !p.queued) {
                    return Err(SimError::DuplicateVm(req.vm_id));
                }
                let released = self.flush_queue();
                debug_assert_eq!(self.residual, self.available);
                self.cursor += 1;
                self.creates_seen += 1;
                match target.filter(|&i| self.fits(i, &req.demand)) {
                    Some(i) => {
                        let slot = self.slot(i);
                        for ((r, a), d) in self.residual[slot.clone()]
                            .iter_mut()
                            .zip(&mut self.available[slot])
                            .zip(&req.demand)
                        {
                            *r -= d;
                            *a -= d;
                        }
                        self.alloc.insert(req.vm_id, Placement { pm: i, request: idx, queued: false });
                        self.placed += 1;
                        let reward = 1.0 + self.shaping(i, &req.demand);
                        Ok(StepOutcome { reward, placed: true, terminal: false, released })
                    }
                    None => {
                        self.terminal = true;
                        Ok(StepOutcome { reward: 0.0, placed: false, terminal: true, released })
                    }
                }
            }
        }
    }

    fn shaping(&self, pm: usize, demand: &[u64]) -> f64 {
        let w = self.weights;
        if w.util == 0.0 && w.vm_type == 0.0 {
            return 0.0;
        }
        let cap = self.capacity(pm);
        let norm: Vec<f64> = self.residual(pm).iter().zip(cap).map(|(&r, &c)| r as f64 / c as f64).collect();
        let imbalance = norm.iter().copied().fold(f64::MIN, f64::max) - norm.iter().copied().fold(f64::MAX, f64::min);
        let volume = demand.iter().zip(cap).map(|(&d, &c)| d as f64 / c as f64).sum::<f64>() / cap.len() as f64;
        w.util * (1.0 - imbalance) + w.vm_type * volume
    }
}

/// Maps a state with a create pending to an action.
pub trait PlacementPolicy: Send + Sync {
    fn decide(&self, state: &SimState<'_>) -> Result<Action, PolicyError>;
}

impl<P: PlacementPolicy + ?Sized> PlacementPolicy for &P {
    fn decide(&self, state: &SimState<'_>) -> Result<Action, PolicyError> {
        (**self).decide(state)
    }
}

impl<P: PlacementPolicy + ?Sized> PlacementPolicy for Box<P> {
    fn decide(&self, state: &SimState<'_>) -> Result<Action, PolicyError> {
        (**self).decide(state)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpisodeOptions {
    pub weights: RewardWeights,
    pub record: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    /// Successful placements before termination or exhaustion.
    pub scheduled_length: usize,
    /// Events consumed, deletes included.
    pub steps: usize,
    pub reward: f64,
    /// Ended on a failed placement rather than by running out of requests.
    pub failed: bool,
    pub trajectory: Option<ReplayLog>,
}

/// Consumes a delete with the automatic no-op, or asks `policy` for a create.
pub fn advance<P: PlacementPolicy + ?Sized>(
    state: &mut SimState<'_>,
    policy: &P,
) -> Result<(Action, StepOutcome), SimError> {
    let req = state.pending().ok_or(if state.is_terminal() {
        SimError::SteppedAfterTerminal
    } else {
        SimError::SequenceExhausted
    })?;
    let action = if req.is_create() {
        policy
            .decide(state)
            .map_err(|source| SimError::EpisodeAborted { cursor: state.cursor(), source })?
    } else {
        Action::NoOp
    };
    let outcome = state.step(action)?;
    Ok((action, outcome))
}

pub fn run_episode<P: PlacementPolicy + ?Sized>(
    policy: &P,
    cluster: &ClusterSpec,
    requests: &[Request],
    start: usize,
) -> Result<EpisodeResult, SimError> {
    run_episode_with(policy, cluster, requests, start, EpisodeOptions::default())
}

pub fn run_episode_with<P: PlacementPolicy + ?Sized>(
    policy: &P,
    cluster: &ClusterSpec,
    requests: &[Request],
    start: usize,
    opts: EpisodeOptions,
) -> Result<EpisodeResult, SimError> {
    let mut state = SimState::new(cluster, requests, start)?.with_weights(opts.weights);
    let mut log = opts.record.then(|| ReplayLog::new(cluster, start));
    let mut reward = 0.0;
    while !state.is_done() {
        let idx = state.cursor();
        let (action, outcome) = advance(&mut state, policy)?;
        reward += outcome.reward;
        if let Some(log) = log.as_mut() {
            log.push(idx - start, requests[idx].clone(), action, &outcome);
        }
    }
    Ok(EpisodeResult {
        scheduled_length: state.placed(),
        steps: state.steps(),
        reward,
        failed: state.is_terminal(),
        trajectory: log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Always(usize);

    impl PlacementPolicy for Always {
        fn decide(&self, _: &SimState<'_>) -> Result<Action, PolicyError> {
            Ok(Action::Place(self.0))
        }
    }

    #[test]
    fn fresh_state() {
        let c = ClusterSpec::homogeneous(2, [4, 8]);
        let reqs = [Request::create(1, [1, 1], 0)];
        let s = SimState::new(&c, &reqs, 0).unwrap();
        assert_eq!((s.residual(0), s.residual(1)), (&[4, 8][..], &[4, 8][..]));
        assert_eq!(s.pending(), Some(&reqs[0]));
        assert!(matches!(SimState::new(&c, &reqs, 2), Err(SimError::OffsetOutOfRange { start: 2, len: 1 })));
        let big = ClusterSpec::homogeneous(50, [64, 256]);
        assert_eq!(SimState::new(&big, &reqs, 0).unwrap().n_pms(), 50);
    }

    #[test]
    fn feasibility_is_componentwise() {
        let c = ClusterSpec::new(vec![vec![2, 2], vec![4, 4]]).unwrap();
        for (demand, want) in [([3, 3], vec![1]), ([5, 5], vec![]), ([0, 0], vec![0, 1])] {
            let reqs = [Request::create(1, demand, 0)];
            assert_eq!(SimState::new(&c, &reqs, 0).unwrap().feasible().unwrap(), want);
        }
        let reqs = [Request::create(1, [1, 1], 0), Request::delete(1, [1, 1], 1)];
        let mut s = SimState::new(&c, &reqs, 0).unwrap();
        s.step(Action::Place(0)).unwrap();
        assert_eq!(s.feasible(), Err(SimError::NotACreateEvent));
    }

    #[test]
    fn delayed_release_frees_capacity_for_next_create() {
        let c = ClusterSpec::homogeneous(1, [4, 4]);
        let reqs = [
            Request::create(1, [4, 4], 0),
            Request::delete(1, [4, 4], 1),
            Request::create(2, [4, 4], 2),
        ];
        let mut s = SimState::new(&c, &reqs, 0).unwrap();
        assert!(s.step(Action::Place(0)).unwrap().placed);
        let out = s.step(Action::NoOp).unwrap();
        assert_eq!(out.reward, 0.0);
        assert_eq!(s.residual(0), [0, 0]);
        assert_eq!(s.queue(), [VmId(1)]);
        let out = s.step(Action::Place(0)).unwrap();
        assert_eq!(out.released, [(VmId(1), 0)]);
        assert!(out.placed);
        assert_eq!(s.placed(), 2);
        assert!(s.queue().is_empty());
    }

    #[test]
    fn infeasible_or_reject_terminates() {
        let c = ClusterSpec::homogeneous(1, [4, 4]);
        let reqs = [Request::create(1, [2, 2], 0), Request::create(2, [3, 3], 1)];
        let mut s = SimState::new(&c, &reqs, 0).unwrap();
        s.step(Action::Place(0)).unwrap();
        let out = s.step(Action::Place(0)).unwrap();
        assert!(out.terminal && out.reward == 0.0);
        assert_eq!(s.step(Action::Place(0)), Err(SimError::SteppedAfterTerminal));

        let mut s = SimState::new(&c, &reqs, 0).unwrap();
        assert!(s.step(Action::Reject).unwrap().terminal);
        assert_eq!(s.placed(), 0);
    }

    #[test]
    fn illegal_actions() {
        let c = ClusterSpec::homogeneous(1, [4, 4]);
        let reqs = [Request::create(1, [1, 1], 0), Request::delete(1, [1, 1], 1)];
        let mut s = SimState::new(&c, &reqs, 0).unwrap();
        assert!(matches!(s.step(Action::NoOp), Err(SimError::IllegalAction { .. })));
        assert!(matches!(s.step(Action::Place(3)), Err(SimError::IllegalAction { .. })));
        s.step(Action::Place(0)).unwrap();
        assert!(matches!(s.step(Action::Place(0)), Err(SimError::IllegalAction { .. })));
    }

    #[test]
    fn deletes_of_vms_before_start_are_ignored() {
        let c = ClusterSpec::homogeneous(1, [4, 4]);
        let reqs = [Request::create(1, [4, 4], 0), Request::delete(1, [4, 4], 1), Request::create(2, [4, 4], 2)];
        let r = run_episode(&Always(0), &c, &reqs, 1).unwrap();
        assert_eq!((r.scheduled_length, r.steps, r.failed), (1, 2, false));
    }

    #[test]
    fn episode_basics() {
        let c = ClusterSpec::homogeneous(1, [4, 4]);
        let reqs: Vec<_> = (0..3).map(|i| Request::create(i, [2, 2], i)).collect();
        let r = run_episode(&Always(0), &c, &reqs, 0).unwrap();
        assert_eq!((r.scheduled_length, r.steps, r.failed), (2, 3, true));
        assert_eq!(r.reward, 2.0);
        let r = run_episode(&Always(0), &c, &[], 0).unwrap();
        assert_eq!((r.scheduled_length, r.steps), (0, 0));
    }

    #[test]
    fn policy_errors_abort() {
        struct Broken;
        impl PlacementPolicy for Broken {
            fn decide(&self, _: &SimState<'_>) -> Result<Action, PolicyError> {
                Err(PolicyError::on_pm(0, "boom"))
            }
        }
        let c = ClusterSpec::homogeneous(1, [4, 4]);
        let reqs = [Request::create(1, [1, 1], 0)];
        let err = run_episode(&Broken, &c, &reqs, 0).unwrap_err();
        assert!(matches!(err, SimError::EpisodeAborted { cursor: 0, .. }));
    }

    #[test]
    fn shaping_hook_defaults_to_plain_count() {
        let c = ClusterSpec::homogeneous(1, [4, 8]);
        let reqs = [Request::create(1, [2, 4], 0)];
        let opts = EpisodeOptions { weights: RewardWeights { util: 1.0, vm_type: 1.0 }, record: false };
        let r = run_episode_with(&Always(0), &c, &reqs, 0, opts).unwrap();
        // residual [2,4] of [4,8] is balanced, demand volume is 0.5
        assert_eq!(r.reward, 1.0 + 1.0 + 0.5);
        assert_eq!(r.scheduled_length, 1);
    }
}
