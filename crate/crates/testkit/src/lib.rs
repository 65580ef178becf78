//! Reference implementations and random instances for tests.

use std::collections::HashMap;

use mico_core::sim::{Action, ClusterSpec, SimError, SimState};
use mico_core::trace::{Op, Request, RequestSequence};
use mico_core::VmId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Longest all-placed prefix found by trying every PM for every create,
/// stepping the real environment. No pruning, no memoisation.
pub fn brute_force_optimum(cluster: &ClusterSpec, requests: &[Request]) -> usize {
    fn go(state: SimState<'_>) -> usize {
        let mut state = state;
        while let Some(r) = state.pending() {
            if r.is_create() {
                break;
            }
            state.step(Action::NoOp).expect("noop on delete");
        }
        if state.pending().is_none() {
            return state.placed();
        }
        let mut best = state.placed();
        for pm in 0..state.n_pms() {
            let mut child = state.clone();
            let out = child.step(Action::Place(pm)).expect("legal placement");
            if out.placed {
                best = best.max(go(child));
            }
        }
        best
    }
    go(SimState::new(cluster, requests, 0).expect("valid instance"))
}

/// Σ hosted demand + residual == capacity, per PM and dimension.
pub fn conserved(state: &SimState<'_>) -> bool {
    let d = state.dims();
    let mut used = vec![vec![0u64; d]; state.n_pms()];
    for (_, pm, req) in state.allocations() {
        for (u, x) in used[pm].iter_mut().zip(&req.demand) {
            *u += x;
        }
    }
    (0..state.n_pms()).all(|i| (0..d).all(|j| state.residual(i)[j] + used[i][j] == state.capacity(i)[j]))
}

/// Drives one episode with pseudo-random actions (some rejects, some
/// infeasible PMs) and checks conservation, delete-release exactness and
/// first-failure freezing after every step.
pub fn check_episode(cluster: &ClusterSpec, requests: &[Request], choice_seed: u64) -> Result<(), String> {
    let mut state = SimState::new(cluster, requests, 0).map_err(|e| e.to_string())?;
    let mut pick = choice_seed;
    let mut hosts: HashMap<VmId, usize> = HashMap::new();
    let fail = |step: usize, what: &str| Err(format!("step {step}: {what}"));
    while let Some(req) = state.pending() {
        let step = state.cursor();
        let before: Vec<Vec<u64>> = (0..state.n_pms()).map(|i| state.residual(i).to_vec()).collect();
        let alloc_before = state.allocations().count();
        let action = if req.op == Op::Delete {
            Action::NoOp
        } else {
            pick = pick.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            if pick >> 60 == 0 {
                Action::Reject
            } else {
                Action::Place((pick >> 33) as usize % state.n_pms())
            }
        };
        let feasible = if req.is_create() { state.feasible().map_err(|e| e.to_string())? } else { vec![] };
        let out = state.step(action).map_err(|e| e.to_string())?;
        if !conserved(&state) {
            return fail(step, "capacity not conserved");
        }
        if out.placed != (out.reward == 1.0) || !(out.reward == 0.0 || out.reward == 1.0) {
            return fail(step, "reward disagrees with placement");
        }
        if req.op == Op::Delete {
            if before != (0..state.n_pms()).map(|i| state.residual(i).to_vec()).collect::<Vec<_>>() {
                return fail(step, "delete changed residual capacity before the next create");
            }
        } else {
            for (vm, pm) in &out.released {
                if hosts.remove(vm) != Some(*pm) {
                    return fail(step, "release returned resources to the wrong host");
                }
            }
            if state.allocations().count() + out.released.len() != alloc_before + usize::from(out.placed) {
                return fail(step, "allocation count drifted");
            }
            if let Action::Place(i) = action {
                if out.placed != feasible.contains(&i) {
                    return fail(step, "placement outcome disagrees with feasibility");
                }
                if out.placed {
                    hosts.insert(req.vm_id, i);
                }
            }
        }
        if !state.queue().iter().all(|vm| state.host_of(*vm).is_some()) {
            return fail(step, "queued VM without a host");
        }
        if out.terminal != (req.is_create() && !out.placed) {
            return fail(step, "terminal flag not set by the first failure");
        }
        if out.terminal {
            let frozen = (state.placed(), state.cursor());
            if state.step(Action::Reject) != Err(SimError::SteppedAfterTerminal) || (state.placed(), state.cursor()) != frozen {
                return fail(step, "state moved after the first failure");
            }
            if state.pending().is_some() {
                return fail(step, "pending request after the first failure");
            }
            break;
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct InstanceSpec {
    pub max_creates: usize,
    pub max_pms: usize,
    pub dims: usize,
    pub capacity: std::ops::RangeInclusive<u64>,
    pub demand: std::ops::RangeInclusive<u64>,
    /// Chance that a live VM is deleted before the next create.
    pub delete_prob: f64,
    pub heterogeneous: bool,
}

impl InstanceSpec {
    pub fn small() -> Self {
        Self {
            max_creates: 8,
            max_pms: 2,
            dims: 2,
            capacity: 4..=8,
            demand: 0..=5,
            delete_prob: 0.3,
            heterogeneous: true,
        }
    }

    pub fn medium() -> Self {
        Self { max_creates: 20, max_pms: 3, ..Self::small() }
    }
}

/// A random well-formed instance; deletes interleave with creates.
pub fn random_instance(spec: &InstanceSpec, seed: u64) -> (ClusterSpec, RequestSequence) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=spec.max_pms);
    let mut cap = || (0..spec.dims).map(|_| rng.random_range(spec.capacity.clone())).collect::<Vec<_>>();
    let capacities = if spec.heterogeneous {
        (0..n).map(|_| cap()).collect()
    } else {
        vec![cap(); n]
    };
    let creates = rng.random_range(0..=spec.max_creates);
    let mut requests = Vec::new();
    let mut live: Vec<(u64, Vec<u64>)> = Vec::new();
    let mut t = 0;
    for id in 0..creates as u64 {
        while !live.is_empty() && rng.random_bool(spec.delete_prob) {
            let (vm, demand) = live.swap_remove(rng.random_range(0..live.len()));
            requests.push(Request::delete(vm, demand, t));
            t += rng.random_range(0..2);
        }
        let demand: Vec<u64> = (0..spec.dims).map(|_| rng.random_range(spec.demand.clone())).collect();
        requests.push(Request::create(id, demand.clone(), t));
        live.push((id, demand));
        t += rng.random_range(0..2);
    }
    (ClusterSpec::new(capacities).expect("positive capacities"), RequestSequence::new(requests).expect("well-formed"))
}

/// Small-dominated block: CPU-tight best fit places all nine, residual
/// spreading and plain best-fit strand the last ones.
pub const SMALL_BLOCK: [[u64; 2]; 9] =
    [[12, 6], [10, 16], [2, 4], [1, 4], [1, 2], [1, 4], [10, 4], [1, 2], [1, 2]];
/// Large-dominated block that only a spreading policy completes.
pub const LARGE_HARD_BLOCK: [[u64; 2]; 4] = [[9, 18], [9, 18], [11, 22], [11, 22]];
/// Large-dominated block every policy completes.
pub const LARGE_EASY_BLOCK: [[u64; 2]; 2] = [[9, 18], [9, 18]];

/// Cluster for the two-regime workload.
pub fn regime_cluster() -> ClusterSpec {
    ClusterSpec::homogeneous(2, vec![20, 40])
}

/// Two regimes back to back: `small` small blocks, then `easy` easy large
/// blocks, then `hard` hard large blocks. Each block creates its VMs and
/// then deletes all of them, so blocks are independent.
pub fn two_regime(small: usize, easy: usize, hard: usize) -> RequestSequence {
    let blocks = std::iter::repeat_n(&SMALL_BLOCK[..], small)
        .chain(std::iter::repeat_n(&LARGE_EASY_BLOCK[..], easy))
        .chain(std::iter::repeat_n(&LARGE_HARD_BLOCK[..], hard));
    let mut requests = Vec::new();
    let mut id = 0u64;
    let mut t = 0u64;
    for block in blocks {
        let first = id;
        for d in block {
            requests.push(Request::create(id, d.to_vec(), t));
            id += 1;
            t += 1;
        }
        for (k, d) in block.iter().enumerate() {
            requests.push(Request::delete(first + k as u64, d.to_vec(), t));
            t += 1;
        }
    }
    RequestSequence::new(requests).expect("well-formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_force_small_cases() {
        let c = ClusterSpec::homogeneous(1, [4, 4]);
        let reqs: Vec<_> = (0..3).map(|i| Request::create(i, [2, 2], i)).collect();
        assert_eq!(brute_force_optimum(&c, &reqs), 2);
        let reqs = [Request::create(1, [4, 4], 0), Request::delete(1, [4, 4], 1), Request::create(2, [4, 4], 2)];
        assert_eq!(brute_force_optimum(&c, &reqs), 2);
    }

    #[test]
    fn regime_blocks_are_feasible_offline() {
        let c = regime_cluster();
        for block in [&SMALL_BLOCK[..], &LARGE_HARD_BLOCK[..], &LARGE_EASY_BLOCK[..]] {
            let reqs: Vec<_> = block.iter().enumerate().map(|(i, d)| Request::create(i as u64, d.to_vec(), i as u64)).collect();
            assert_eq!(brute_force_optimum(&c, &reqs), block.len());
        }
        assert_eq!(two_regime(2, 1, 1).len(), 2 * 18 + 4 + 8);
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = InstanceSpec::small();
        assert_eq!(random_instance(&spec, 3).1, random_instance(&spec, 3).1);
    }
}
