//! Exact offline optimum for small instances.
//!
//! The objective is the longest prefix of creates that can all be placed
//! with full knowledge of the sequence. Since the environment releases
//! queued VMs before every create, releasing at the delete itself gives the
//! same feasible sets, which the search uses.
//!
//! The number of placements made so far is a function of the cursor, so two
//! nodes with the same cursor and the same multiset of PM configurations
//! have identical futures and identical pasts; the search keeps a visited set
//! over that canonical key and prunes with a relaxed aggregate-capacity
//! bound.

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Parallelism;
use crate::sim::{ClusterSpec, SimError};
use crate::trace::{Request, VmId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleResult {
    pub optimal_length: usize,
    pub nodes_explored: u64,
    /// The search closed within its limits.
    pub proven: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("search budget exhausted; best found {}", .0.optimal_length)]
    BudgetExhausted(OracleResult),
    #[error("instance with {creates} creates on {n_pms} PMs exceeds the desk-scale guard")]
    InstanceTooLarge { creates: usize, n_pms: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleLimits {
    pub max_nodes: u64,
    pub max_time: Option<Duration>,
    /// Lift the `creates <= 25 || N <= 4` guard.
    pub allow_large: bool,
    pub parallelism: Parallelism,
}

impl Default for OracleLimits {
    fn default() -> Self {
        Self { max_nodes: 20_000_000, max_time: None, allow_large: false, parallelism: Parallelism::Parallel }
    }
}

struct Instance<'a> {
    requests: &'a [Request],
    dims: usize,
    n: usize,
    caps: Vec<u64>,
    max_cap: Vec<u64>,
    /// For a delete: index of its create, if that create is in range.
    create_of: Vec<Option<usize>>,
    /// For a create: index of its delete, or `len` if it never leaves.
    delete_at: Vec<usize>,
    /// Creates strictly before each index.
    creates_before: Vec<usize>,
    total_creates: usize,
}

impl<'a> Instance<'a> {
    fn new(cluster: &ClusterSpec, requests: &'a [Request]) -> Result<Self, SimError> {
        cluster.validate()?;
        let dims = cluster.dims();
        if let Some(r) = requests.iter().find(|r| r.demand.len() != dims) {
            return Err(SimError::DimensionMismatch { expected: dims, found: r.demand.len() });
        }
        let len = requests.len();
        let mut create_of = vec![None; len];
        let mut delete_at = vec![len; len];
        let mut live = std::collections::HashMap::<VmId, usize>::new();
        let mut creates_before = Vec::with_capacity(len + 1);
        let mut c = 0;
        for (i, r) in requests.iter().enumerate() {
            creates_before.push(c);
            if r.is_create() {
                live.insert(r.vm_id, i);
                c += 1;
            } else if let Some(ci) = live.remove(&r.vm_id) {
                create_of[i] = Some(ci);
                delete_at[ci] = i;
            }
        }
        creates_before.push(c);
        let max_cap = (0..dims).map(|j| cluster.capacities.iter().map(|cap| cap[j]).max().unwrap_or(0)).collect();
        Ok(Self {
            requests,
            dims,
            n: cluster.n_pms(),
            caps: cluster.capacities.concat(),
            max_cap,
            create_of,
            delete_at,
            creates_before,
            total_creates: c,
        })
    }
}

#[derive(Clone)]
struct Node {
    cursor: usize,
    avail: Vec<u64>,
    /// Host of each create index (`u16::MAX` when not placed).
    host: Vec<u16>,
}

const UNPLACED: u16 = u16::MAX;

impl Node {
    /// Applies deletes until the cursor rests on a create or the end.
    fn settle(&mut self, inst: &Instance<'_>) {
        while let Some(r) = inst.requests.get(self.cursor) {
            if r.is_create() {
                break;
            }
            if let Some(ci) = inst.create_of[self.cursor] {
                let pm = self.host[ci];
                if pm != UNPLACED {
                    let pm = pm as usize;
                    for (a, d) in self.avail[pm * inst.dims..(pm + 1) * inst.dims].iter_mut().zip(&r.demand) {
                        *a += d;
                    }
                }
            }
            self.cursor += 1;
        }
    }

    fn fits(&self, inst: &Instance<'_>, pm: usize, demand: &[u64]) -> bool {
        self.avail[pm * inst.dims..(pm + 1) * inst.dims].iter().zip(demand).all(|(a, d)| a >= d)
    }

    fn place(&self, inst: &Instance<'_>, pm: usize) -> Node {
        let mut child = self.clone();
        let demand = &inst.requests[self.cursor].demand;
        for (a, d) in child.avail[pm * inst.dims..(pm + 1) * inst.dims].iter_mut().zip(demand) {
            *a -= d;
        }
        child.host[self.cursor] = pm as u16;
        child.cursor += 1;
        child.settle(inst);
        child
    }

    /// Live VMs on `pm` that will still be released in the future.
    fn pending_releases<'n>(&'n self, inst: &'n Instance<'_>, pm: usize) -> impl Iterator<Item = usize> + 'n {
        let cursor = self.cursor;
        let delete_at = &inst.delete_at;
        let len = inst.requests.len();
        self.host[..cursor]
            .iter()
            .enumerate()
            .filter(move |&(ci, &h)| h as usize == pm && delete_at[ci] >= cursor && delete_at[ci] < len)
            .map(|(ci, _)| ci)
    }

    fn key(&self, inst: &Instance<'_>) -> Vec<u64> {
        let d = inst.dims;
        let mut blocks: Vec<Vec<u64>> = (0..inst.n)
            .map(|pm| {
                let mut b: Vec<u64> = inst.caps[pm * d..(pm + 1) * d].to_vec();
                b.extend_from_slice(&self.avail[pm * d..(pm + 1) * d]);
                b.extend(self.pending_releases(inst, pm).map(|ci| ci as u64));
                b
            })
            .collect();
        blocks.sort_unstable();
        let mut key = vec![self.cursor as u64];
        for b in blocks {
            key.push(b.len() as u64);
            key.extend(b);
        }
        key
    }

    /// Creates from the cursor on that fit if all PMs were pooled into one.
    fn upper_bound(&self, inst: &Instance<'_>) -> usize {
        let d = inst.dims;
        let mut pool: Vec<u64> = (0..d).map(|j| (0..inst.n).map(|pm| self.avail[pm * d + j]).sum()).collect();
        let mut count = 0;
        for i in self.cursor..inst.requests.len() {
            let r = &inst.requests[i];
            if r.is_create() {
                let fits = pool.iter().zip(&r.demand).all(|(p, x)| p >= x)
                    && inst.max_cap.iter().zip(&r.demand).all(|(c, x)| c >= x);
                if !fits {
                    break;
                }
                for (p, x) in pool.iter_mut().zip(&r.demand) {
                    *p -= x;
                }
                count += 1;
            } else if let Some(ci) = inst.create_of[i] {
                if ci >= self.cursor || self.host[ci] != UNPLACED {
                    for (p, x) in pool.iter_mut().zip(&r.demand) {
                        *p += x;
                    }
                }
            }
        }
        count
    }
}

struct Shared {
    best: AtomicUsize,
    nodes: AtomicU64,
    aborted: AtomicBool,
    deadline: Option<Instant>,
    max_nodes: u64,
}

struct Search<'s, 'a> {
    inst: &'s Instance<'a>,
    shared: &'s Shared,
    visited: HashSet<Vec<u64>>,
}

impl Search<'_, '_> {
    fn out_of_budget(&self) -> bool {
        if self.shared.aborted.load(Ordering::Relaxed) {
            return true;
        }
        let n = self.shared.nodes.fetch_add(1, Ordering::Relaxed) + 1;
        let late = n % 1024 == 0 && self.shared.deadline.is_some_and(|d| Instant::now() >= d);
        if n > self.shared.max_nodes || late {
            self.shared.aborted.store(true, Ordering::Relaxed);
            return true;
        }
        false
    }

    fn children(&self, node: &Node) -> Vec<Node> {
        let inst = self.inst;
        let d = inst.dims;
        let demand = &inst.requests[node.cursor].demand;
        let mut scored: Vec<(f64, usize)> = Vec::new();
        for pm in 0..inst.n {
            if !node.fits(inst, pm, demand) {
                continue;
            }
            let cap = &inst.caps[pm * d..(pm + 1) * d];
            let av = &node.avail[pm * d..(pm + 1) * d];
            // interchangeable PMs: same capacity, same residual, nothing
            // left to release
            let settled = |q: usize| node.pending_releases(inst, q).next().is_none();
            let twin = settled(pm)
                && scored.iter().any(|&(_, q)| {
                    &inst.caps[q * d..(q + 1) * d] == cap && &node.avail[q * d..(q + 1) * d] == av && settled(q)
                });
            if twin {
                continue;
            }
            let slack: f64 = av.iter().zip(demand).zip(cap).map(|((&a, &x), &c)| (a - x) as f64 / c as f64).sum();
            scored.push((slack, pm));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.into_iter().map(|(_, pm)| node.place(inst, pm)).collect()
    }

    fn dfs(&mut self, node: Node) {
        if self.out_of_budget() {
            return;
        }
        let inst = self.inst;
        let placed = inst.creates_before[node.cursor];
        let best = self.shared.best.fetch_max(placed, Ordering::Relaxed).max(placed);
        if node.cursor >= inst.requests.len() || best >= inst.total_creates {
            return;
        }
        if placed + node.upper_bound(inst) <= best {
            return;
        }
        if !self.visited.insert(node.key(inst)) {
            return;
        }
        for child in self.children(&node) {
            self.dfs(child);
            if self.shared.best.load(Ordering::Relaxed) >= inst.total_creates {
                return;
            }
        }
    }
}

pub fn offline_optimal(
    cluster: &ClusterSpec,
    requests: &[Request],
    limits: &OracleLimits,
) -> Result<OracleResult, OracleError> {
    let inst = Instance::new(cluster, requests)?;
    if !limits.allow_large && inst.total_creates > 25 && inst.n > 4 {
        return Err(OracleError::InstanceTooLarge { creates: inst.total_creates, n_pms: inst.n });
    }
    if inst.n >= UNPLACED as usize {
        return Err(OracleError::InstanceTooLarge { creates: inst.total_creates, n_pms: inst.n });
    }
    let shared = Shared {
        best: AtomicUsize::new(0),
        nodes: AtomicU64::new(0),
        aborted: AtomicBool::new(false),
        deadline: limits.max_time.map(|t| Instant::now() + t),
        max_nodes: limits.max_nodes,
    };
    let mut root = Node { cursor: 0, avail: inst.caps.clone(), host: vec![UNPLACED; requests.len()] };
    root.settle(&inst);

    if limits.parallelism.is_parallel() {
        // Expand breadth-first until there is enough independent work, then
        // search the frontier in parallel against a shared incumbent.
        let want = 4 * rayon_threads();
        let mut frontier = vec![root];
        let probe = Search { inst: &inst, shared: &shared, visited: HashSet::new() };
        while frontier.len() < want {
            let expandable = frontier.iter().any(|n| n.cursor < requests.len());
            if !expandable {
                break;
            }
            let mut next = Vec::new();
            for n in std::mem::take(&mut frontier) {
                shared.best.fetch_max(inst.creates_before[n.cursor], Ordering::Relaxed);
                if n.cursor < requests.len() {
                    next.extend(probe.children(&n));
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        limits.parallelism.map(&frontier, |n| {
            Search { inst: &inst, shared: &shared, visited: HashSet::new() }.dfs(n.clone())
        });
    } else {
        Search { inst: &inst, shared: &shared, visited: HashSet::new() }.dfs(root);
    }

    let result = OracleResult {
        optimal_length: shared.best.load(Ordering::Relaxed),
        nodes_explored: shared.nodes.load(Ordering::Relaxed),
        proven: !shared.aborted.load(Ordering::Relaxed),
    };
    if result.proven {
        Ok(result)
    } else {
        Err(OracleError::BudgetExhausted(result))
    }
}

fn rayon_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
