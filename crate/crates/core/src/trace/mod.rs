//! VM request streams and everything derived from them.

mod classify;
mod cluster;
mod parse;
mod scenario;
mod synth;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classify::{classify_vm, Thresholds};
pub use cluster::{cluster_scenarios, ClusterConfig, ScenarioCluster};
pub use parse::{parse_trace, read_trace, write_canonical, ColumnRef, TraceMapping};
pub use scenario::{
    generate_scenarios, split_equal, split_train_test, Scenario, SplitOffsets, SplitSpec, Window,
};
pub use synth::{synth_workload, DemandCatalog, Lifetime, MixtureSchedule, Segment};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("delete for vm {vm_id} without a live create")]
    UnmatchedDelete { vm_id: VmId },
    #[error("negative demand for vm {vm_id} at line {line}")]
    NegativeDemand { vm_id: VmId, line: usize },
    #[error("vm {vm_id} created twice while still alive")]
    DuplicateCreate { vm_id: VmId },
    #[error("delete of vm {vm_id} carries a demand different from its create")]
    DemandMismatch { vm_id: VmId },
    #[error("request {index} goes back in time")]
    NonMonotoneTime { index: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cut points must be strictly increasing and cover two dimensions")]
    InvalidThresholds,
    #[error("empty request sequence")]
    EmptySequence,
    #[error("window length must be positive")]
    InvalidWindow,
    #[error("scenario of length {len} is shorter than {n_starts} starting points")]
    ScenarioTooShort { len: usize, n_starts: usize },
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VmId(pub u64);

impl fmt::Display for VmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Create,
    Delete,
}

/// One exogenous event of the trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub vm_id: VmId,
    pub demand: Vec<u64>,
    pub op: Op,
    pub time: u64,
}

impl Request {
    pub fn create(vm_id: u64, demand: impl Into<Vec<u64>>, time: u64) -> Self {
        Self { vm_id: VmId(vm_id), demand: demand.into(), op: Op::Create, time }
    }

    pub fn delete(vm_id: u64, demand: impl Into<Vec<u64>>, time: u64) -> Self {
        Self { vm_id: VmId(vm_id), demand: demand.into(), op: Op::Delete, time }
    }

    pub fn is_create(&self) -> bool {
        self.op == Op::Create
    }
}

/// The five VM categories used for selector context features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VmType {
    Small,
    MediumSmall,
    MediumMedium,
    MediumLarge,
    Large,
}

impl VmType {
    pub const ALL: [VmType; 5] = [
        VmType::Small,
        VmType::MediumSmall,
        VmType::MediumMedium,
        VmType::MediumLarge,
        VmType::Large,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Key used in selector context maps.
    pub fn key(self) -> &'static str {
        match self {
            VmType::Small => "small",
            VmType::MediumSmall => "medium_small",
            VmType::MediumMedium => "medium_medium",
            VmType::MediumLarge => "medium_large",
            VmType::Large => "large",
        }
    }
}

impl fmt::Display for VmType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// A validated, time-ordered request stream.
///
/// Every delete refers to a VM created earlier and still alive, and carries
/// the same demand as that create.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Request>", into = "Vec<Request>")]
pub struct RequestSequence {
    requests: Vec<Request>,
}

impl RequestSequence {
    pub fn new(requests: Vec<Request>) -> Result<Self, TraceError> {
        validate(&requests)?;
        Ok(Self { requests })
    }

    pub fn requests(&self) -> &[Request] {
        &self.requests
    }

    /// Number of events, `T`.
    pub fn horizon(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn dims(&self) -> Option<usize> {
        self.requests.first().map(|r| r.demand.len())
    }

    pub fn creates(&self) -> usize {
        self.requests.iter().filter(|r| r.is_create()).count()
    }

    pub fn into_requests(self) -> Vec<Request> {
        self.requests
    }
}

impl TryFrom<Vec<Request>> for RequestSequence {
    type Error = TraceError;

    fn try_from(requests: Vec<Request>) -> Result<Self, Self::Error> {
        Self::new(requests)
    }
}

impl From<RequestSequence> for Vec<Request> {
    fn from(seq: RequestSequence) -> Self {
        seq.requests
    }
}

impl std::ops::Deref for RequestSequence {
    type Target = [Request];

    fn deref(&self) -> &[Request] {
        &self.requests
    }
}

fn validate(requests: &[Request]) -> Result<(), TraceError> {
    let dims = requests.first().map(|r| r.demand.len()).unwrap_or(0);
    let mut live: HashMap<VmId, &[u64]> = HashMap::new();
    let mut last_time = 0;
    for (index, r) in requests.iter().enumerate() {
        if r.demand.len() != dims {
            return Err(TraceError::DimensionMismatch { expected: dims, found: r.demand.len() });
        }
        if r.time < last_time {
            return Err(TraceError::NonMonotoneTime { index });
        }
        last_time = r.time;
        match r.op {
            Op::Create => {
                if live.insert(r.vm_id, &r.demand).is_some() {
                    return Err(TraceError::DuplicateCreate { vm_id: r.vm_id });
                }
            }
            Op::Delete => match live.remove(&r.vm_id) {
                None => return Err(TraceError::UnmatchedDelete { vm_id: r.vm_id }),
                Some(d) if d != r.demand.as_slice() => {
                    return Err(TraceError::DemandMismatch { vm_id: r.vm_id })
                }
                Some(_) => {}
            },
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unmatched_delete() {
        let err = RequestSequence::new(vec![Request::delete(3, [1, 1], 0)]).unwrap_err();
        assert!(matches!(err, TraceError::UnmatchedDelete { vm_id: VmId(3) }));
    }

    #[test]
    fn rejects_time_travel_and_mismatch() {
        let err = RequestSequence::new(vec![
            Request::create(1, [1, 1], 5),
            Request::create(2, [1, 1], 4),
        ])
        .unwrap_err();
        assert!(matches!(err, TraceError::NonMonotoneTime { index: 1 }));

        let err = RequestSequence::new(vec![
            Request::create(1, [1, 1], 0),
            Request::delete(1, [2, 1], 1),
        ])
        .unwrap_err();
        assert!(matches!(err, TraceError::DemandMismatch { .. }));
    }

    #[test]
    fn recreate_after_delete_is_fine() {
        let seq = RequestSequence::new(vec![
            Request::create(1, [1, 1], 0),
            Request::delete(1, [1, 1], 1),
            Request::create(1, [2, 2], 2),
        ])
        .unwrap();
        assert_eq!(seq.horizon(), 3);
        assert_eq!(seq.creates(), 2);
    }
}
