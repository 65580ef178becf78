use mico_core::trace::VmType;
use serde::{Deserialize, Serialize};

use crate::artifact::{PolicyArtifact, PolicyKind, Status};
use crate::sandbox::{CompiledPolicy, PolicyVmError, Sandbox, SelectorContext};

/// Inputs every candidate must handle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSuite {
    pub priority: Vec<(Vec<u64>, Vec<u64>)>,
    pub selector: Vec<SelectorContext>,
    pub n_options: usize,
}

impl ProbeSuite {
    /// Two-dimensional probes with the usual edge cases: zero demand, empty
    /// and full bins, exact fits, overfull items, single-type contexts.
    pub fn standard(n_options: usize) -> Self {
        let pairs: [([u64; 2], [u64; 2]); 14] = [
            ([4, 8], [2, 4]),
            ([64, 256], [1, 2]),
            ([64, 256], [32, 64]),
            ([16, 32], [16, 32]),
            ([8, 8], [0, 0]),
            ([0, 0], [0, 0]),
            ([0, 0], [1, 1]),
            ([2, 2], [4, 4]),
            ([3, 100], [3, 1]),
            ([100, 3], [1, 3]),
            ([1, 1], [1, 0]),
            ([50, 200], [4, 32]),
            ([7, 13], [5, 11]),
            ([1000, 4000], [999, 1]),
        ];
        let mut selector: Vec<SelectorContext> = VmType::ALL.iter().map(|&t| SelectorContext::single_type(t, 4)).collect();
        selector.push(SelectorContext::uniform(4));
        selector.push(SelectorContext {
            groups: vec![[0.4, 0.3, 0.1, 0.1, 0.1]; 4],
        });
        selector.push(SelectorContext {
            groups: vec![
                [0.8, 0.2, 0.0, 0.0, 0.0],
                [0.5, 0.3, 0.2, 0.0, 0.0],
                [0.2, 0.2, 0.2, 0.2, 0.2],
                [0.0, 0.0, 0.2, 0.3, 0.5],
            ],
        });
        selector.push(SelectorContext {
            groups: vec![
                [0.0, 0.0, 0.0, 0.0, 1.0],
                [1.0, 0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0, 1.0],
                [1.0, 0.0, 0.0, 0.0, 0.0],
            ],
        });
        selector.push(SelectorContext { groups: vec![[0.1, 0.1, 0.6, 0.1, 0.1]; 4] });
        Self {
            priority: pairs.iter().map(|(b, i)| (b.to_vec(), i.to_vec())).collect(),
            selector,
            n_options,
        }
    }

    pub fn len(&self, kind: PolicyKind) -> usize {
        match kind {
            PolicyKind::Priority => self.priority.len(),
            PolicyKind::Selector => self.selector.len(),
        }
    }

    pub fn is_empty(&self, kind: PolicyKind) -> bool {
        self.len(kind) == 0
    }
}

/// Something probes can be run against; implemented by compiled policies.
pub trait ProbeTarget {
    fn kind(&self) -> PolicyKind;
    fn priority(&self, bin: &[u64], item: &[u64]) -> Result<f64, PolicyVmError>;
    fn selector(&self, ctx: &SelectorContext) -> Result<f64, PolicyVmError>;
}

impl ProbeTarget for CompiledPolicy {
    fn kind(&self) -> PolicyKind {
        CompiledPolicy::kind(self)
    }

    fn priority(&self, bin: &[u64], item: &[u64]) -> Result<f64, PolicyVmError> {
        self.raw_priority(bin, item)
    }

    fn selector(&self, ctx: &SelectorContext) -> Result<f64, PolicyVmError> {
        self.raw_selector(ctx)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub compiled: bool,
    pub probes_passed: usize,
    pub probes_total: usize,
    pub deterministic: bool,
    pub in_range: bool,
    pub verdict: Status,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.verdict == Status::Valid
    }
}

/// Compiles `artifact`, runs the probe suite twice and records the verdict
/// in the artifact's status.
pub fn validate(sandbox: &Sandbox, artifact: &mut PolicyArtifact, probes: &ProbeSuite) -> ValidityReport {
    let report = match sandbox.compile(artifact) {
        Ok(handle) => validate_with(&handle, probes),
        Err(e) => ValidityReport {
            compiled: false,
            probes_passed: 0,
            probes_total: probes.len(artifact.kind),
            deterministic: false,
            in_range: false,
            verdict: Status::Invalid(format!("compile: {e}")),
        },
    };
    artifact.status = report.verdict.clone();
    report
}

pub fn validate_with<T: ProbeTarget + ?Sized>(target: &T, probes: &ProbeSuite) -> ValidityReport {
    let kind = target.kind();
    let run = |i: usize| match kind {
        PolicyKind::Priority => {
            let (bin, item) = &probes.priority[i];
            target.priority(bin, item)
        }
        PolicyKind::Selector => target.selector(&probes.selector[i]),
    };
    let in_range = |v: f64| match kind {
        PolicyKind::Priority => v.is_finite() || v == f64::NEG_INFINITY,
        PolicyKind::Selector => v.fract() == 0.0 && v >= 1.0 && v <= probes.n_options as f64,
    };

    let total = probes.len(kind);
    let mut passed = 0;
    let mut deterministic = true;
    let mut all_in_range = true;
    let mut first_fault = None;
    for i in 0..total {
        match (run(i), run(i)) {
            (Ok(a), Ok(b)) => {
                passed += 1;
                deterministic &= a.to_bits() == b.to_bits();
                all_in_range &= in_range(a) && in_range(b);
            }
            (Err(e), _) | (_, Err(e)) => {
                first_fault.get_or_insert(e);
            }
        }
    }
    let verdict = if let Some(e) = first_fault {
        Status::Invalid(format!("probes: {} of {total} failed, first: {e}", total - passed))
    } else if total == 0 {
        Status::Invalid("probes: empty suite".into())
    } else if !deterministic {
        Status::Invalid("deterministic".into())
    } else if !all_in_range {
        Status::Invalid("in_range".into())
    } else {
        Status::Valid
    };
    ValidityReport { compiled: true, probes_passed: passed, probes_total: total, deterministic, in_range: all_in_range, verdict }
}
