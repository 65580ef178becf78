use rand::distr::{Distribution, Uniform, weighted::WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use serde::{Deserialize, Serialize};

use super::{Request, RequestSequence, TraceError, VmType};

/// VM lifetime distribution, in trace time units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifetime {
    /// No deletes are emitted.
    Never,
    Fixed(u64),
    /// Inclusive range.
    Uniform { lo: u64, hi: u64 },
    Exponential { mean: f64 },
}

impl Lifetime {
    fn sample<R: Rng>(&self, rng: &mut R) -> Result<Option<u64>, TraceError> {
        Ok(match *self {
            Lifetime::Never => None,
            Lifetime::Fixed(d) => Some(d.max(1)),
            Lifetime::Uniform { lo, hi } => {
                let u = Uniform::new_inclusive(lo.max(1), hi.max(1))
                    .map_err(|e| TraceError::InvalidMixture(format!("lifetime range: {e}")))?;
                Some(u.sample(rng))
            }
            Lifetime::Exponential { mean } => {
                let e = Exp::new(1.0 / mean)
                    .map_err(|e| TraceError::InvalidMixture(format!("lifetime mean: {e}")))?;
                Some((e.sample(rng).ceil() as u64).max(1))
            }
        })
    }
}

/// A stretch of the workload with a stationary type mix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub creates: usize,
    /// Probability of each [`VmType`], indexed by [`VmType::index`].
    pub mixture: [f64; 5],
    pub lifetime: Lifetime,
}

impl Segment {
    pub fn pure(ty: VmType, creates: usize, lifetime: Lifetime) -> Self {
        let mut mixture = [0.0; 5];
        mixture[ty.index()] = 1.0;
        Self { creates, mixture, lifetime }
    }
}

/// Candidate demand vectors per type; one is drawn uniformly per create.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandCatalog {
    pub demands: [Vec<Vec<u64>>; 5],
}

impl Default for DemandCatalog {
    /// Two-dimensional (CPU, memory) shapes consistent with the default
    /// classification thresholds.
    fn default() -> Self {
        Self {
            demands: [
                vec![vec![1, 2], vec![2, 4]],
                vec![vec![2, 8], vec![4, 4]],
                vec![vec![4, 8], vec![8, 16]],
                vec![vec![4, 32], vec![16, 16]],
                vec![vec![16, 32], vec![32, 64]],
            ],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MixtureSchedule {
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub catalog: DemandCatalog,
}

impl MixtureSchedule {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments, catalog: DemandCatalog::default() }
    }

    fn validate(&self) -> Result<(), TraceError> {
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.mixture.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(TraceError::InvalidMixture(format!("segment {i}: probability outside [0,1]")));
            }
            let total: f64 = seg.mixture.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(TraceError::InvalidMixture(format!("segment {i}: probabilities sum to {total}")));
            }
        }
        for ty in VmType::ALL {
            let used = self.segments.iter().any(|s| s.mixture[ty.index()] > 0.0);
            if used && self.catalog.demands[ty.index()].is_empty() {
                return Err(TraceError::InvalidMixture(format!("no demand shapes for {ty}")));
            }
        }
        Ok(())
    }
}

/// Generates a well-formed sequence with one create per time unit and a
/// matching delete after each sampled lifetime. At equal timestamps deletes
/// precede creates. The trace ends at the last create: VMs still alive then
/// get no delete, as in a truncated production trace.
pub fn synth_workload(spec: &MixtureSchedule, seed: u64) -> Result<RequestSequence, TraceError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // (time, 0 = delete / 1 = create, tie-break, request)
    let mut events: Vec<(u64, u8, u64, Request)> = Vec::new();
    let mut next_id = 0u64;
    for seg in &spec.segments {
        let types = WeightedIndex::new(seg.mixture)
            .map_err(|e| TraceError::InvalidMixture(e.to_string()))?;
        for _ in 0..seg.creates {
            let ty = types.sample(&mut rng);
            let shapes = &spec.catalog.demands[ty];
            let demand = shapes[rng.random_range(0..shapes.len())].clone();
            let t = next_id;
            if let Some(life) = seg.lifetime.sample(&mut rng)? {
                events.push((t + life, 0, next_id, Request::delete(next_id, demand.clone(), t + life)));
            }
            events.push((t, 1, next_id, Request::create(next_id, demand, t)));
            next_id += 1;
        }
    }
    let end = next_id.saturating_sub(1);
    events.retain(|e| e.0 <= end);
    events.sort_by_key(|e| (e.0, e.1, e.2));
    RequestSequence::new(events.into_iter().map(|e| e.3).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{classify_vm, Thresholds};

    #[test]
    fn catalog_matches_default_thresholds() {
        let th = Thresholds::default();
        let cat = DemandCatalog::default();
        for ty in VmType::ALL {
            for d in &cat.demands[ty.index()] {
                assert_eq!(classify_vm(d, &th).unwrap(), ty, "{d:?}");
            }
        }
    }

    #[test]
    fn all_small_segment() {
        let spec = MixtureSchedule::new(vec![Segment::pure(VmType::Small, 10, Lifetime::Fixed(3))]);
        let seq = synth_workload(&spec, 1).unwrap();
        assert_eq!(seq.creates(), 10);
        // creates at 0..=9, deletes at 3..=12; the last three fall past the end
        assert_eq!(seq.len(), 17);
        assert_eq!(seq.iter().last().unwrap().op, crate::trace::Op::Create);
        let th = Thresholds::default();
        assert!(seq.iter().all(|r| classify_vm(&r.demand, &th).unwrap() == VmType::Small));
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = MixtureSchedule::new(vec![Segment {
            creates: 200,
            mixture: [0.2; 5],
            lifetime: Lifetime::Exponential { mean: 20.0 },
        }]);
        let a = synth_workload(&spec, 9).unwrap();
        assert_eq!(a, synth_workload(&spec, 9).unwrap());
        assert_ne!(a, synth_workload(&spec, 10).unwrap());
    }

    #[test]
    fn rejects_bad_mixture() {
        let spec = MixtureSchedule::new(vec![Segment {
            creates: 1,
            mixture: [0.5, 0.5, 0.1, 0.0, 0.0],
            lifetime: Lifetime::Never,
        }]);
        assert!(matches!(synth_workload(&spec, 0), Err(TraceError::InvalidMixture(_))));
    }
}
