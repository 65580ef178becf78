use serde::{Deserialize, Serialize};

use super::{split_equal, RequestSequence, Scenario, TraceError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// Stop merging once this many clusters remain.
    pub target: Option<usize>,
    /// Without a target, merge while the closest pair is within this
    /// fraction of the largest pairwise row distance.
    pub rel_threshold: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { target: None, rel_threshold: 0.5 }
    }
}

/// A group of traces with similar cross-evaluation scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCluster {
    /// Trace closest on average to the other members.
    pub medoid: usize,
    pub members: Vec<usize>,
    pub scenario: Scenario,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Groups the equal slices of `seq` (one per score row) by average-linkage
/// agglomerative clustering over score rows.
///
/// `scores[i][j]` is the score of the policy learned on trace `i` evaluated
/// on trace `j`. The procedure has no random component.
pub fn cluster_scenarios(
    seq: &RequestSequence,
    scores: &[Vec<f64>],
    cfg: &ClusterConfig,
) -> Result<Vec<ScenarioCluster>, TraceError> {
    let n = scores.len();
    if n == 0 {
        return Err(TraceError::EmptySequence);
    }
    if let Some(row) = scores.iter().find(|r| r.len() != n) {
        return Err(TraceError::DimensionMismatch { expected: n, found: row.len() });
    }
    let traces = split_equal(seq, n)?;
    if traces.len() != n {
        return Err(TraceError::DimensionMismatch { expected: n, found: traces.len() });
    }

    let d: Vec<Vec<f64>> = scores.iter().map(|a| scores.iter().map(|b| dist(a, b)).collect()).collect();
    let max_d = d.iter().flatten().copied().fold(0.0, f64::max);
    let cutoff = cfg.rel_threshold * max_d;
    let target = cfg.target.unwrap_or(1).max(1);

    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let linkage = |a: &[usize], b: &[usize]| {
        a.iter().flat_map(|&i| b.iter().map(move |&j| (i, j))).map(|(i, j)| d[i][j]).sum::<f64>()
            / (a.len() * b.len()) as f64
    };
    while clusters.len() > target {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let l = linkage(&clusters[a], &clusters[b]);
                if best.is_none_or(|(bl, _, _)| l < bl) {
                    best = Some((l, a, b));
                }
            }
        }
        let Some((l, a, b)) = best else { break };
        if cfg.target.is_none() && l > cutoff {
            break;
        }
        let merged = clusters.remove(b);
        clusters[a].extend(merged);
        clusters[a].sort_unstable();
    }

    Ok(clusters
        .into_iter()
        .map(|members| {
            let medoid = *members
                .iter()
                .min_by(|&&x, &&y| {
                    let sx: f64 = members.iter().map(|&m| d[x][m]).sum();
                    let sy: f64 = members.iter().map(|&m| d[y][m]).sum();
                    sx.total_cmp(&sy).then(x.cmp(&y))
                })
                .expect("clusters are never empty");
            ScenarioCluster { medoid, scenario: traces[medoid].clone(), members }
        })
        .collect())
}
