use mico_engine::{prune, EngineError, PruneConfig, ScoreMatrix};
use proptest::prelude::*;

/// Direct transcription of the retention rule over a row-major matrix.
fn retained(m: &[Vec<f64>], q1: f64, q2: f64, q3: f64) -> Vec<usize> {
    let k = m.len();
    let mut out = Vec::new();
    for o in 0..k {
        let mut star = f64::NEG_INFINITY;
        for row in m {
            star = star.max(row[o]);
        }
        let mut hits = 0.0;
        for j in 0..k {
            let mut bar = 0.0;
            for row in m {
                bar += row[j];
            }
            bar /= k as f64;
            if m[o][j] >= q2 * bar {
                hits += 1.0;
            }
        }
        if m[o][o] >= q1 * star && hits / k as f64 >= q3 {
            out.push(o);
        }
    }
    out
}

fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..8).prop_flat_map(|k| prop::collection::vec(prop::collection::vec((0u32..40).prop_map(|v| v as f64 / 4.0), k), k))
}

proptest! {
    #[test]
    fn matches_direct_rule(m in matrix(), q1 in 0.5f64..1.0, q2 in 0.5f64..1.2, q3 in 0.0f64..1.0) {
        let cfg = PruneConfig { q1, q2, q3 };
        let expect = retained(&m, q1, q2, q3);
        match prune(&ScoreMatrix::new(m).unwrap(), &cfg) {
            Ok(kept) => prop_assert_eq!(kept, expect),
            Err(EngineError::EmptyRetention) => prop_assert!(expect.is_empty()),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn looser_thresholds_keep_a_superset(m in matrix(), q in prop::array::uniform3(0.3f64..1.0), d in prop::array::uniform3(0.0f64..0.3)) {
        let sm = ScoreMatrix::new(m).unwrap();
        let tight = prune(&sm, &PruneConfig { q1: q[0], q2: q[1], q3: q[2] }).unwrap_or_default();
        let loose = prune(&sm, &PruneConfig { q1: q[0] - d[0], q2: q[1] - d[1], q3: q[2] - d[2] }).unwrap_or_default();
        prop_assert!(tight.iter().all(|i| loose.contains(i)));
    }

    #[test]
    fn zero_thresholds_keep_everything(m in matrix()) {
        let k = m.len();
        let kept = prune(&ScoreMatrix::new(m).unwrap(), &PruneConfig { q1: 0.0, q2: 0.0, q3: 0.0 }).unwrap();
        prop_assert_eq!(kept, (0..k).collect::<Vec<_>>());
    }
}

#[test]
fn specialist_without_breadth_is_dropped() {
    let m = vec![vec![1.0, 0.9, 0.9], vec![0.9, 1.0, 0.9], vec![0.2, 0.2, 1.0]];
    let kept = prune(&ScoreMatrix::new(m).unwrap(), &PruneConfig::default()).unwrap();
    assert_eq!(kept, vec![0, 1]);
}
