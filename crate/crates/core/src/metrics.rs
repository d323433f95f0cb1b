//! Diversity and evaluation metrics.

use serde::Serialize;

use crate::dataset::Partition;
use crate::dpp::Selection;

/// Group earth mover's distance of a selection: the class-wise L1 gap
/// between the cohort's sample-weighted label mixture and the global label
/// distribution. Zero means the cohort mirrors the union exactly; the sum of
/// absolute proportion differences is at most 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GemdValue {
    pub value: f64,
    pub round: usize,
}

pub fn gemd(selection: &Selection, partition: &Partition) -> GemdValue {
    assert!(!selection.chosen.is_empty(), "empty selection");
    let classes = partition.global_hist.len();
    let global = partition.global_proportions();

    let mut mixture = vec![0.0f64; classes];
    let mut total = 0usize;
    for &c in &selection.chosen {
        let client = &partition.clients[c];
        total += client.len();
        for (j, &count) in client.label_hist.iter().enumerate() {
            mixture[j] += count as f64;
        }
    }
    let value = mixture
        .iter()
        .zip(&global)
        .map(|(&m, &g)| (m / total as f64 - g).abs())
        .sum();
    GemdValue {
        value,
        round: selection.round,
    }
}

/// Spearman rank correlation between two equal-length samples. Ties get the
/// average rank of their run.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = ranks(a);
    let rb = ranks(b);
    pearson(&ra, &rb)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("finite values"));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// First round (1-based) whose value reaches `threshold`, if any.
pub fn rounds_to_threshold(per_round: &[f64], threshold: f64) -> Option<usize> {
    per_round
        .iter()
        .position(|&v| v >= threshold)
        .map(|idx| idx + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{partition, synth_dataset, SkewSpec};

    #[test]
    fn full_selection_has_zero_gemd() {
        let ds = synth_dataset(200, 10, 0);
        let p = partition(&ds, 10, SkewSpec::Fraction(1.0), 0).unwrap();
        let sel = Selection {
            round: 1,
            chosen: (0..10).collect(),
        };
        assert!(gemd(&sel, &p).value.abs() < 1e-12);
    }

    #[test]
    fn single_pure_client_under_uniform_global_is_1_8() {
        // One pure-class client against a uniform 10-class global:
        // |1 - 0.1| + 9 * |0 - 0.1| = 1.8.
        let ds = synth_dataset(200, 10, 1);
        let p = partition(&ds, 10, SkewSpec::Fraction(1.0), 0).unwrap();
        let sel = Selection {
            round: 1,
            chosen: vec![3],
        };
        assert!((gemd(&sel, &p).value - 1.8).abs() < 1e-12);
    }

    #[test]
    fn two_complementary_pure_clients_cancel() {
        // Uniform 2-class global, both classes covered equally: GEMD = 0.
        let ds = synth_dataset(100, 2, 2);
        let p = partition(&ds, 2, SkewSpec::Fraction(1.0), 0).unwrap();
        let sel = Selection {
            round: 1,
            chosen: vec![0, 1],
        };
        assert!(gemd(&sel, &p).value.abs() < 1e-12);
    }

    #[test]
    fn covering_more_classes_strictly_lowers_gemd() {
        // Round-robin pure-class partition with 2N clients (each class is
        // dominant for two clients): a k-selection covering k distinct
        // classes beats one covering k - 1 (one class doubled), for every k.
        for classes in [4usize, 10] {
            let ds = synth_dataset(40 * classes, classes, 3);
            let p = partition(&ds, 2 * classes, SkewSpec::Fraction(1.0), 0).unwrap();
            for k in 2..=classes {
                let distinct = Selection {
                    round: 0,
                    chosen: (0..k).collect(),
                };
                // Clients 0..k-1 cover classes 0..k-1; client (classes + k - 2)
                // duplicates class k - 2.
                let mut overlap: Vec<usize> = (0..k - 1).collect();
                overlap.push(classes + k - 2);
                let fewer = Selection {
                    round: 0,
                    chosen: overlap,
                };
                assert!(
                    gemd(&distinct, &p).value < gemd(&fewer, &p).value - 1e-12,
                    "classes={classes} k={k}"
                );
            }
        }
    }

    #[test]
    fn gemd_bounds_hold_over_random_selections() {
        use rand::seq::index::sample;
        let ds = synth_dataset(600, 10, 4);
        let p = partition(&ds, 30, SkewSpec::Fraction(0.8), 0).unwrap();
        let mut rng = crate::rng::derive_rng(9, 0, crate::rng::Purpose::Selection);
        for round in 0..2000 {
            let k = 1 + (round % 10);
            let chosen: Vec<usize> = sample(&mut rng, 30, k).into_iter().collect();
            let g = gemd(
                &Selection {
                    round,
                    chosen,
                },
                &p,
            );
            assert!((0.0..=2.0).contains(&g.value), "round {round}: {g:?}");
        }
    }

    #[test]
    fn spearman_perfect_and_reversed() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [10.0, 20.0, 30.0, 40.0];
        assert!((spearman(&a, &b) - 1.0).abs() < 1e-12);
        let c = [4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&a, &c) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties() {
        let a = [1.0, 1.0, 2.0, 3.0];
        let b = [1.0, 1.0, 2.0, 3.0];
        assert!((spearman(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_crossing() {
        let acc = [0.1, 0.5, 0.92, 0.91, 0.95];
        assert_eq!(rounds_to_threshold(&acc, 0.9), Some(3));
        assert_eq!(rounds_to_threshold(&acc, 0.99), None);
        assert_eq!(rounds_to_threshold(&acc, 0.05), Some(1));
    }
}
