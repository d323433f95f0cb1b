//! Lloyd's k-means over profile vectors, used by the profile-clustering
//! selection baseline. Deterministic per rng stream; every cluster is
//! guaranteed nonempty (requires k <= number of points).

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

const MAX_ITERS: usize = 100;

/// Clusters `points` into k groups and returns the member indices per
/// cluster, each sorted ascending.
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let n = points.len();
    assert!(k >= 1 && k <= n, "k = {k} outside [1, {n}]");
    let dim = points[0].len();

    // Seed centers with k distinct points.
    let mut centers: Vec<Vec<f64>> = sample(rng, n, k)
        .into_iter()
        .map(|i| points[i].clone())
        .collect();

    let mut assignment = vec![0usize; n];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = nearest(p, &centers);
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }

        // Recompute centers; re-seat empty clusters on the point farthest
        // from its center inside the largest cluster.
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; dim]; k];
        for (i, p) in points.iter().enumerate() {
            counts[assignment[i]] += 1;
            for (s, &v) in sums[assignment[i]].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let donor = steal_farthest(points, &assignment, &centers, &counts);
                assignment[donor] = c;
                counts[c] = 1;
                centers[c] = points[donor].clone();
                changed = true;
                continue;
            }
            for (s, sum) in centers[c].iter_mut().zip(&sums[c]) {
                *s = sum / counts[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }

    let mut clusters = vec![Vec::new(); k];
    for (i, &c) in assignment.iter().enumerate() {
        clusters[c].push(i);
    }
    // Post-pass: if an empty cluster survived the iteration cap, donate one
    // member from the largest cluster.
    loop {
        let Some(empty) = clusters.iter().position(|c| c.is_empty()) else {
            break;
        };
        let largest = (0..k)
            .max_by_key(|&c| clusters[c].len())
            .expect("k >= 1 clusters");
        let donor = clusters[largest].pop().expect("largest is nonempty");
        clusters[empty].push(donor);
    }
    for c in clusters.iter_mut() {
        c.sort_unstable();
    }
    clusters
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, center) in centers.iter().enumerate() {
        let d: f64 = p.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

fn steal_farthest(
    points: &[Vec<f64>],
    assignment: &[usize],
    centers: &[Vec<f64>],
    counts: &[usize],
) -> usize {
    let largest = (0..counts.len())
        .max_by_key(|&c| counts[c])
        .expect("nonempty counts");
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, p) in points.iter().enumerate() {
        if assignment[i] != largest {
            continue;
        }
        let d: f64 = p
            .iter()
            .zip(&centers[largest])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d > best.0 {
            best = (d, i);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_rng, Purpose};

    #[test]
    fn separates_obvious_blobs() {
        let mut points = Vec::new();
        for i in 0..10 {
            points.push(vec![i as f64 * 0.01, 0.0]);
        }
        for i in 0..10 {
            points.push(vec![100.0 + i as f64 * 0.01, 0.0]);
        }
        let mut rng = derive_rng(0, 0, Purpose::Kmeans);
        let clusters = kmeans(&points, 2, &mut rng);
        let mut sizes: Vec<usize> = clusters.iter().map(|c| c.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![10, 10]);
        // Members of each cluster come from the same blob.
        for c in &clusters {
            let all_low = c.iter().all(|&i| i < 10);
            let all_high = c.iter().all(|&i| i >= 10);
            assert!(all_low || all_high);
        }
    }

    #[test]
    fn every_cluster_nonempty_even_with_duplicates() {
        let points = vec![vec![1.0, 1.0]; 6];
        let mut rng = derive_rng(1, 0, Purpose::Kmeans);
        let clusters = kmeans(&points, 4, &mut rng);
        assert_eq!(clusters.len(), 4);
        assert!(clusters.iter().all(|c| !c.is_empty()));
        let total: usize = clusters.iter().map(|c| c.len()).sum();
        assert_eq!(total, 6);
    }

    #[test]
    fn deterministic_per_stream() {
        let points: Vec<Vec<f64>> = (0..20).map(|i| vec![(i * 7 % 13) as f64, (i % 5) as f64]).collect();
        let a = kmeans(&points, 4, &mut derive_rng(2, 0, Purpose::Kmeans));
        let b = kmeans(&points, 4, &mut derive_rng(2, 0, Purpose::Kmeans));
        assert_eq!(a, b);
    }
}
