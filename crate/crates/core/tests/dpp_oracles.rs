//! Eigendecomposition and k-DPP sampler checks against independent oracles:
//! characteristic-polynomial roots for the Jacobi solver and brute-force
//! subset enumeration for sampled frequencies.

mod common;

use common::{charpoly_eigenvalues_4x4, chi_square_stat, tv_distance};
use feddpp::dpp::{esp, kdpp_pmf_bruteforce, kdpp_sample, subsets_of_size};
use feddpp::linalg::{eigh, SquareMatrix};
use feddpp::profiling::KernelMatrix;
use feddpp::rng::{derive_rng, Purpose};
use rand::Rng;

fn random_symmetric_4x4(seed: u64) -> [[f64; 4]; 4] {
    let mut rng = derive_rng(seed, 0, Purpose::Selection);
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in i..4 {
            let v = rng.random::<f64>() * 4.0 - 2.0;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

fn random_psd(n: usize, seed: u64) -> KernelMatrix {
    let mut rng = derive_rng(seed, 0, Purpose::Selection);
    let mut a = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            a.set(i, j, rng.random::<f64>() * 2.0 - 1.0);
        }
    }
    KernelMatrix {
        l: a.transpose().matmul(&a),
    }
}

#[test]
fn jacobi_eigenvalues_match_charpoly_roots() {
    // Random symmetric 4x4 (seed 0): eigenvalues equal the roots of the
    // characteristic polynomial found by an independent determinant
    // expansion + bisection, within 1e-8.
    for seed in [0u64, 1, 2] {
        let m = random_symmetric_4x4(seed);
        let rows: Vec<Vec<f64>> = m.iter().map(|r| r.to_vec()).collect();
        let decomp = eigh(&SquareMatrix::from_rows(rows)).unwrap();
        let mut roots = charpoly_eigenvalues_4x4(&m);
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(roots.len(), 4, "seed {seed}: oracle found {roots:?}");
        for (lambda, root) in decomp.values.iter().zip(&roots) {
            assert!(
                (lambda - root).abs() <= 1e-8,
                "seed {seed}: eigenvalue {lambda} vs root {root}"
            );
        }
    }
}

#[test]
fn esp_table_normalizes_the_subset_determinant_sum() {
    // The sum of size-k principal minors equals e_k(eigenvalues).
    let kernel = random_psd(6, 3);
    let decomp = eigh(&kernel.l).unwrap();
    for k in 1..=6usize {
        let table = esp(&decomp.values, k);
        let det_sum: f64 = subsets_of_size(6, k)
            .iter()
            .map(|s| feddpp::dpp::dpp_unnormalized(&kernel, s))
            .sum();
        let e_k = table.get(k, 6);
        assert!(
            (det_sum - e_k).abs() <= 1e-9 * e_k.abs().max(1.0),
            "k = {k}: minor sum {det_sum} vs e_k {e_k}"
        );
    }
}

#[test]
fn sampled_frequencies_match_bruteforce_pmf_seed0_case() {
    // C = 6, k = 3, 200k draws: TV < 0.01 and chi-square p > 0.001.
    let kernel = random_psd(6, 0);
    let pmf = kdpp_pmf_bruteforce(&kernel, 3).unwrap();
    let index: std::collections::HashMap<Vec<usize>, usize> = pmf
        .iter()
        .enumerate()
        .map(|(i, (s, _))| (s.clone(), i))
        .collect();
    let probs: Vec<f64> = pmf.iter().map(|(_, p)| *p).collect();

    let draws = 200_000u64;
    let mut counts = vec![0u64; probs.len()];
    let mut rng = derive_rng(42, 0, Purpose::Selection);
    for round in 0..draws {
        let s = kdpp_sample(&kernel, 3, round as usize, &mut rng).unwrap();
        counts[index[&s.chosen]] += 1;
    }
    let tv = tv_distance(&probs, &counts, draws);
    assert!(tv < 0.01, "TV distance {tv}");

    let stat = chi_square_stat(&probs, &counts, draws);
    let df = (probs.len() - 1) as f64;
    let p_value = 1.0 - statrs::distribution::ContinuousCDF::cdf(
        &statrs::distribution::ChiSquared::new(df).unwrap(),
        stat,
    );
    assert!(p_value > 0.001, "chi-square stat {stat} (df {df}), p {p_value}");
}

#[test]
fn phase1_never_selects_null_eigenvectors() {
    // Kernel with an exactly duplicated row has a zero eigenvalue; subsets
    // sampled at k = rank never include co-linear pairs, and frequencies
    // still match the brute-force pmf.
    let mut a = SquareMatrix::zeros(4);
    let rows = [
        [1.0, 0.3, 0.3, 0.9],
        [0.3, 1.0, 0.2, 0.3],
        [0.3, 0.2, 1.0, 0.3],
        [0.9, 0.3, 0.3, 1.0],
    ];
    for i in 0..4 {
        for j in 0..4 {
            a.set(i, j, rows[i][j]);
        }
    }
    let kernel = KernelMatrix { l: a };
    let pmf = kdpp_pmf_bruteforce(&kernel, 2).unwrap();
    let index: std::collections::HashMap<Vec<usize>, usize> = pmf
        .iter()
        .enumerate()
        .map(|(i, (s, _))| (s.clone(), i))
        .collect();
    let probs: Vec<f64> = pmf.iter().map(|(_, p)| *p).collect();
    let draws = 100_000u64;
    let mut counts = vec![0u64; probs.len()];
    let mut rng = derive_rng(7, 0, Purpose::Selection);
    for round in 0..draws {
        let s = kdpp_sample(&kernel, 2, round as usize, &mut rng).unwrap();
        counts[index[&s.chosen]] += 1;
    }
    let tv = tv_distance(&probs, &counts, draws);
    assert!(tv < 0.01, "TV distance {tv}");
}
