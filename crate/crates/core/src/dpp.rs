//! Exact k-DPP sampling over a PSD kernel.
//!
//! A k-DPP assigns each size-k subset Y probability det(L_Y) / e_k(lambda),
//! where e_k is the k-th elementary symmetric polynomial of L's eigenvalues.
//! Sampling is the standard two-phase procedure: phase 1 picks k eigenvector
//! indices by a backward recursion over the e_j table, phase 2 runs
//! elementary-DPP sampling in the selected eigenspace. A brute-force pmf over
//! all subsets doubles as the testing oracle for small ground sets.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::DppError;
use crate::linalg::{eigh, EigenDecomposition};
use crate::profiling::KernelMatrix;

/// Eigenvalues below this magnitude count as zero when ranking the kernel;
/// small negatives down to -1e-9 are rounding on a PSD matrix and clamp to 0.
const PSD_FLOOR: f64 = 1e-9;
/// Probability clamp for phase-1 inclusion ratios.
const PROB_EPS: f64 = 1e-12;

/// One round's chosen cohort.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Selection {
    pub round: usize,
    /// Exactly k distinct client ids, ascending.
    pub chosen: Vec<usize>,
}

/// Table of elementary symmetric polynomials: `get(j, n)` = e_j over the
/// first n eigenvalues.
#[derive(Debug, Clone)]
pub struct ElemSymPoly {
    k: usize,
    n: usize,
    table: Vec<f64>,
}

impl ElemSymPoly {
    pub fn get(&self, j: usize, n: usize) -> f64 {
        debug_assert!(j <= self.k && n <= self.n);
        self.table[j * (self.n + 1) + n]
    }
}

/// Builds the e_j(lambda_1..lambda_n) table for j <= k via the recurrence
/// e_j(1..n) = e_j(1..n-1) + lambda_n * e_{j-1}(1..n-1).
pub fn esp(eigenvalues: &[f64], k: usize) -> ElemSymPoly {
    let n = eigenvalues.len();
    assert!(k <= n, "k = {k} exceeds {n} eigenvalues");
    let cols = n + 1;
    let mut table = vec![0.0; (k + 1) * cols];
    for col in 0..cols {
        table[col] = 1.0; // e_0 = 1
    }
    for j in 1..=k {
        for col in 1..cols {
            table[j * cols + col] =
                table[j * cols + col - 1] + eigenvalues[col - 1] * table[(j - 1) * cols + col - 1];
        }
    }
    ElemSymPoly { k, n, table }
}

/// Eigendecomposition of the kernel with the PSD clamp applied.
pub fn kernel_eigh(kernel: &KernelMatrix) -> Result<EigenDecomposition, DppError> {
    let mut decomp = eigh(&kernel.l)?;
    for v in decomp.values.iter_mut() {
        if *v < 0.0 {
            if *v < -PSD_FLOOR {
                return Err(DppError::NotPsd { value: *v });
            }
            *v = 0.0;
        }
    }
    Ok(decomp)
}

/// Numerical rank: eigenvalues above the PSD floor.
pub fn kernel_rank(decomp: &EigenDecomposition) -> usize {
    decomp.values.iter().filter(|&&v| v > PSD_FLOOR).count()
}

/// Draws one size-k subset with probability det(L_Y) / e_k(lambda).
///
/// Errors when rank(L) < k, in which case no size-k subset has positive
/// determinant; the caller owns any fallback policy.
pub fn kdpp_sample(
    kernel: &KernelMatrix,
    k: usize,
    round: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Selection, DppError> {
    let decomp = kernel_eigh(kernel)?;
    kdpp_sample_with_decomposition(&decomp, k, round, rng)
}

/// Sampling with a precomputed eigendecomposition (the decomposition is
/// reused across rounds by the selection engine).
pub fn kdpp_sample_with_decomposition(
    decomp: &EigenDecomposition,
    k: usize,
    round: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Selection, DppError> {
    let c = decomp.values.len();
    if k > c {
        return Err(DppError::KTooLarge { k, n: c });
    }
    if k == 0 {
        return Ok(Selection {
            round,
            chosen: Vec::new(),
        });
    }
    let rank = kernel_rank(decomp);
    if rank < k {
        return Err(DppError::RankDeficient { rank, k });
    }

    // Phase 1: choose k eigenvector indices. Walking n from C down to 1 with
    // j slots left, index n-1 (0-based) joins with probability
    // lambda_n * e_{j-1}(lambda_<n) / e_j(lambda_<=n).
    let table = esp(&decomp.values, k);
    let mut picked_vectors = Vec::with_capacity(k);
    let mut j = k;
    for n in (1..=c).rev() {
        if j == 0 {
            break;
        }
        if n == j {
            // Exactly enough indices remain; all must join.
            picked_vectors.extend((0..n).rev());
            break;
        }
        let denom = table.get(j, n);
        let raw = if denom > 0.0 {
            decomp.values[n - 1] * table.get(j - 1, n - 1) / denom
        } else {
            0.0
        };
        debug_assert!((-PROB_EPS..=1.0 + PROB_EPS).contains(&raw), "inclusion ratio {raw}");
        let p = raw.clamp(0.0, 1.0);
        if rng.random::<f64>() < p {
            picked_vectors.push(n - 1);
            j -= 1;
        }
    }
    debug_assert_eq!(picked_vectors.len(), k);

    // Phase 2: elementary DPP in the span of the selected eigenvectors.
    // Columns of `v` hold the current (orthonormal) basis.
    let mut v: Vec<Vec<f64>> = picked_vectors
        .iter()
        .map(|&col| (0..c).map(|r| decomp.vectors.get(r, col)).collect())
        .collect();

    let mut chosen = Vec::with_capacity(k);
    while !v.is_empty() {
        // Pr(item i) = sum_cols v[col][i]^2 / |cols|.
        let dim = v.len() as f64;
        let weights: Vec<f64> = (0..c)
            .map(|i| v.iter().map(|col| col[i] * col[i]).sum::<f64>() / dim)
            .collect();
        let total: f64 = weights.iter().sum();
        let mut target = rng.random::<f64>() * total;
        // Inverse-CDF scan; ties at equal cumulative mass resolve to the
        // lowest index. Rounding can leave target a hair positive after the
        // last weight, so fall back to the last item with support.
        let mut item = None;
        let mut last_supported = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                last_supported = i;
            }
            target -= w;
            if target <= 0.0 && w > 0.0 {
                item = Some(i);
                break;
            }
        }
        let item = item.unwrap_or(last_supported);
        chosen.push(item);

        // Project the basis onto the subspace orthogonal to e_item: eliminate
        // coordinate `item` using the column with the largest magnitude there
        // (deterministic pivot), drop that column, then re-orthonormalize the
        // rest with modified Gram-Schmidt.
        let pivot = (0..v.len())
            .max_by(|&a, &b| {
                v[a][item]
                    .abs()
                    .partial_cmp(&v[b][item].abs())
                    .expect("finite coords")
            })
            .expect("nonempty basis");
        let pivot_col = v.swap_remove(pivot);
        let pivot_val = pivot_col[item];
        for col in v.iter_mut() {
            let factor = col[item] / pivot_val;
            if factor != 0.0 {
                for (x, &p) in col.iter_mut().zip(&pivot_col) {
                    *x -= factor * p;
                }
            }
            col[item] = 0.0;
        }
        for idx in 0..v.len() {
            for prev in 0..idx {
                let dot: f64 = v[idx].iter().zip(&v[prev]).map(|(a, b)| a * b).sum();
                let (head, tail) = v.split_at_mut(idx);
                for (x, &p) in tail[0].iter_mut().zip(&head[prev]) {
                    *x -= dot * p;
                }
            }
            let norm: f64 = v[idx].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                for x in v[idx].iter_mut() {
                    *x /= norm;
                }
            }
        }
    }

    chosen.sort_unstable();
    debug_assert_eq!(chosen.len(), k);
    Ok(Selection { round, chosen })
}

/// det(L_Y); the empty subset has determinant 1.
pub fn dpp_unnormalized(kernel: &KernelMatrix, subset: &[usize]) -> f64 {
    kernel.l.principal_minor(subset).det()
}

/// Exhaustive upper bound for the brute-force pmf.
const BRUTE_FORCE_LIMIT: usize = 15;

/// Evaluates the exact size-k pmf by enumerating every subset and computing
/// its principal-minor determinant. Testing oracle; guarded to C <= 15.
pub fn kdpp_pmf_bruteforce(
    kernel: &KernelMatrix,
    k: usize,
) -> Result<Vec<(Vec<usize>, f64)>, DppError> {
    let c = kernel.n();
    if c > BRUTE_FORCE_LIMIT {
        return Err(DppError::TooLargeForBruteForce {
            c,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    if k > c {
        return Err(DppError::KTooLarge { k, n: c });
    }
    let mut entries = Vec::new();
    let mut total = 0.0;
    for subset in subsets_of_size(c, k) {
        let det = dpp_unnormalized(kernel, &subset).max(0.0);
        total += det;
        entries.push((subset, det));
    }
    if total <= 0.0 {
        return Err(DppError::RankDeficient { rank: 0, k });
    }
    for (_, p) in entries.iter_mut() {
        *p /= total;
    }
    Ok(entries)
}

/// All size-k subsets of {0..n}, lexicographic.
pub fn subsets_of_size(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn recur(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        let remaining = k - current.len();
        for i in start..=(n - remaining) {
            current.push(i);
            recur(i + 1, n, k, current, out);
            current.pop();
        }
    }
    if k <= n {
        recur(0, n, k, &mut current, &mut out);
    }
    out
}
