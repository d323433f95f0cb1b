//! Client data profiles and the similarity kernel built from them.
//!
//! A client's profile is the per-coordinate mean (and, for diagnostics,
//! population variance) of the first fully-connected layer's pre-activation
//! outputs over its local samples, evaluated under the initial global model.
//! Profiles are computed once at initialization and never refreshed.
//!
//! Pairwise Euclidean distances between profiles are normalized to
//! similarities s = 1 - (d - min) / (max - min) over all matrix entries
//! (the zero diagonal pins min = 0), and the DPP kernel is L = S^T S.

use serde::{Deserialize, Serialize};

use crate::dataset::{ClientDataset, LabeledDataset};
use crate::error::ProfileError;
use crate::linalg::SquareMatrix;
use crate::nn::{forward, ModelParams};

/// Batch size for the profiling forward passes; covers each client's samples
/// exactly once regardless of the chunking.
const PROFILE_BATCH: usize = 256;

/// Per-client profile: mean and population variance of each FC-1
/// pre-activation coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataProfile {
    pub client_id: usize,
    pub mean: Vec<f64>,
    /// Diagnostics only; nothing downstream consumes it.
    pub var: Vec<f64>,
}

impl DataProfile {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Wire encoding of the mean vector as little-endian f32, 4Q bytes.
    pub fn to_wire_bytes(&self) -> Vec<u8> {
        self.mean
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect()
    }
}

/// Computes a client's profile by running the model over its samples in
/// batches and averaging the FC-1 pre-activation rows.
pub fn profile_client(
    params: &ModelParams,
    client: &ClientDataset,
    parent: &LabeledDataset,
) -> Result<DataProfile, ProfileError> {
    if client.is_empty() {
        return Err(ProfileError::EmptyClient {
            client: client.client_id,
        });
    }
    let mut sum: Vec<f64> = Vec::new();
    let mut sum_sq: Vec<f64> = Vec::new();
    let n = client.indices.len();
    for chunk in client.indices.chunks(PROFILE_BATCH) {
        let batch = parent.gather(chunk);
        let (_, fc1_pre) = forward(params, &batch)?;
        let q = fc1_pre.shape()[1];
        if sum.is_empty() {
            sum = vec![0.0; q];
            sum_sq = vec![0.0; q];
        }
        for i in 0..chunk.len() {
            let row = fc1_pre.row(i);
            for (j, &v) in row.iter().enumerate() {
                sum[j] += v;
                sum_sq[j] += v * v;
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    let mean: Vec<f64> = sum.iter().map(|&s| s * inv_n).collect();
    let var: Vec<f64> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(&sq, &m)| (sq * inv_n - m * m).max(0.0))
        .collect();
    Ok(DataProfile {
        client_id: client.client_id,
        mean,
        var,
    })
}

/// Profiles every client of a partition, in client order.
pub fn profile_all(
    params: &ModelParams,
    clients: &[ClientDataset],
    parent: &LabeledDataset,
) -> Result<Vec<DataProfile>, ProfileError> {
    clients
        .iter()
        .map(|c| profile_client(params, c, parent))
        .collect()
}

/// Pairwise similarity matrix with entries in [0, 1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub s: SquareMatrix,
    /// Pre-normalization Euclidean distances.
    pub raw: SquareMatrix,
}

/// Normalization variant: the literal reading rescales over all entries of
/// the distance matrix (the zero diagonal forces min = 0); the off-diagonal
/// variant takes extrema over m != n only and pins the diagonal at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    #[default]
    AllEntries,
    OffDiagonalOnly,
}

/// Builds the similarity matrix from client profiles (Euclidean distances on
/// mean vectors, min-max normalized, flipped to similarities).
///
/// If all profiles coincide the normalization degenerates (max = min); the
/// matrix is then all ones, treating identical clients as maximally similar.
pub fn similarity_matrix(
    profiles: &[DataProfile],
    normalization: Normalization,
) -> Result<SimilarityMatrix, ProfileError> {
    let c = profiles.len();
    if c < 2 {
        return Err(ProfileError::TooFew(c));
    }
    let q = profiles[0].dim();
    for p in profiles {
        if p.dim() != q {
            return Err(ProfileError::DimensionMismatch {
                client: p.client_id,
                expected: q,
                actual: p.dim(),
            });
        }
    }

    let mut raw = SquareMatrix::zeros(c);
    for i in 0..c {
        for j in (i + 1)..c {
            let d = euclidean(&profiles[i].mean, &profiles[j].mean);
            raw.set(i, j, d);
            raw.set(j, i, d);
        }
    }

    let offdiag = |m: &SquareMatrix| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..c {
            for j in 0..c {
                if i != j {
                    lo = lo.min(m.get(i, j));
                    hi = hi.max(m.get(i, j));
                }
            }
        }
        (lo, hi)
    };
    let (min, max) = match normalization {
        // Diagonal included: min(S0) = 0 always.
        Normalization::AllEntries => (0.0, raw.data().iter().cloned().fold(0.0, f64::max)),
        Normalization::OffDiagonalOnly => offdiag(&raw),
    };

    let mut s = SquareMatrix::zeros(c);
    let span = max - min;
    for i in 0..c {
        for j in 0..c {
            let v = if i == j && normalization == Normalization::OffDiagonalOnly {
                1.0
            } else if span > 0.0 {
                (1.0 - (raw.get(i, j) - min) / span).clamp(0.0, 1.0)
            } else {
                1.0
            };
            s.set(i, j, v);
        }
    }
    Ok(SimilarityMatrix { s, raw })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Positive semi-definite DPP kernel L = S^T S.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelMatrix {
    pub l: SquareMatrix,
}

pub fn kernel_matrix(similarity: &SimilarityMatrix) -> KernelMatrix {
    KernelMatrix {
        l: similarity.s.transpose().matmul(&similarity.s),
    }
}

impl KernelMatrix {
    pub fn n(&self) -> usize {
        self.l.n()
    }
}

/// Serializes profiles as a client-ordered flat blob of little-endian f32
/// means, 4Q bytes per client, for communication-cost accounting.
pub fn profiles_wire_blob(profiles: &[DataProfile]) -> Vec<u8> {
    profiles.iter().flat_map(|p| p.to_wire_bytes()).collect()
}

/// Uplink cost of one profile in bytes (B = 32-bit floats on the wire).
pub fn profile_wire_bytes(q: usize) -> u64 {
    4 * q as u64
}
