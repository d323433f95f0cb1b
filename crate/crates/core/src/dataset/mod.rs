//! Labeled image datasets and their distribution across clients.
//!
//! Data comes from MNIST-format IDX files or a synthetic generator, and is
//! split across `C` clients of identical size according to a skewness
//! parameter: with `fraction(xi)` a share `xi` of each client's samples comes
//! from one dominant class (assigned round-robin), and with `half-half` each
//! client holds two classes in equal parts.

mod idx;
mod partition;
mod synth;

pub use idx::load_idx;
pub use partition::partition;
pub use synth::synth_dataset;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::tensor::Tensor;

/// A labeled image dataset: samples [n, 1, h, w] with pixels in [0, 1] and
/// one class index per sample.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    samples: Tensor,
    labels: Vec<usize>,
    classes: usize,
    /// Counts training-path sample reads; see [`LabeledDataset::gather`].
    reads: Arc<AtomicU64>,
}

impl LabeledDataset {
    pub fn new(samples: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self, DataError> {
        let n = samples.shape()[0];
        if labels.len() != n {
            return Err(DataError::CountMismatch {
                images: n,
                labels: labels.len(),
            });
        }
        for (i, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(DataError::BadLabel {
                    sample: i,
                    label: l,
                    classes,
                });
            }
        }
        Ok(LabeledDataset {
            samples,
            labels,
            classes,
            reads: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Shape of one sample: [channels, h, w].
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.samples.shape();
        [s[1], s[2], s[3]]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_of(&self, index: usize) -> usize {
        self.labels[index]
    }

    /// Copies the given samples into a batch tensor [k, c, h, w] and counts
    /// them as training reads. The training loop must funnel every sample it
    /// touches through here so tests can assert that a round reads only the
    /// selected clients' data.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        self.reads.fetch_add(indices.len() as u64, Ordering::Relaxed);
        self.gather_untracked(indices)
    }

    /// Same as [`gather`](Self::gather) but exempt from read accounting;
    /// used by evaluation and diagnostics, which intentionally scan splits.
    pub fn gather_untracked(&self, indices: &[usize]) -> Tensor {
        let [c, h, w] = self.sample_shape();
        let stride = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            data.extend_from_slice(&self.samples.data()[i * stride..(i + 1) * stride]);
        }
        Tensor::new(vec![indices.len(), c, h, w], data)
    }

    pub fn labels_at(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// Total samples read through the counted path so far.
    pub fn training_reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn reset_training_reads(&self) {
        self.reads.store(0, Ordering::Relaxed);
    }

    /// Per-class sample counts over the whole dataset.
    pub fn histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.classes];
        for &l in &self.labels {
            hist[l] += 1;
        }
        hist
    }
}

/// Heterogeneity recipe for partitioning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "xi")]
pub enum SkewSpec {
    /// Share `xi` in (0, 1] of each client's samples comes from its dominant
    /// class; `fraction(1.0)` is the single-class extreme.
    Fraction(f64),
    /// Each client's samples split evenly between two distinct classes.
    HalfHalf,
}

impl SkewSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        match self {
            SkewSpec::Fraction(xi) if !(*xi > 0.0 && *xi <= 1.0) => {
                Err(DataError::BadSkew(format!("xi = {xi} outside (0, 1]")))
            }
            _ => Ok(()),
        }
    }

    /// Parses "H", "half-half", or a fraction like "0.8".
    pub fn parse(s: &str) -> Result<Self, DataError> {
        match s.trim() {
            "H" | "h" | "half-half" => Ok(SkewSpec::HalfHalf),
            other => {
                let xi: f64 = other
                    .parse()
                    .map_err(|_| DataError::BadSkew(format!("unrecognized skew {other:?}")))?;
                let spec = SkewSpec::Fraction(xi);
                spec.validate()?;
                Ok(spec)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            SkewSpec::Fraction(xi) => format!("{xi}"),
            SkewSpec::HalfHalf => "H".to_string(),
        }
    }
}

/// One client's slice of the parent dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client_id: usize,
    /// Indices into the parent [`LabeledDataset`], sorted ascending.
    pub indices: Vec<usize>,
    /// Per-class counts over `indices`; sums to the client size.
    pub label_hist: Vec<usize>,
}

impl ClientDataset {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Class proportions P_c(y = j).
    pub fn proportions(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.label_hist.iter().map(|&c| c as f64 / n).collect()
    }
}

/// A complete assignment of samples to clients: uniform sizes, pairwise
/// disjoint, deterministic per seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Partition {
    pub clients: Vec<ClientDataset>,
    pub skew: SkewSpec,
    /// Per-class counts over the union of all clients' samples.
    pub global_hist: Vec<usize>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    /// Uniform per-client size n_c.
    pub fn client_size(&self) -> usize {
        self.clients.first().map_or(0, |c| c.indices.len())
    }

    /// Class proportions of the union P_g(y = j).
    pub fn global_proportions(&self) -> Vec<f64> {
        let total: usize = self.global_hist.iter().sum();
        self.global_hist
            .iter()
            .map(|&c| c as f64 / total as f64)
            .collect()
    }

    /// All assigned sample indices, in client order.
    pub fn union_indices(&self) -> Vec<usize> {
        self.clients
            .iter()
            .flat_map(|c| c.indices.iter().copied())
            .collect()
    }

    /// JSON manifest mapping client id to its sorted index list, for
    /// reproducibility audits.
    pub fn manifest_json(&self) -> String {
        let map: std::collections::BTreeMap<String, &Vec<usize>> = self
            .clients
            .iter()
            .map(|c| (c.client_id.to_string(), &c.indices))
            .collect();
        serde_json::to_string_pretty(&map).expect("manifest serializes")
    }
}
