//! Error types for each subsystem.

use thiserror::Error;

/// Errors from tensor math and network evaluation.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer {layer} ({kind}): expected input shape {expected:?}, got {actual:?}")]
    ShapeMismatch {
        layer: usize,
        kind: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("label {label} out of range [0, {classes}) at sample {sample}")]
    LabelOutOfRange {
        sample: usize,
        label: usize,
        classes: usize,
    },
    #[error("non-finite value produced by {context}")]
    NonFinite { context: String },
    #[error("network has no fully-connected layer")]
    NoFcLayer,
    #[error("empty batch")]
    EmptyBatch,
}

/// Errors from dataset loading and partitioning.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic number {found:#010x} at offset 0, expected {expected:#010x}")]
    BadMagic {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated at offset {offset}, needed {needed} more bytes")]
    Truncated {
        path: String,
        offset: usize,
        needed: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at sample {sample} exceeds class count {classes}")]
    BadLabel {
        sample: usize,
        label: usize,
        classes: usize,
    },
    #[error(
        "infeasible skew: class {class} supplies {supply} samples but dominant \
         assignments demand {demand}"
    )]
    InfeasibleSkew {
        class: usize,
        supply: usize,
        demand: usize,
    },
    #[error("not enough non-dominant samples for client {client}: need {need}, pool has {have}")]
    PoolExhausted {
        client: usize,
        need: usize,
        have: usize,
    },
    #[error("dataset of {n} samples cannot fill {clients} clients")]
    TooSmall { n: usize, clients: usize },
    #[error("invalid skew parameter: {0}")]
    BadSkew(String),
}

/// Errors from profiling and kernel construction.
#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("client {client} has no samples")]
    EmptyClient { client: usize },
    #[error("profile dimension mismatch: expected {expected}, client {client} has {actual}")]
    DimensionMismatch {
        client: usize,
        expected: usize,
        actual: usize,
    },
    #[error("need at least 2 profiles, got {0}")]
    TooFew(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Errors from eigendecomposition and k-DPP sampling.
#[derive(Debug, Error)]
pub enum DppError {
    #[error("matrix not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {delta:.3e}")]
    NotSymmetric { i: usize, j: usize, delta: f64 },
    #[error("Jacobi sweep did not converge: off-diagonal norm {residual:.3e} after {sweeps} sweeps")]
    NoConvergence { residual: f64, sweeps: usize },
    #[error("eigenvalue {value:.3e} below PSD tolerance")]
    NotPsd { value: f64 },
    #[error("kernel rank {rank} below k = {k}; cannot diversify to k clients")]
    RankDeficient { rank: usize, k: usize },
    #[error("k = {k} exceeds ground set size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("brute-force pmf limited to C <= {limit}, got {c}")]
    TooLargeForBruteForce { c: usize, limit: usize },
}

/// Errors from the federated round loop.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Dpp(#[from] DppError),
    #[error("round {round} exceeds configured horizon T = {horizon}")]
    PastHorizon { round: usize, horizon: usize },
    #[error("no clients to aggregate")]
    EmptyAggregation,
    #[error("aggregation shape mismatch at layer {layer}")]
    AggregationShape { layer: usize },
}

/// Errors from experiment configuration and output emission.
#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
    #[error("cannot parse config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}
