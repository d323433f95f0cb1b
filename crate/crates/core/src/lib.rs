//! Federated learning round simulator with diversity-aware client selection.
//!
//! A central server repeatedly picks `C_p` of `C` clients, each selected
//! client takes `E` full-batch SGD passes over its local data, and the server
//! aggregates the results by sample-count-weighted averaging. Selection
//! strategies are pluggable; the headline strategy samples a k-DPP over a
//! similarity kernel built from privacy-light client data profiles (the mean
//! of the first fully-connected layer's pre-activation outputs under the
//! initial model), which repels similar clients and diversifies each round's
//! training cohort. Uniform random, loss-proportional ("fedsae-like"), and
//! profile-clustering ("cluster-like") baselines are included, plus the group
//! earth mover's distance metric for quantifying cohort diversity.

pub mod config;
pub mod dataset;
pub mod dpp;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod profiling;
pub mod rng;
pub mod tensor;

pub use tensor::Tensor;
