//! Synthetic labeled images: class-conditional Gaussian blobs rendered into
//! the 28x28 grid, a desk-scale stand-in for MNIST.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::rng::{derive_rng, Purpose};
use crate::tensor::Tensor;

use super::LabeledDataset;

const SIDE: usize = 28;

/// Generates `n` samples over `classes` classes, balanced within one sample,
/// deterministic per seed.
///
/// Class j's mean pattern is a bright blob at a class-specific position on a
/// ring; each sample jitters the blob center and adds pixel noise, then
/// clamps to [0, 1].
pub fn synth_dataset(n: usize, classes: usize, seed: u64) -> LabeledDataset {
    assert!(classes >= 2, "need at least two classes");
    assert!(n >= classes, "need at least one sample per class");
    let mut rng = derive_rng(seed, 0, Purpose::SynthData);
    let noise = Normal::new(0.0, 0.08).expect("positive std");
    let jitter = Normal::new(0.0, 1.2).expect("positive std");

    // Balanced labels: class j gets n/classes samples, remainder spread over
    // the first (n % classes) classes. Interleaved so any prefix is mixed.
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        labels.push(i % classes);
    }

    let mut data = Vec::with_capacity(n * SIDE * SIDE);
    for &label in &labels {
        let angle = 2.0 * std::f64::consts::PI * label as f64 / classes as f64;
        let cx = 14.0 + 7.0 * angle.cos() + jitter.sample(&mut rng);
        let cy = 14.0 + 7.0 * angle.sin() + jitter.sample(&mut rng);
        // Blob width varies a little per class so shape carries signal too.
        let sigma = 2.0 + 1.5 * (label as f64 / classes as f64);
        for y in 0..SIDE {
            for x in 0..SIDE {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let v = (-d2 / (2.0 * sigma * sigma)).exp() + noise.sample(&mut rng);
                data.push(v.clamp(0.0, 1.0));
            }
        }
        let _ = rng.random::<u32>(); // stream separator between samples
    }

    let samples = Tensor::new(vec![n, 1, SIDE, SIDE], data);
    LabeledDataset::new(samples, labels, classes).expect("labels in range by construction")
}
