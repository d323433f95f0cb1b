//! Parameter initialization schemes. Weights follow the named fan-in/fan-out
//! variance rule, biases start at zero, and the result is deterministic per
//! (scheme, seed).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::{derive_rng, Purpose};
use crate::tensor::Tensor;

use super::{LayerParams, LayerSpec, ModelParams, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    XavierNormal,
    XavierUniform,
    KaimingNormal,
    KaimingUniform,
}

impl InitScheme {
    pub const ALL: [InitScheme; 4] = [
        InitScheme::XavierNormal,
        InitScheme::XavierUniform,
        InitScheme::KaimingNormal,
        InitScheme::KaimingUniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InitScheme::XavierNormal => "xavier-normal",
            InitScheme::XavierUniform => "xavier-uniform",
            InitScheme::KaimingNormal => "kaiming-normal",
            InitScheme::KaimingUniform => "kaiming-uniform",
        }
    }

    /// Draws one weight for the given fan pair.
    fn sample<R: Rng>(self, rng: &mut R, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitScheme::XavierNormal => {
                let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
                Normal::new(0.0, std).expect("positive std").sample(rng)
            }
            InitScheme::XavierUniform => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                rng.random_range(-a..a)
            }
            InitScheme::KaimingNormal => {
                let std = (2.0 / fan_in as f64).sqrt();
                Normal::new(0.0, std).expect("positive std").sample(rng)
            }
            InitScheme::KaimingUniform => {
                let a = (6.0 / fan_in as f64).sqrt();
                rng.random_range(-a..a)
            }
        }
    }
}

impl std::str::FromStr for InitScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        InitScheme::ALL
            .into_iter()
            .find(|scheme| scheme.name() == s)
            .ok_or_else(|| format!("unknown init scheme {s:?}"))
    }
}

impl std::fmt::Display for InitScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Builds parameters for `spec` under the named scheme. The shape chain must
/// be valid; this is asserted because specs are constructed in-process.
pub fn init_params(spec: &NetworkSpec, scheme: InitScheme, seed: u64) -> ModelParams {
    let chain = spec.shape_chain().expect("valid network spec");
    let mut rng = derive_rng(seed, 0, Purpose::InitParams);
    let mut in_shape: Vec<usize> = spec.input.to_vec();
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (idx, layer) in spec.layers.iter().enumerate() {
        let params = match layer {
            LayerSpec::Conv { out_channels, kernel } => {
                let in_c = in_shape[0];
                let fan_in = in_c * kernel * kernel;
                let fan_out = out_channels * kernel * kernel;
                let n = out_channels * in_c * kernel * kernel;
                let data: Vec<f64> = (0..n).map(|_| scheme.sample(&mut rng, fan_in, fan_out)).collect();
                LayerParams::Conv {
                    kernels: Tensor::new(vec![*out_channels, in_c, *kernel, *kernel], data),
                    bias: vec![0.0; *out_channels],
                }
            }
            LayerSpec::Fc { out_features } => {
                let fan_in = in_shape[0];
                let data: Vec<f64> = (0..out_features * fan_in)
                    .map(|_| scheme.sample(&mut rng, fan_in, *out_features))
                    .collect();
                LayerParams::Fc {
                    weights: Tensor::new(vec![*out_features, fan_in], data),
                    bias: vec![0.0; *out_features],
                }
            }
            LayerSpec::Relu => LayerParams::Relu,
            LayerSpec::MaxPool { size } => LayerParams::MaxPool { size: *size },
            LayerSpec::Flatten => LayerParams::Flatten,
        };
        layers.push(params);
        in_shape = chain[idx].clone();
    }
    ModelParams {
        input_shape: spec.input,
        layers,
    }
}
