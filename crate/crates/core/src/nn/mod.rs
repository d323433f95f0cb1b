//! From-scratch trainable network: convolution, max pooling, fully-connected
//! layers, ReLU, and softmax cross-entropy with exact analytic gradients.
//!
//! The model is a plain value type. Forward and backward passes are pure
//! functions of (params, batch), so callers may evaluate different clients
//! concurrently without any shared state.

mod init;
mod ops;

pub use init::{init_params, InitScheme};

use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::tensor::Tensor;

/// One layer of the architecture. Conv and Fc carry parameters; the rest are
/// structural.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv { out_channels: usize, kernel: usize },
    Relu,
    MaxPool { size: usize },
    Flatten,
    Fc { out_features: usize },
}

/// Architecture description: input shape (channels, height, width) plus an
/// ordered layer list. Widths are configuration; the default mirrors a small
/// 2-conv + 2-FC image classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// conv(c1, k) -> ReLU -> pool 2 -> conv(c2, k) -> ReLU -> pool 2
    /// -> flatten -> FC(hidden) -> ReLU -> FC(classes).
    pub fn conv2_fc2(
        input: [usize; 3],
        c1: usize,
        c2: usize,
        kernel: usize,
        hidden: usize,
        classes: usize,
    ) -> Self {
        NetworkSpec {
            input,
            layers: vec![
                LayerSpec::Conv { out_channels: c1, kernel },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Conv { out_channels: c2, kernel },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Flatten,
                LayerSpec::Fc { out_features: hidden },
                LayerSpec::Relu,
                LayerSpec::Fc { out_features: classes },
            ],
        }
    }

    /// Default model for 1x28x28 images: conv(1->8, 5x5) and conv(8->16, 5x5)
    /// with 2x2 pooling, then FC(256->64) and FC(64->classes).
    pub fn default_28x28(classes: usize) -> Self {
        Self::conv2_fc2([1, 28, 28], 8, 16, 5, 64, classes)
    }

    /// Walks the shape chain and returns each layer's output shape (without
    /// the leading batch dimension). Errors name the first inconsistent layer.
    pub fn shape_chain(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shape: Vec<usize> = self.input.to_vec();
        let mut chain = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                LayerSpec::Conv { out_channels, kernel } => {
                    if shape.len() != 3 || shape[1] < *kernel || shape[2] < *kernel {
                        return Err(NnError::ShapeMismatch {
                            layer: idx,
                            kind: "conv".into(),
                            expected: vec![shape.first().copied().unwrap_or(0), *kernel, *kernel],
                            actual: shape,
                        });
                    }
                    vec![*out_channels, shape[1] - kernel + 1, shape[2] - kernel + 1]
                }
                LayerSpec::Relu => shape,
                LayerSpec::MaxPool { size } => {
                    if shape.len() != 3 || shape[1] % size != 0 || shape[2] % size != 0 {
                        return Err(NnError::ShapeMismatch {
                            layer: idx,
                            kind: "maxpool".into(),
                            expected: vec![shape.first().copied().unwrap_or(0), *size, *size],
                            actual: shape,
                        });
                    }
                    vec![shape[0], shape[1] / size, shape[2] / size]
                }
                LayerSpec::Flatten => vec![shape.iter().product()],
                LayerSpec::Fc { out_features } => {
                    if shape.len() != 1 {
                        return Err(NnError::ShapeMismatch {
                            layer: idx,
                            kind: "fc".into(),
                            expected: vec![shape.iter().product()],
                            actual: shape,
                        });
                    }
                    vec![*out_features]
                }
            };
            chain.push(shape.clone());
        }
        Ok(chain)
    }
}

/// Parameters of one layer; structural layers carry none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerParams {
    /// kernels laid out [out_channels, in_channels, k, k].
    Conv { kernels: Tensor, bias: Vec<f64> },
    Relu,
    MaxPool { size: usize },
    Flatten,
    /// weights laid out [out_features, in_features].
    Fc { weights: Tensor, bias: Vec<f64> },
}

/// Full parameter set of a network, in layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerParams>,
}

/// Per-parameter loss gradients, shape-congruent with a [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerParams>,
}

impl ModelParams {
    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                LayerParams::Conv { kernels, bias } => kernels.len() + bias.len(),
                LayerParams::Fc { weights, bias } => weights.len() + bias.len(),
                _ => 0,
            })
            .sum()
    }

    /// Payload size of the model serialized as 32-bit floats.
    pub fn serialized_bytes(&self) -> u64 {
        4 * self.param_count() as u64
    }

    /// Index of the first fully-connected layer.
    pub fn fc1_index(&self) -> Result<usize, NnError> {
        self.layers
            .iter()
            .position(|l| matches!(l, LayerParams::Fc { .. }))
            .ok_or(NnError::NoFcLayer)
    }

    /// Weights [Q x V] and bias [Q] of the first fully-connected layer.
    pub fn fc1(&self) -> Result<(&Tensor, &[f64]), NnError> {
        match &self.layers[self.fc1_index()?] {
            LayerParams::Fc { weights, bias } => Ok((weights, bias)),
            _ => unreachable!(),
        }
    }

    /// A zero gradient set with this model's structure.
    pub fn zero_grads(&self) -> GradientSet {
        GradientSet {
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    LayerParams::Conv { kernels, bias } => LayerParams::Conv {
                        kernels: Tensor::zeros(kernels.shape().to_vec()),
                        bias: vec![0.0; bias.len()],
                    },
                    LayerParams::Fc { weights, bias } => LayerParams::Fc {
                        weights: Tensor::zeros(weights.shape().to_vec()),
                        bias: vec![0.0; bias.len()],
                    },
                    other => other.clone(),
                })
                .collect(),
        }
    }

    /// Flattens all parameters into one vector, layer order, kernels/weights
    /// before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            match l {
                LayerParams::Conv { kernels, bias } | LayerParams::Fc { weights: kernels, bias } => {
                    out.extend_from_slice(kernels.data());
                    out.extend_from_slice(bias);
                }
                _ => {}
            }
        }
        out
    }

    /// Rebuilds a congruent parameter set from a flat vector in
    /// [`ModelParams::flatten`] order.
    pub fn from_flat(&self, values: &[f64]) -> ModelParams {
        assert_eq!(values.len(), self.param_count());
        let mut out = self.clone();
        let mut pos = 0;
        for l in out.layers.iter_mut() {
            match l {
                LayerParams::Conv { kernels, bias } | LayerParams::Fc { weights: kernels, bias } => {
                    let k = kernels.len();
                    kernels.data_mut().copy_from_slice(&values[pos..pos + k]);
                    pos += k;
                    let b = bias.len();
                    bias.copy_from_slice(&values[pos..pos + b]);
                    pos += b;
                }
                _ => {}
            }
        }
        out
    }

    fn check_batch(&self, batch: &Tensor) -> Result<(), NnError> {
        let want: Vec<usize> = self.input_shape.to_vec();
        let got = batch.shape();
        if got.len() != 4 || got[1..] != want[..] || got[0] == 0 {
            return Err(NnError::ShapeMismatch {
                layer: 0,
                kind: "input".into(),
                expected: want,
                actual: got.to_vec(),
            });
        }
        Ok(())
    }
}

/// Activation cache from a forward pass; holds each layer's input.
struct ForwardTrace {
    /// inputs[i] is the input to layer i; the final entry is the output.
    inputs: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
    pool_argmax: Vec<Option<Vec<usize>>>,
    fc1_pre: Option<Vec<f64>>,
    fc1_width: usize,
}

fn run_forward(params: &ModelParams, batch: &Tensor) -> Result<ForwardTrace, NnError> {
    params.check_batch(batch)?;
    let n = batch.shape()[0];
    // The FC-1 hook only matters to forward(); training works without it.
    let fc1_idx = params.fc1_index().unwrap_or(usize::MAX);

    let mut current: Vec<f64> = batch.data().to_vec();
    let mut shape: Vec<usize> = params.input_shape.to_vec();
    let mut trace = ForwardTrace {
        inputs: Vec::with_capacity(params.layers.len() + 1),
        shapes: Vec::with_capacity(params.layers.len() + 1),
        pool_argmax: vec![None; params.layers.len()],
        fc1_pre: None,
        fc1_width: 0,
    };

    for (idx, layer) in params.layers.iter().enumerate() {
        trace.shapes.push(shape.clone());
        let next: Vec<f64> = match layer {
            LayerParams::Conv { kernels, bias } => {
                let ks = kernels.shape();
                if shape.len() != 3 || shape[0] != ks[1] || shape[1] < ks[2] || shape[2] < ks[3] {
                    return Err(NnError::ShapeMismatch {
                        layer: idx,
                        kind: "conv".into(),
                        expected: vec![ks[1], ks[2], ks[3]],
                        actual: shape,
                    });
                }
                let out = ops::conv_forward(
                    &current,
                    (n, shape[0], shape[1], shape[2]),
                    kernels.data(),
                    (ks[0], ks[2], ks[3]),
                    bias,
                );
                shape = vec![ks[0], shape[1] - ks[2] + 1, shape[2] - ks[3] + 1];
                out
            }
            LayerParams::Relu => ops::relu_forward(&current),
            LayerParams::MaxPool { size } => {
                if shape.len() != 3 || shape[1] % size != 0 || shape[2] % size != 0 {
                    return Err(NnError::ShapeMismatch {
                        layer: idx,
                        kind: "maxpool".into(),
                        expected: vec![shape[0], *size, *size],
                        actual: shape,
                    });
                }
                let (out, argmax) =
                    ops::maxpool_forward(&current, (n, shape[0], shape[1], shape[2]), *size);
                trace.pool_argmax[idx] = Some(argmax);
                shape = vec![shape[0], shape[1] / size, shape[2] / size];
                out
            }
            LayerParams::Flatten => {
                shape = vec![shape.iter().product()];
                current.clone()
            }
            LayerParams::Fc { weights, bias } => {
                let v = weights.shape()[1];
                let q = weights.shape()[0];
                let flat: usize = shape.iter().product();
                if flat != v {
                    return Err(NnError::ShapeMismatch {
                        layer: idx,
                        kind: "fc".into(),
                        expected: vec![v],
                        actual: shape,
                    });
                }
                shape = vec![q];
                let out = ops::fc_forward(&current, (n, v), weights.data(), bias);
                if idx == fc1_idx {
                    trace.fc1_pre = Some(out.clone());
                    trace.fc1_width = q;
                }
                out
            }
        };
        trace.inputs.push(std::mem::replace(&mut current, next));
    }
    trace.shapes.push(shape);
    trace.inputs.push(current);
    Ok(trace)
}

/// Runs the network on a batch shaped [n, channels, h, w].
///
/// Returns the logits [n, classes] and the pre-activation output of the first
/// fully-connected layer [n, Q], the hook used for data profiling.
pub fn forward(params: &ModelParams, batch: &Tensor) -> Result<(Tensor, Tensor), NnError> {
    params.fc1_index()?;
    let n = batch.shape()[0];
    let trace = run_forward(params, batch)?;
    let out_shape = trace.shapes.last().expect("nonempty chain").clone();
    let logits = Tensor::new(
        vec![n, out_shape.iter().product()],
        trace.inputs.last().expect("nonempty chain").clone(),
    );
    let fc1_pre = Tensor::new(
        vec![n, trace.fc1_width],
        trace.fc1_pre.expect("fc1 present by fc1_index check"),
    );
    logits.check_finite("forward logits")?;
    Ok((logits, fc1_pre))
}

/// Mean softmax cross-entropy over the batch and the exact analytic gradient
/// of that loss for every parameter.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &Tensor,
    labels: &[usize],
) -> Result<(f64, GradientSet), NnError> {
    let n = batch.shape()[0];
    if labels.len() != n {
        return Err(NnError::ShapeMismatch {
            layer: 0,
            kind: "labels".into(),
            expected: vec![n],
            actual: vec![labels.len()],
        });
    }
    let trace = run_forward(params, batch)?;
    let classes = trace.shapes.last().expect("nonempty chain")[0];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(NnError::LabelOutOfRange {
                sample: i,
                label: l,
                classes,
            });
        }
    }

    let logits = trace.inputs.last().expect("nonempty chain");
    let (loss, mut dcurrent) = ops::softmax_cross_entropy(logits, (n, classes), labels);

    let mut grads = params.zero_grads();
    for idx in (0..params.layers.len()).rev() {
        let input = &trace.inputs[idx];
        let in_shape = &trace.shapes[idx];
        dcurrent = match (&params.layers[idx], &mut grads.layers[idx]) {
            (
                LayerParams::Conv { kernels, .. },
                LayerParams::Conv { kernels: gk, bias: gb },
            ) => {
                let ks = kernels.shape();
                let (dk, db, dx) = ops::conv_backward(
                    input,
                    (n, in_shape[0], in_shape[1], in_shape[2]),
                    kernels.data(),
                    (ks[0], ks[2], ks[3]),
                    &dcurrent,
                );
                gk.data_mut().copy_from_slice(&dk);
                gb.copy_from_slice(&db);
                dx
            }
            (LayerParams::Relu, _) => ops::relu_backward(input, &dcurrent),
            (LayerParams::MaxPool { .. }, _) => {
                let argmax = trace.pool_argmax[idx].as_ref().expect("pool cached");
                ops::maxpool_backward(input.len(), argmax, &dcurrent)
            }
            (LayerParams::Flatten, _) => dcurrent,
            (
                LayerParams::Fc { weights, .. },
                LayerParams::Fc { weights: gw, bias: gb },
            ) => {
                let v = weights.shape()[1];
                let q = weights.shape()[0];
                let (dw, db, dx) = ops::fc_backward(input, (n, v), weights.data(), q, &dcurrent);
                gw.data_mut().copy_from_slice(&dw);
                gb.copy_from_slice(&db);
                dx
            }
            _ => unreachable!("grads mirror params"),
        };
    }
    Ok((loss, grads))
}

/// One plain SGD step: p' = p - eta * g. Value semantics; the input params
/// are untouched.
pub fn sgd_step(params: &ModelParams, grads: &GradientSet, eta: f64) -> Result<ModelParams, NnError> {
    apply_step(params, grads, eta)
}

/// p' = p - scale * g, with shape congruence checked layer by layer.
pub fn apply_step(
    params: &ModelParams,
    grads: &GradientSet,
    scale: f64,
) -> Result<ModelParams, NnError> {
    if params.layers.len() != grads.layers.len() {
        return Err(NnError::ShapeMismatch {
            layer: 0,
            kind: "gradient set".into(),
            expected: vec![params.layers.len()],
            actual: vec![grads.layers.len()],
        });
    }
    let mut out = params.clone();
    for (idx, (layer, grad)) in out.layers.iter_mut().zip(&grads.layers).enumerate() {
        match (layer, grad) {
            (
                LayerParams::Conv { kernels, bias },
                LayerParams::Conv { kernels: gk, bias: gb },
            ) => {
                step_tensor(idx, "conv", kernels, bias, gk, gb, scale)?;
            }
            (
                LayerParams::Fc { weights, bias },
                LayerParams::Fc { weights: gw, bias: gb },
            ) => {
                step_tensor(idx, "fc", weights, bias, gw, gb, scale)?;
            }
            (LayerParams::Relu, LayerParams::Relu)
            | (LayerParams::Flatten, LayerParams::Flatten)
            | (LayerParams::MaxPool { .. }, LayerParams::MaxPool { .. }) => {}
            (l, _) => {
                return Err(NnError::ShapeMismatch {
                    layer: idx,
                    kind: format!("{l:?}"),
                    expected: vec![],
                    actual: vec![],
                });
            }
        }
    }
    Ok(out)
}

fn step_tensor(
    idx: usize,
    kind: &str,
    weights: &mut Tensor,
    bias: &mut [f64],
    gw: &Tensor,
    gb: &[f64],
    scale: f64,
) -> Result<(), NnError> {
    if weights.shape() != gw.shape() || bias.len() != gb.len() {
        return Err(NnError::ShapeMismatch {
            layer: idx,
            kind: kind.into(),
            expected: weights.shape().to_vec(),
            actual: gw.shape().to_vec(),
        });
    }
    for (p, g) in weights.data_mut().iter_mut().zip(gw.data()) {
        *p -= scale * g;
    }
    for (p, g) in bias.iter_mut().zip(gb) {
        *p -= scale * g;
    }
    Ok(())
}

impl GradientSet {
    /// Flat view in the same order as [`ModelParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                LayerParams::Conv { kernels, bias } | LayerParams::Fc { weights: kernels, bias } => {
                    out.extend_from_slice(kernels.data());
                    out.extend_from_slice(bias);
                }
                _ => {}
            }
        }
        out
    }

    /// Scales every gradient in place.
    pub fn scale(&mut self, factor: f64) {
        for l in self.layers.iter_mut() {
            match l {
                LayerParams::Conv { kernels, bias } | LayerParams::Fc { weights: kernels, bias } => {
                    for v in kernels.data_mut() {
                        *v *= factor;
                    }
                    for v in bias.iter_mut() {
                        *v *= factor;
                    }
                }
                _ => {}
            }
        }
    }
}

/// Element-wise accumulate: acc += g. Used for summing per-sample or
/// per-client gradients in a fixed order.
pub fn accumulate_grads(acc: &mut GradientSet, g: &GradientSet) {
    for (a, b) in acc.layers.iter_mut().zip(&g.layers) {
        match (a, b) {
            (
                LayerParams::Conv { kernels, bias },
                LayerParams::Conv { kernels: gk, bias: gb },
            )
            | (
                LayerParams::Fc { weights: kernels, bias },
                LayerParams::Fc { weights: gk, bias: gb },
            ) => {
                for (x, y) in kernels.data_mut().iter_mut().zip(gk.data()) {
                    *x += y;
                }
                for (x, y) in bias.iter_mut().zip(gb) {
                    *x += y;
                }
            }
            _ => {}
        }
    }
}
