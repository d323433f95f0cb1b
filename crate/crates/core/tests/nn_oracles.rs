//! Gradient and forward-pass checks against independent oracles: central
//! finite differences for every layer type in isolation, and a straight-line
//! reimplementation of a toy network's arithmetic.

mod common;

use common::{assert_gradients_match, rel_err, StraightLineNet};
use feddpp::nn::{
    forward, init_params, InitScheme, LayerParams, LayerSpec, ModelParams, NetworkSpec,
};
use feddpp::rng::{derive_rng, Purpose};
use feddpp::tensor::Tensor;
use rand::Rng;

fn random_tensor(shape: Vec<usize>, rng: &mut rand_chacha::ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
}

fn random_labels(n: usize, classes: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

#[test]
fn conv_layer_gradients_in_isolation() {
    let mut rng = derive_rng(100, 0, Purpose::InitParams);
    let spec = NetworkSpec {
        input: [2, 6, 6],
        layers: vec![
            LayerSpec::Conv { out_channels: 3, kernel: 3 },
            LayerSpec::Flatten,
        ],
    };
    for seed in 0..25 {
        let params = init_params(&spec, InitScheme::XavierNormal, seed);
        let batch = random_tensor(vec![2, 2, 6, 6], &mut rng);
        let labels = random_labels(2, 3 * 16, &mut rng);
        assert_gradients_match(&params, &batch, &labels, 1e-4);
    }
}

#[test]
fn fc_layer_gradients_in_isolation() {
    let mut rng = derive_rng(101, 0, Purpose::InitParams);
    let spec = NetworkSpec {
        input: [7, 1, 1],
        layers: vec![LayerSpec::Flatten, LayerSpec::Fc { out_features: 5 }],
    };
    for seed in 0..25 {
        let params = init_params(&spec, InitScheme::KaimingNormal, seed);
        let batch = random_tensor(vec![3, 7, 1, 1], &mut rng);
        let labels = random_labels(3, 5, &mut rng);
        assert_gradients_match(&params, &batch, &labels, 1e-4);
    }
}

#[test]
fn relu_and_pool_gradients_through_carrier_layers() {
    // ReLU and maxpool have no parameters; check them by composing with a
    // conv whose gradients must flow through them.
    let mut rng = derive_rng(102, 0, Purpose::InitParams);
    let spec = NetworkSpec {
        input: [1, 6, 6],
        layers: vec![
            LayerSpec::Conv { out_channels: 2, kernel: 3 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Flatten,
        ],
    };
    for seed in 0..25 {
        let params = init_params(&spec, InitScheme::XavierUniform, seed);
        let batch = random_tensor(vec![2, 1, 6, 6], &mut rng);
        let labels = random_labels(2, 8, &mut rng);
        assert_gradients_match(&params, &batch, &labels, 1e-4);
    }
}

#[test]
fn composed_toy_net_gradients_match_finite_differences() {
    // Spec example: seed-0 toy net, 3 samples, step 1e-5, rel tol 1e-4.
    let mut rng = derive_rng(0, 0, Purpose::InitParams);
    let spec = NetworkSpec::conv2_fc2([1, 10, 10], 2, 3, 3, 6, 4);
    let params = init_params(&spec, InitScheme::KaimingNormal, 0);
    let batch = random_tensor(vec![3, 1, 10, 10], &mut rng);
    let labels = vec![0, 2, 3];
    assert_gradients_match(&params, &batch, &labels, 1e-4);
}

#[test]
fn straightline_oracle_agrees_with_forward() {
    // Random toy net on a fixed seed-0 input: the library forward and an
    // independently written scalar-loop forward agree to 1e-12 relative.
    let mut rng = derive_rng(0, 0, Purpose::SynthData);
    let side = 8;
    let (c1, k, q, classes) = (2, 3, 5, 4);
    let spec = NetworkSpec {
        input: [1, side, side],
        layers: vec![
            LayerSpec::Conv { out_channels: c1, kernel: k },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Flatten,
            LayerSpec::Fc { out_features: q },
            LayerSpec::Relu,
            LayerSpec::Fc { out_features: classes },
        ],
    };
    let params = init_params(&spec, InitScheme::XavierNormal, 0);

    let oracle = {
        let get = |idx: usize| -> (&Tensor, &[f64]) {
            match &params.layers[idx] {
                LayerParams::Conv { kernels, bias } => (kernels, bias),
                LayerParams::Fc { weights, bias } => (weights, bias),
                _ => panic!("not a parametric layer"),
            }
        };
        let (ck, cb) = get(0);
        let (w1, b1) = get(4);
        let (w2, b2) = get(6);
        StraightLineNet {
            side,
            c1,
            k,
            q,
            classes,
            conv_kernels: ck.data().to_vec(),
            conv_bias: cb.to_vec(),
            fc1_w: w1.data().to_vec(),
            fc1_b: b1.to_vec(),
            fc2_w: w2.data().to_vec(),
            fc2_b: b2.to_vec(),
        }
    };

    for _ in 0..10 {
        let batch = random_tensor(vec![2, 1, side, side], &mut rng);
        let (logits, fc1_pre) = forward(&params, &batch).unwrap();
        for i in 0..2 {
            let image = &batch.data()[i * side * side..(i + 1) * side * side];
            let (want_logits, want_fc1) = oracle.forward_sample(image);
            for (j, &w) in want_logits.iter().enumerate() {
                let e = rel_err(logits.row(i)[j], w, 1e-12);
                assert!(e <= 1e-12, "logit [{i}][{j}]: {e:.3e}");
            }
            for (j, &w) in want_fc1.iter().enumerate() {
                let e = rel_err(fc1_pre.row(i)[j], w, 1e-12);
                assert!(e <= 1e-12, "fc1_pre [{i}][{j}]: {e:.3e}");
            }
        }
    }
}

#[test]
fn gradcheck_survives_different_init_schemes_and_shapes() {
    let mut rng = derive_rng(103, 0, Purpose::InitParams);
    for (seed, scheme) in InitScheme::ALL.into_iter().enumerate() {
        let spec = NetworkSpec::conv2_fc2([1, 10, 10], 2, 2, 3, 4, 3);
        let params = init_params(&spec, scheme, seed as u64);
        let batch = random_tensor(vec![2, 1, 10, 10], &mut rng);
        let labels = random_labels(2, 3, &mut rng);
        assert_gradients_match(&params, &batch, &labels, 1e-4);
    }
}

#[test]
fn loss_is_nonnegative_and_grads_finite_over_random_draws() {
    let mut rng = derive_rng(104, 0, Purpose::InitParams);
    let spec = NetworkSpec::conv2_fc2([1, 10, 10], 2, 2, 3, 4, 3);
    for seed in 0..50 {
        let params = init_params(&spec, InitScheme::KaimingUniform, seed);
        let batch = random_tensor(vec![3, 1, 10, 10], &mut rng);
        let labels = random_labels(3, 3, &mut rng);
        let (loss, grads) = feddpp::nn::loss_and_grad(&params, &batch, &labels).unwrap();
        assert!(loss >= 0.0);
        assert!(grads.flatten().iter().all(|v| v.is_finite()));
    }
}
