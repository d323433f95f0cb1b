//! The federated round loop: local multi-epoch SGD at the selected clients,
//! sample-count-weighted aggregation at the server, pluggable selection, and
//! an equivalence harness showing that one-epoch FedAvg is exactly a
//! centralized mini-batch SGD step over the participants' union dataset.

mod kmeans;
mod strategy;

pub use strategy::{SelectionStrategy, StrategyKind};

use serde::{Deserialize, Serialize};

use crate::dataset::{ClientDataset, LabeledDataset, Partition};
use crate::dpp::Selection;
use crate::error::EngineError;
use crate::metrics::gemd;
use crate::nn::{
    accumulate_grads, apply_step, forward, loss_and_grad, sgd_step, LayerParams, ModelParams,
};
use crate::profiling::{profile_wire_bytes, DataProfile};
use crate::rng::{derive_rng, Purpose};

/// Round-loop hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Clients selected per round (C_p).
    pub participants: usize,
    /// Local training passes per round (E).
    pub epochs: usize,
    /// Learning rate.
    pub eta: f64,
    /// Total rounds (T).
    pub horizon: usize,
    /// Local mini-batch size; None trains full-batch per epoch, the literal
    /// update rule. Mini-batching is an off-by-default extension.
    pub batch_size: Option<usize>,
}

/// Mutable trainer state: the global model and the round counter.
#[derive(Debug, Clone)]
pub struct FlState {
    pub global: ModelParams,
    /// Completed rounds; the next round is `round + 1`.
    pub round: usize,
}

/// Everything a round needs read-only access to.
pub struct RoundContext<'a> {
    pub dataset: &'a LabeledDataset,
    pub partition: &'a Partition,
    pub config: &'a EngineConfig,
    /// Indices evaluated for accuracy/loss each round.
    pub eval_indices: &'a [usize],
    /// Seed from which per-round streams are derived.
    pub seed: u64,
}

/// Per-round observables, one row of the experiment CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub selected: Vec<usize>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub mean_loss: f64,
    pub gemd: f64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
}

/// Result of one client's local training.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub params: ModelParams,
    pub samples: usize,
    /// Local loss under the incoming global model (first epoch, before any
    /// step); feeds the loss-proportional strategy.
    pub initial_loss: f64,
}

/// Runs E local passes from `global` over one client's data.
///
/// Full-batch per epoch by default: w <- w - (eta / n_c) * sum_i grad_i(w),
/// repeated E times. With `batch_size` set, each epoch walks the client's
/// samples in fixed index order in mini-batches.
pub fn local_update(
    global: &ModelParams,
    client: &ClientDataset,
    parent: &LabeledDataset,
    epochs: usize,
    eta: f64,
    batch_size: Option<usize>,
) -> Result<LocalUpdate, EngineError> {
    assert!(epochs >= 1, "need at least one local epoch");
    assert!(!client.is_empty(), "client {} has no samples", client.client_id);
    let batch = parent.gather(&client.indices);
    let labels = parent.labels_at(&client.indices);
    let n = client.len();

    let mut params = global.clone();
    let mut initial_loss = 0.0;
    match batch_size {
        None => {
            for epoch in 0..epochs {
                let (loss, grads) = loss_and_grad(&params, &batch, &labels)?;
                if epoch == 0 {
                    initial_loss = loss;
                }
                params = sgd_step(&params, &grads, eta)?;
            }
        }
        Some(bs) => {
            let bs = bs.max(1);
            let [c, h, w] = parent.sample_shape();
            let stride = c * h * w;
            for epoch in 0..epochs {
                let mut epoch_loss = 0.0;
                let mut start = 0;
                while start < n {
                    let end = (start + bs).min(n);
                    let count = end - start;
                    let mini = crate::tensor::Tensor::new(
                        vec![count, c, h, w],
                        batch.data()[start * stride..end * stride].to_vec(),
                    );
                    let (loss, grads) = loss_and_grad(&params, &mini, &labels[start..end])?;
                    epoch_loss += loss * count as f64;
                    params = sgd_step(&params, &grads, eta)?;
                    start = end;
                }
                if epoch == 0 {
                    initial_loss = epoch_loss / n as f64;
                }
            }
        }
    }

    Ok(LocalUpdate {
        params,
        samples: n,
        initial_loss,
    })
}

/// Sample-count-weighted parameter mean: sum_c (n_c / sum n) * w_c.
///
/// Computed anchored at the first model, out = w_1 + sum_c lambda_c
/// (w_c - w_1), which is the same weighted mean (the lambdas sum to 1) but
/// stays exact when the locals coincide; local models all branch off one
/// global, so the differences are the well-conditioned part.
pub fn aggregate(locals: &[(ModelParams, usize)]) -> Result<ModelParams, EngineError> {
    let Some((first, _)) = locals.first() else {
        return Err(EngineError::EmptyAggregation);
    };
    let total: usize = locals.iter().map(|(_, n)| n).sum();
    let mut out = first.clone();
    for (params, n) in &locals[1..] {
        add_scaled_diff(&mut out, params, first, *n as f64 / total as f64)?;
    }
    Ok(out)
}

/// acc += factor * (params - base), layer-wise.
fn add_scaled_diff(
    acc: &mut ModelParams,
    params: &ModelParams,
    base: &ModelParams,
    factor: f64,
) -> Result<(), EngineError> {
    if acc.layers.len() != params.layers.len() {
        return Err(EngineError::AggregationShape { layer: 0 });
    }
    for (idx, ((a, b), c)) in acc
        .layers
        .iter_mut()
        .zip(&params.layers)
        .zip(&base.layers)
        .enumerate()
    {
        match (a, b, c) {
            (
                LayerParams::Conv { kernels, bias },
                LayerParams::Conv { kernels: pk, bias: pb },
                LayerParams::Conv { kernels: bk, bias: bb },
            )
            | (
                LayerParams::Fc { weights: kernels, bias },
                LayerParams::Fc { weights: pk, bias: pb },
                LayerParams::Fc { weights: bk, bias: bb },
            ) => {
                if kernels.shape() != pk.shape() || bias.len() != pb.len() {
                    return Err(EngineError::AggregationShape { layer: idx });
                }
                for ((x, y), z) in kernels.data_mut().iter_mut().zip(pk.data()).zip(bk.data()) {
                    *x += factor * (y - z);
                }
                for ((x, y), z) in bias.iter_mut().zip(pb).zip(bb) {
                    *x += factor * (y - z);
                }
            }
            (LayerParams::Relu, LayerParams::Relu, LayerParams::Relu)
            | (LayerParams::Flatten, LayerParams::Flatten, LayerParams::Flatten)
            | (LayerParams::MaxPool { .. }, LayerParams::MaxPool { .. }, LayerParams::MaxPool { .. }) => {}
            _ => return Err(EngineError::AggregationShape { layer: idx }),
        }
    }
    Ok(())
}

/// Accuracy and mean cross-entropy of `params` over the given samples,
/// evaluated in chunks. Reads are untracked: evaluation deliberately scans
/// its split.
pub fn evaluate(
    params: &ModelParams,
    ds: &LabeledDataset,
    indices: &[usize],
) -> Result<(f64, f64), EngineError> {
    const EVAL_BATCH: usize = 512;
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    for chunk in indices.chunks(EVAL_BATCH) {
        let batch = ds.gather_untracked(chunk);
        let labels = ds.labels_at(chunk);
        let (logits, _) = forward(params, &batch)?;
        let classes = logits.shape()[1];
        for (i, &label) in labels.iter().enumerate() {
            let row = logits.row(i);
            let mut best = 0;
            for j in 1..classes {
                if row[j] > row[best] {
                    best = j;
                }
            }
            if best == label {
                correct += 1;
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let logsum = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
            loss_sum += logsum - row[label];
        }
    }
    let n = indices.len() as f64;
    Ok((correct as f64 / n, loss_sum / n))
}

/// Trains the selected clients (concurrently when the `parallel` feature is
/// on; results are order-stable either way) and returns their updates in
/// selection order.
pub fn train_selected(
    ctx: &RoundContext,
    global: &ModelParams,
    selection: &Selection,
) -> Result<Vec<LocalUpdate>, EngineError> {
    let run = |&client_id: &usize| {
        local_update(
            global,
            &ctx.partition.clients[client_id],
            ctx.dataset,
            ctx.config.epochs,
            ctx.config.eta,
            ctx.config.batch_size,
        )
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        selection.chosen.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        selection.chosen.iter().map(run).collect()
    }
}

/// Executes one full round: select, train, aggregate, evaluate, account.
///
/// Byte accounting assumes 32-bit serialized parameters each way per
/// participant; strategies that consume profiles additionally pay the
/// one-time 4Q-byte-per-client profile upload in round 1.
pub fn run_round(
    ctx: &RoundContext,
    state: FlState,
    strategy: &mut SelectionStrategy,
) -> Result<(FlState, RoundRecord), EngineError> {
    let round = state.round + 1;
    if round > ctx.config.horizon {
        return Err(EngineError::PastHorizon {
            round,
            horizon: ctx.config.horizon,
        });
    }
    let clients = ctx.partition.num_clients();
    let mut rng = derive_rng(ctx.seed, round, Purpose::Selection);
    let selection = strategy.select(round, clients, ctx.config.participants, &mut rng)?;

    let updates = train_selected(ctx, &state.global, &selection)?;
    let observed: Vec<f64> = updates.iter().map(|u| u.initial_loss).collect();
    strategy.observe_losses(&selection, &observed);

    let weighted: Vec<(ModelParams, usize)> =
        updates.into_iter().map(|u| (u.params, u.samples)).collect();
    let global = aggregate(&weighted)?;

    let (train_accuracy, mean_loss) = evaluate(&global, ctx.dataset, ctx.eval_indices)?;
    let diversity = gemd(&selection, ctx.partition);

    let model_bytes = global.serialized_bytes();
    let participants = selection.chosen.len() as u64;
    let mut uplink_bytes = participants * model_bytes;
    let downlink_bytes = participants * model_bytes;
    if round == 1 && strategy.kind().uses_profiles() {
        let q = state.global.fc1()?.1.len();
        uplink_bytes += clients as u64 * profile_wire_bytes(q);
    }

    let record = RoundRecord {
        round,
        selected: selection.chosen.clone(),
        train_accuracy,
        test_accuracy: train_accuracy,
        mean_loss,
        gemd: diversity.value,
        uplink_bytes,
        downlink_bytes,
    };
    Ok((
        FlState {
            global,
            round,
        },
        record,
    ))
}

/// Maximum relative deviation between (a) the aggregated one-epoch FedAvg
/// update and (b) the centralized SGD step on the participants' union
/// dataset with the same learning rate.
///
/// With E = 1 the two routes are the same algebra in different summation
/// order (the per-client weights n_c / sum(n) cancel the per-client 1 / n_c
/// factors), so the deviation stays at rounding level regardless of whether
/// client sizes are equal. Relative deviation uses denominator
/// max(|a|, |b|, 1e-8) so zero parameters do not blow up the ratio.
pub fn fedsgd_equivalence_check(
    ctx: &RoundContext,
    global: &ModelParams,
    selection: &Selection,
) -> Result<f64, EngineError> {
    // (a) the engine path: local updates then weighted aggregation.
    let updates = train_selected(ctx, global, selection)?;
    let weighted: Vec<(ModelParams, usize)> =
        updates.into_iter().map(|u| (u.params, u.samples)).collect();
    let fedavg = aggregate(&weighted)?;

    // (b) one centralized step on the union: w - eta * mean-gradient where
    // every sample contributes 1 / |D| regardless of its client.
    let union: Vec<usize> = selection
        .chosen
        .iter()
        .flat_map(|&c| ctx.partition.clients[c].indices.iter().copied())
        .collect();
    let total: usize = union.len();
    let mut mean_grad = global.zero_grads();
    for &c in &selection.chosen {
        let client = &ctx.partition.clients[c];
        let batch = ctx.dataset.gather_untracked(&client.indices);
        let labels = ctx.dataset.labels_at(&client.indices);
        let (_, mut grads) = loss_and_grad(global, &batch, &labels)?;
        // loss_and_grad mean-reduces per client; rescale to per-union.
        grads.scale(client.len() as f64 / total as f64);
        accumulate_grads(&mut mean_grad, &grads);
    }
    let central = apply_step(global, &mean_grad, ctx.config.eta)?;

    let a = fedavg.flatten();
    let b = central.flatten();
    let mut worst = 0.0f64;
    for (&x, &y) in a.iter().zip(&b) {
        let denom = x.abs().max(y.abs()).max(1e-8);
        worst = worst.max((x - y).abs() / denom);
    }
    Ok(worst)
}

/// Per-client profiles built from last-layer gradient means: the flattened
/// gradient of the final fully-connected layer under the initial model,
/// averaged over the client's samples. Comparison baseline for the FC-1
/// profiling signal.
pub fn gradient_profiles(
    params: &ModelParams,
    partition: &Partition,
    dataset: &LabeledDataset,
) -> Result<Vec<DataProfile>, EngineError> {
    let last_fc = params
        .layers
        .iter()
        .rposition(|l| matches!(l, LayerParams::Fc { .. }))
        .ok_or(crate::error::NnError::NoFcLayer)?;
    let mut out = Vec::with_capacity(partition.num_clients());
    for client in &partition.clients {
        let batch = dataset.gather(&client.indices);
        let labels = dataset.labels_at(&client.indices);
        let (_, grads) = loss_and_grad(params, &batch, &labels)?;
        let mean = match &grads.layers[last_fc] {
            LayerParams::Fc { weights, bias } => {
                let mut v = weights.data().to_vec();
                v.extend_from_slice(bias);
                v
            }
            _ => unreachable!(),
        };
        out.push(DataProfile {
            client_id: client.client_id,
            var: vec![0.0; mean.len()],
            mean,
        });
    }
    Ok(out)
}
