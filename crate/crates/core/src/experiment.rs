//! Multi-trial experiment orchestration and result emission.
//!
//! Trial i runs with seed `config.seed + i`, writing one CSV of per-round
//! records; a summary JSON aggregates mean/std curves and rounds-to-threshold
//! figures across trials. Outputs are byte-identical across re-runs of the
//! same config.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::{EvalSplit, ExperimentConfig, ProfileSource};
use crate::dataset::{partition, synth_dataset, LabeledDataset, Partition};
use crate::dpp::kdpp_pmf_bruteforce;
use crate::engine::{
    gradient_profiles, run_round, EngineConfig, FlState, RoundContext, RoundRecord,
    SelectionStrategy,
};
use crate::error::ExperimentError;
use crate::nn::init_params;
use crate::profiling::{
    kernel_matrix, profile_all, profiles_wire_blob, similarity_matrix, DataProfile, KernelMatrix,
};
use crate::rng::{derive_rng, Purpose};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str =
    "round,strategy,trial,train_accuracy,test_accuracy,mean_loss,gemd,uplink_bytes,downlink_bytes";

/// All trials' records plus the cross-trial summary.
#[derive(Debug)]
pub struct ResultBundle {
    pub trials: Vec<Vec<RoundRecord>>,
    pub summary: Summary,
}

/// Cross-trial aggregates; `schema_version` gates downstream parsers, and the
/// scale fields record exactly what was run so desk-scale results are never
/// conflated with full-scale numbers.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub strategy: String,
    pub dataset: String,
    pub clients: usize,
    pub participants: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub skew: String,
    pub init_scheme: String,
    pub seed: u64,
    pub trials: usize,
    pub eval_split: String,
    /// Mean and population std of accuracy per round, across trials.
    pub accuracy_mean: Vec<f64>,
    pub accuracy_std: Vec<f64>,
    pub gemd_mean: Vec<f64>,
    pub gemd_std: Vec<f64>,
    /// First round whose mean accuracy reaches each threshold (null if never).
    pub rounds_to_accuracy: BTreeMap<String, Option<usize>>,
    /// Per-trial crossing rounds, same keys.
    pub per_trial_rounds_to_accuracy: BTreeMap<String, Vec<Option<usize>>>,
    pub total_uplink_bytes: u64,
    pub total_downlink_bytes: u64,
    /// Rounds where the dpp kernel was too rank-deficient to fill the cohort,
    /// summed over trials.
    pub dpp_fallback_fills: u64,
}

/// Runs every trial, writes one CSV per trial plus `summary.json` under
/// `config.output_dir`, and returns everything in memory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultBundle, ExperimentError> {
    config.validated()?;
    fs::create_dir_all(&config.output_dir).map_err(|source| ExperimentError::Io {
        path: config.output_dir.display().to_string(),
        source,
    })?;

    // IDX data is shared by all trials; synthetic data is per-trial.
    let idx_base = match config.dataset.as_str() {
        "idx" => Some(crate::dataset::load_idx(
            config.idx_images.as_ref().expect("validated"),
            config.idx_labels.as_ref().expect("validated"),
        )?),
        _ => None,
    };

    let trial_ids: Vec<usize> = (0..config.trials).collect();
    let run_one = |&trial: &usize| run_trial(config, idx_base.as_ref(), trial);
    #[cfg(feature = "parallel")]
    let trials: Result<Vec<TrialOutput>, ExperimentError> = {
        use rayon::prelude::*;
        trial_ids.par_iter().map(run_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let trials: Result<Vec<TrialOutput>, ExperimentError> = trial_ids.iter().map(run_one).collect();
    let trials = trials?;

    let strategy_name = config.strategy_kind().name();
    for (i, t) in trials.iter().enumerate() {
        let path = config
            .output_dir
            .join(format!("{strategy_name}_trial{i:03}.csv"));
        emit_csv(&t.records, strategy_name, i, &path)?;
    }

    let summary = summarize(config, &trials);
    emit_summary(&summary, &config.output_dir.join("summary.json"))?;

    Ok(ResultBundle {
        trials: trials.into_iter().map(|t| t.records).collect(),
        summary,
    })
}

struct TrialOutput {
    records: Vec<RoundRecord>,
    fallback_fills: u64,
}

fn run_trial(
    config: &ExperimentConfig,
    idx_base: Option<&LabeledDataset>,
    trial: usize,
) -> Result<TrialOutput, ExperimentError> {
    let seed = config.seed + trial as u64;

    let base = match idx_base {
        Some(ds) => ds.clone(),
        None => synth_dataset(config.synth_samples, config.synth_classes, seed),
    };
    let (train_ds, heldout) = match config.eval() {
        EvalSplit::Train => (base, None),
        EvalSplit::Heldout(fraction) => {
            let (t, h) = split_dataset(&base, fraction, seed);
            (t, Some(h))
        }
    };

    let part = partition(&train_ds, config.clients, config.skew_spec(), seed)?;
    let classes = train_ds.classes();
    let spec = config.network_spec(classes);
    let global = init_params(&spec, config.init(), seed);

    let kind = config.strategy_kind();
    let profiles = if kind.uses_profiles() {
        Some(match config.profile_source {
            ProfileSource::Fc1Mean => profile_all(&global, &part.clients, &train_ds)
                .map_err(crate::error::EngineError::from)?,
            ProfileSource::GradientMean => gradient_profiles(&global, &part, &train_ds)?,
        })
    } else {
        None
    };
    let mut kmeans_rng = derive_rng(seed, 0, Purpose::Kmeans);
    let mut strategy = SelectionStrategy::init(
        kind,
        config.clients,
        config.participants,
        profiles.as_deref(),
        config.normalization(),
        &mut kmeans_rng,
    )?;

    let engine_cfg = EngineConfig {
        participants: config.participants,
        epochs: config.local_epochs,
        eta: config.learning_rate,
        horizon: config.rounds,
        batch_size: config.local_batch_size(),
    };
    let train_union = part.union_indices();
    // Accuracy and loss inside run_round cover the training union; with a
    // held-out split, test_accuracy is re-evaluated on it afterwards.
    let heldout_indices: Vec<usize> = heldout.as_ref().map_or(Vec::new(), |h| (0..h.len()).collect());

    let ctx = RoundContext {
        dataset: &train_ds,
        partition: &part,
        config: &engine_cfg,
        eval_indices: &train_union,
        seed,
    };

    let mut state = FlState {
        global,
        round: 0,
    };
    let mut records = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        let (next, mut record) = run_round(&ctx, state, &mut strategy)?;
        if let Some(h) = &heldout {
            let (acc, _) = crate::engine::evaluate(&next.global, h, &heldout_indices)?;
            record.test_accuracy = acc;
        }
        records.push(record);
        state = next;
    }

    Ok(TrialOutput {
        records,
        fallback_fills: strategy.fallback_fills(),
    })
}

/// Deterministically splits off a held-out fraction before partitioning.
fn split_dataset(ds: &LabeledDataset, fraction: f64, seed: u64) -> (LabeledDataset, LabeledDataset) {
    use rand::seq::SliceRandom;
    let n = ds.len();
    let heldout_n = ((n as f64 * fraction).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derive_rng(seed, 0, Purpose::Shuffle));
    let (held, train) = order.split_at(heldout_n);
    (subset(ds, train), subset(ds, held))
}

fn subset(ds: &LabeledDataset, indices: &[usize]) -> LabeledDataset {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    let samples = ds.gather_untracked(&sorted);
    let labels = ds.labels_at(&sorted);
    LabeledDataset::new(samples, labels, ds.classes()).expect("subset of valid dataset")
}

fn summarize(config: &ExperimentConfig, trials: &[TrialOutput]) -> Summary {
    let rounds = config.rounds;
    let acc_matrix: Vec<Vec<f64>> = trials
        .iter()
        .map(|t| t.records.iter().map(|r| r.train_accuracy).collect())
        .collect();
    let gemd_matrix: Vec<Vec<f64>> = trials
        .iter()
        .map(|t| t.records.iter().map(|r| r.gemd).collect())
        .collect();

    let (accuracy_mean, accuracy_std) = mean_std_curves(&acc_matrix, rounds);
    let (gemd_mean, gemd_std) = mean_std_curves(&gemd_matrix, rounds);

    let mut rounds_to_accuracy = BTreeMap::new();
    let mut per_trial = BTreeMap::new();
    for &threshold in &config.accuracy_thresholds {
        let key = format!("{threshold}");
        rounds_to_accuracy.insert(
            key.clone(),
            crate::metrics::rounds_to_threshold(&accuracy_mean, threshold),
        );
        per_trial.insert(
            key,
            acc_matrix
                .iter()
                .map(|curve| crate::metrics::rounds_to_threshold(curve, threshold))
                .collect(),
        );
    }

    Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        strategy: config.strategy_kind().name().to_string(),
        dataset: match config.dataset.as_str() {
            "synthetic" => format!(
                "synthetic(n={}, classes={})",
                config.synth_samples, config.synth_classes
            ),
            _ => format!("idx({})", config.idx_images.as_ref().unwrap().display()),
        },
        clients: config.clients,
        participants: config.participants,
        rounds,
        local_epochs: config.local_epochs,
        learning_rate: config.learning_rate,
        skew: config.skew_spec().label(),
        init_scheme: config.init().name().to_string(),
        seed: config.seed,
        trials: trials.len(),
        eval_split: config.eval_split.clone(),
        accuracy_mean,
        accuracy_std,
        gemd_mean,
        gemd_std,
        rounds_to_accuracy,
        per_trial_rounds_to_accuracy: per_trial,
        total_uplink_bytes: trials
            .iter()
            .flat_map(|t| t.records.iter().map(|r| r.uplink_bytes))
            .sum(),
        total_downlink_bytes: trials
            .iter()
            .flat_map(|t| t.records.iter().map(|r| r.downlink_bytes))
            .sum(),
        dpp_fallback_fills: trials.iter().map(|t| t.fallback_fills).sum(),
    }
}

fn mean_std_curves(matrix: &[Vec<f64>], rounds: usize) -> (Vec<f64>, Vec<f64>) {
    let trials = matrix.len() as f64;
    let mut means = Vec::with_capacity(rounds);
    let mut stds = Vec::with_capacity(rounds);
    for r in 0..rounds {
        let mean = matrix.iter().map(|c| c[r]).sum::<f64>() / trials;
        let var = matrix.iter().map(|c| (c[r] - mean).powi(2)).sum::<f64>() / trials;
        means.push(mean);
        stds.push(var.sqrt());
    }
    (means, stds)
}

/// 17 significant digits: enough for exact f64 round-trips.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes records as CSV with the fixed header. Byte-stable for identical
/// inputs.
pub fn emit_csv(
    records: &[RoundRecord],
    strategy: &str,
    trial: usize,
    path: &Path,
) -> Result<(), ExperimentError> {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.round,
            strategy,
            trial,
            fmt_f64(r.train_accuracy),
            fmt_f64(r.test_accuracy),
            fmt_f64(r.mean_loss),
            fmt_f64(r.gemd),
            r.uplink_bytes,
            r.downlink_bytes
        ));
    }
    write_file(path, out.as_bytes())
}

/// Parses a CSV written by [`emit_csv`]; selected-client sets are not stored
/// in CSV, so they come back empty.
pub fn parse_csv(text: &str) -> Result<Vec<(String, usize, RoundRecord)>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(format!("bad header: {other:?}")),
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(format!("line {}: {} fields", lineno + 2, fields.len()));
        }
        let parse_f = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", lineno + 2));
        let parse_u = |s: &str| s.parse::<u64>().map_err(|e| format!("line {}: {e}", lineno + 2));
        out.push((
            fields[1].to_string(),
            fields[2].parse().map_err(|e| format!("line {}: {e}", lineno + 2))?,
            RoundRecord {
                round: fields[0].parse().map_err(|e| format!("line {}: {e}", lineno + 2))?,
                selected: Vec::new(),
                train_accuracy: parse_f(fields[3])?,
                test_accuracy: parse_f(fields[4])?,
                mean_loss: parse_f(fields[5])?,
                gemd: parse_f(fields[6])?,
                uplink_bytes: parse_u(fields[7])?,
                downlink_bytes: parse_u(fields[8])?,
            },
        ));
    }
    Ok(out)
}

pub fn emit_summary(summary: &Summary, path: &Path) -> Result<(), ExperimentError> {
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    write_file(path, json.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let mut f = fs::File::create(path).map_err(|source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(bytes).map_err(|source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Profiles, similarity matrix, and kernel for trial 0 of a config; backs
/// the `profile` CLI verb and the initialization-robustness analysis.
#[derive(Debug, Serialize)]
pub struct ProfileReport {
    pub init_scheme: String,
    pub profiles: Vec<DataProfile>,
    pub similarity: Vec<Vec<f64>>,
    pub kernel: Vec<Vec<f64>>,
    /// Dominant label per client, for plotting.
    pub client_labels: Vec<usize>,
}

pub fn profile_report(config: &ExperimentConfig) -> Result<ProfileReport, ExperimentError> {
    config.validated()?;
    let seed = config.seed;
    let base = match config.dataset.as_str() {
        "idx" => crate::dataset::load_idx(
            config.idx_images.as_ref().expect("validated"),
            config.idx_labels.as_ref().expect("validated"),
        )?,
        _ => synth_dataset(config.synth_samples, config.synth_classes, seed),
    };
    let part = partition(&base, config.clients, config.skew_spec(), seed)?;
    let spec = config.network_spec(base.classes());
    let global = init_params(&spec, config.init(), seed);
    let profiles = match config.profile_source {
        ProfileSource::Fc1Mean => {
            profile_all(&global, &part.clients, &base).map_err(crate::error::EngineError::from)?
        }
        ProfileSource::GradientMean => gradient_profiles(&global, &part, &base)?,
    };
    let similarity = similarity_matrix(&profiles, config.normalization())
        .map_err(crate::error::EngineError::from)?;
    let kernel = kernel_matrix(&similarity);
    let client_labels = part
        .clients
        .iter()
        .map(|c| {
            c.label_hist
                .iter()
                .enumerate()
                .max_by_key(|(_, &count)| count)
                .map(|(j, _)| j)
                .unwrap_or(0)
        })
        .collect();
    Ok(ProfileReport {
        init_scheme: config.init().name().to_string(),
        similarity: matrix_rows(&similarity.s),
        kernel: matrix_rows(&kernel.l),
        profiles,
        client_labels,
    })
}

fn matrix_rows(m: &crate::linalg::SquareMatrix) -> Vec<Vec<f64>> {
    (0..m.n()).map(|i| m.row(i).to_vec()).collect()
}

/// Writes `profiles.json`, `profiles.bin` (client-ordered f32 means), and
/// `similarity.json` under `dir`.
pub fn emit_profile_report(report: &ProfileReport, dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let json = serde_json::to_string_pretty(&report.profiles).expect("profiles serialize");
    write_file(&dir.join("profiles.json"), json.as_bytes())?;
    write_file(&dir.join("profiles.bin"), &profiles_wire_blob(&report.profiles))?;
    let sim = serde_json::to_string_pretty(&report.similarity).expect("matrix serializes");
    write_file(&dir.join("similarity.json"), sim.as_bytes())
}

/// Brute-force k-DPP pmf for the config's kernel (C <= 15); backs the `pmf`
/// debug verb.
#[derive(Debug, Serialize)]
pub struct PmfReport {
    pub participants: usize,
    pub entries: Vec<PmfEntry>,
}

#[derive(Debug, Serialize)]
pub struct PmfEntry {
    pub subset: Vec<usize>,
    pub probability: f64,
}

pub fn pmf_report(config: &ExperimentConfig) -> Result<PmfReport, ExperimentError> {
    let report = profile_report(config)?;
    let kernel = KernelMatrix {
        l: crate::linalg::SquareMatrix::from_rows(report.kernel.clone()),
    };
    let entries = kdpp_pmf_bruteforce(&kernel, config.participants)
        .map_err(crate::error::EngineError::from)?
        .into_iter()
        .map(|(subset, probability)| PmfEntry {
            subset,
            probability,
        })
        .collect();
    Ok(PmfReport {
        participants: config.participants,
        entries,
    })
}

/// Builds the per-trial base dataset and partition exactly as
/// [`run_experiment`] would; shared by tests and diagnostics.
pub fn trial_partition(
    config: &ExperimentConfig,
    trial: usize,
) -> Result<(LabeledDataset, Partition), ExperimentError> {
    let seed = config.seed + trial as u64;
    let base = match config.dataset.as_str() {
        "idx" => crate::dataset::load_idx(
            config.idx_images.as_ref().expect("validated"),
            config.idx_labels.as_ref().expect("validated"),
        )?,
        _ => synth_dataset(config.synth_samples, config.synth_classes, seed),
    };
    let part = partition(&base, config.clients, config.skew_spec(), seed)?;
    Ok((base, part))
}
