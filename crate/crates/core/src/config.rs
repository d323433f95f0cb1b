//! Experiment configuration: a flat TOML document, schema-validated with
//! every violation reported at once.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SkewSpec;
use crate::engine::StrategyKind;
use crate::error::ExperimentError;
use crate::nn::{InitScheme, NetworkSpec};
use crate::profiling::Normalization;

/// Which per-client signal feeds profile-consuming strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileSource {
    /// Mean FC-1 pre-activation vector (the headline profiling signal).
    Fc1Mean,
    /// Mean last-layer gradient, a commonly used comparison signal.
    GradientMean,
}

/// Evaluation split for per-round accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalSplit {
    /// Evaluate on the union of all clients' training data.
    Train,
    /// Hold out this fraction of samples before partitioning.
    Heldout(f64),
}

fn default_synth_samples() -> usize {
    2000
}
fn default_synth_classes() -> usize {
    10
}
fn default_epochs() -> usize {
    1
}
fn default_skew() -> String {
    "1".to_string()
}
fn default_strategy() -> String {
    "dpp".to_string()
}
fn default_init() -> String {
    "kaiming-normal".to_string()
}
fn default_trials() -> usize {
    1
}
fn default_eval_split() -> String {
    "train".to_string()
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_thresholds() -> Vec<f64> {
    vec![0.8, 0.9, 0.95]
}
fn default_profile_source() -> ProfileSource {
    ProfileSource::Fc1Mean
}
fn default_conv_channels() -> [usize; 2] {
    [8, 16]
}
fn default_kernel_size() -> usize {
    5
}
fn default_hidden_units() -> usize {
    64
}

/// One experiment: dataset source, federation sizes, training
/// hyperparameters, selection strategy, and output destination.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// "synthetic" or "idx".
    pub dataset: String,
    #[serde(default = "default_synth_samples")]
    pub synth_samples: usize,
    #[serde(default = "default_synth_classes")]
    pub synth_classes: usize,
    #[serde(default)]
    pub idx_images: Option<PathBuf>,
    #[serde(default)]
    pub idx_labels: Option<PathBuf>,

    /// C: total clients.
    pub clients: usize,
    /// C_p: clients selected per round.
    pub participants: usize,
    /// T: training rounds.
    pub rounds: usize,
    /// E: local passes per round.
    #[serde(default = "default_epochs")]
    pub local_epochs: usize,
    /// eta.
    pub learning_rate: f64,
    /// "H" for an even two-class split, or a fraction in (0, 1].
    #[serde(default = "default_skew")]
    pub skew: String,
    #[serde(default = "default_strategy")]
    pub strategy: String,
    #[serde(default = "default_init")]
    pub init_scheme: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// "train" or a held-out fraction in (0, 1).
    #[serde(default = "default_eval_split")]
    pub eval_split: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,

    /// 0 trains full-batch per local epoch (the default update rule).
    #[serde(default)]
    pub batch_size: usize,
    #[serde(default = "default_thresholds")]
    pub accuracy_thresholds: Vec<f64>,
    /// Flip the similarity normalization to off-diagonal extrema.
    #[serde(default)]
    pub normalize_offdiag_only: bool,
    #[serde(default = "default_profile_source")]
    pub profile_source: ProfileSource,

    /// Architecture widths; the layer pattern is fixed at 2 conv + 2 FC.
    #[serde(default = "default_conv_channels")]
    pub conv_channels: [usize; 2],
    #[serde(default = "default_kernel_size")]
    pub kernel_size: usize,
    #[serde(default = "default_hidden_units")]
    pub hidden_units: usize,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ExperimentError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Collects every schema violation; empty means valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match self.dataset.as_str() {
            "synthetic" => {
                if self.synth_classes < 2 {
                    v.push(format!("synth_classes = {} must be >= 2", self.synth_classes));
                }
                if self.synth_samples < self.synth_classes {
                    v.push(format!(
                        "synth_samples = {} must be >= synth_classes = {}",
                        self.synth_samples, self.synth_classes
                    ));
                }
            }
            "idx" => {
                if self.idx_images.is_none() {
                    v.push("dataset = \"idx\" requires idx_images".to_string());
                }
                if self.idx_labels.is_none() {
                    v.push("dataset = \"idx\" requires idx_labels".to_string());
                }
            }
            other => v.push(format!("dataset = {other:?} is not \"synthetic\" or \"idx\"")),
        }
        if self.clients == 0 {
            v.push("clients must be >= 1".to_string());
        }
        if self.participants == 0 || self.participants > self.clients {
            v.push(format!(
                "participants = {} must be in [1, clients = {}]",
                self.participants, self.clients
            ));
        }
        if self.rounds == 0 {
            v.push("rounds must be >= 1".to_string());
        }
        if self.local_epochs == 0 {
            v.push("local_epochs must be >= 1".to_string());
        }
        if !(self.learning_rate > 0.0) {
            v.push(format!("learning_rate = {} must be > 0", self.learning_rate));
        }
        if self.trials == 0 {
            v.push("trials must be >= 1".to_string());
        }
        if let Err(e) = SkewSpec::parse(&self.skew) {
            v.push(e.to_string());
        }
        if self.strategy.parse::<StrategyKind>().is_err() {
            v.push(format!(
                "strategy = {:?} is not one of dpp, random, loss-proportional, profile-cluster",
                self.strategy
            ));
        }
        if self.init_scheme.parse::<InitScheme>().is_err() {
            v.push(format!(
                "init_scheme = {:?} is not one of xavier-normal, xavier-uniform, \
                 kaiming-normal, kaiming-uniform",
                self.init_scheme
            ));
        }
        match self.eval_split.as_str() {
            "train" => {}
            other => match other.parse::<f64>() {
                Ok(f) if f > 0.0 && f < 1.0 => {}
                _ => v.push(format!(
                    "eval_split = {other:?} is not \"train\" or a fraction in (0, 1)"
                )),
            },
        }
        if self.accuracy_thresholds.is_empty() {
            v.push("accuracy_thresholds must be nonempty".to_string());
        }
        for &t in &self.accuracy_thresholds {
            if !(t > 0.0 && t <= 1.0) {
                v.push(format!("accuracy threshold {t} outside (0, 1]"));
            }
        }
        if self.conv_channels.iter().any(|&c| c == 0) {
            v.push(format!("conv_channels {:?} must be positive", self.conv_channels));
        }
        if self.kernel_size == 0 {
            v.push("kernel_size must be >= 1".to_string());
        }
        if self.hidden_units == 0 {
            v.push("hidden_units must be >= 1".to_string());
        }
        if v.is_empty() {
            // Widths are individually fine; confirm the full 28x28 chain.
            let classes = self.effective_classes();
            if let Err(e) = self.network_spec(classes).shape_chain() {
                v.push(format!("architecture does not fit 28x28 inputs: {e}"));
            }
        }
        v
    }

    /// Errors with the full violation list unless the config is valid.
    pub fn validated(&self) -> Result<(), ExperimentError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ExperimentError::Invalid(v))
        }
    }

    pub fn skew_spec(&self) -> SkewSpec {
        SkewSpec::parse(&self.skew).expect("validated skew")
    }

    pub fn strategy_kind(&self) -> StrategyKind {
        self.strategy.parse().expect("validated strategy")
    }

    pub fn init(&self) -> InitScheme {
        self.init_scheme.parse().expect("validated init scheme")
    }

    pub fn eval(&self) -> EvalSplit {
        match self.eval_split.as_str() {
            "train" => EvalSplit::Train,
            other => EvalSplit::Heldout(other.parse().expect("validated eval split")),
        }
    }

    pub fn normalization(&self) -> Normalization {
        if self.normalize_offdiag_only {
            Normalization::OffDiagonalOnly
        } else {
            Normalization::AllEntries
        }
    }

    /// Class count used when sizing the output layer for synthetic data;
    /// IDX datasets override this after loading.
    pub fn effective_classes(&self) -> usize {
        if self.dataset == "synthetic" {
            self.synth_classes
        } else {
            10
        }
    }

    pub fn network_spec(&self, classes: usize) -> NetworkSpec {
        NetworkSpec::conv2_fc2(
            [1, 28, 28],
            self.conv_channels[0],
            self.conv_channels[1],
            self.kernel_size,
            self.hidden_units,
            classes,
        )
    }

    pub fn local_batch_size(&self) -> Option<usize> {
        if self.batch_size == 0 {
            None
        } else {
            Some(self.batch_size)
        }
    }
}
