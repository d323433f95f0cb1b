//! Pluggable client-selection strategies.
//!
//! - `dpp`: k-DPP sampling over the profile kernel, the diversity-aware
//!   headline strategy.
//! - `random`: uniform without replacement (plain FedAvg).
//! - `loss-proportional` ("fedsae-like"): weighted sampling favoring clients
//!   with higher last-known local loss. A deliberate simplification of
//!   FedSAE, which also predicts affordable workloads; only the
//!   prefers-higher-loss facet is modeled here.
//! - `profile-cluster` ("cluster-like"): k-means on profiles at init, one
//!   uniform pick per cluster each round, substituting our profiles for the
//!   representation gradients of the clustered-sampling literature.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dpp::{kdpp_sample_with_decomposition, kernel_eigh, kernel_rank, Selection};
use crate::error::{DppError, EngineError};
use crate::linalg::EigenDecomposition;
use crate::profiling::{kernel_matrix, DataProfile, KernelMatrix, Normalization};

use super::kmeans::kmeans;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Dpp,
    Random,
    LossProportional,
    ProfileCluster,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Dpp,
        StrategyKind::Random,
        StrategyKind::LossProportional,
        StrategyKind::ProfileCluster,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Dpp => "dpp",
            StrategyKind::Random => "random",
            StrategyKind::LossProportional => "loss-proportional",
            StrategyKind::ProfileCluster => "profile-cluster",
        }
    }

    /// Whether clients must upload data profiles at initialization.
    pub fn uses_profiles(self) -> bool {
        matches!(self, StrategyKind::Dpp | StrategyKind::ProfileCluster)
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A strategy with its kind-specific state.
#[derive(Debug)]
pub enum SelectionStrategy {
    Dpp {
        decomposition: EigenDecomposition,
        rank: usize,
        /// Rounds where rank deficiency forced uniform fill-in.
        fallback_fills: u64,
    },
    Random,
    LossProportional {
        /// Latest known local loss per client; None until first selected.
        losses: Vec<Option<f64>>,
    },
    ProfileCluster {
        clusters: Vec<Vec<usize>>,
    },
}

impl SelectionStrategy {
    /// Builds strategy state. `profiles` must be provided for the kinds that
    /// use them and covers all C clients in id order.
    pub fn init(
        kind: StrategyKind,
        clients: usize,
        participants: usize,
        profiles: Option<&[DataProfile]>,
        normalization: Normalization,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, EngineError> {
        match kind {
            StrategyKind::Dpp => {
                let profiles = profiles.expect("dpp strategy requires profiles");
                let kernel = build_kernel(profiles, normalization)?;
                let decomposition = kernel_eigh(&kernel)?;
                let rank = kernel_rank(&decomposition);
                Ok(SelectionStrategy::Dpp {
                    decomposition,
                    rank,
                    fallback_fills: 0,
                })
            }
            StrategyKind::Random => Ok(SelectionStrategy::Random),
            StrategyKind::LossProportional => Ok(SelectionStrategy::LossProportional {
                losses: vec![None; clients],
            }),
            StrategyKind::ProfileCluster => {
                let profiles = profiles.expect("profile-cluster strategy requires profiles");
                let points: Vec<Vec<f64>> = profiles.iter().map(|p| p.mean.clone()).collect();
                Ok(SelectionStrategy::ProfileCluster {
                    clusters: kmeans(&points, participants, rng),
                })
            }
        }
    }

    pub fn kind(&self) -> StrategyKind {
        match self {
            SelectionStrategy::Dpp { .. } => StrategyKind::Dpp,
            SelectionStrategy::Random => StrategyKind::Random,
            SelectionStrategy::LossProportional { .. } => StrategyKind::LossProportional,
            SelectionStrategy::ProfileCluster { .. } => StrategyKind::ProfileCluster,
        }
    }

    /// Picks exactly `participants` distinct clients for this round.
    pub fn select(
        &mut self,
        round: usize,
        clients: usize,
        participants: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Selection, EngineError> {
        assert!(participants >= 1 && participants <= clients);
        let selection = match self {
            SelectionStrategy::Dpp {
                decomposition,
                rank,
                fallback_fills,
            } => {
                if *rank >= participants {
                    kdpp_sample_with_decomposition(decomposition, participants, round, rng)?
                } else {
                    // Rank deficiency: diversify as far as the kernel allows,
                    // then fill the remaining slots uniformly at random.
                    *fallback_fills += 1;
                    let mut base = if *rank > 0 {
                        kdpp_sample_with_decomposition(decomposition, *rank, round, rng)?.chosen
                    } else {
                        Vec::new()
                    };
                    let pool: Vec<usize> =
                        (0..clients).filter(|c| !base.contains(c)).collect();
                    for idx in sample(rng, pool.len(), participants - base.len()) {
                        base.push(pool[idx]);
                    }
                    base.sort_unstable();
                    Selection {
                        round,
                        chosen: base,
                    }
                }
            }
            SelectionStrategy::Random => {
                let mut chosen: Vec<usize> = sample(rng, clients, participants).into_iter().collect();
                chosen.sort_unstable();
                Selection { round, chosen }
            }
            SelectionStrategy::LossProportional { losses } => {
                let chosen = weighted_without_replacement(losses, participants, rng);
                Selection { round, chosen }
            }
            SelectionStrategy::ProfileCluster { clusters } => {
                let mut chosen: Vec<usize> = clusters
                    .iter()
                    .map(|members| members[rng.random_range(0..members.len())])
                    .collect();
                chosen.sort_unstable();
                chosen.dedup();
                // Clusters partition the clients, so picks are distinct; the
                // dedup is a guard, and any shortfall is refilled uniformly.
                while chosen.len() < participants {
                    let pool: Vec<usize> = (0..clients).filter(|c| !chosen.contains(c)).collect();
                    chosen.push(pool[rng.random_range(0..pool.len())]);
                    chosen.sort_unstable();
                }
                Selection { round, chosen }
            }
        };
        debug_assert_eq!(selection.chosen.len(), participants);
        debug_assert!(selection.chosen.windows(2).all(|w| w[0] < w[1]));
        Ok(selection)
    }

    /// Records local losses observed while training `selection`'s clients.
    pub fn observe_losses(&mut self, selection: &Selection, observed: &[f64]) {
        if let SelectionStrategy::LossProportional { losses } = self {
            for (&c, &loss) in selection.chosen.iter().zip(observed) {
                losses[c] = Some(loss);
            }
        }
    }

    /// Rounds in which the dpp kernel could not supply k diverse clients.
    pub fn fallback_fills(&self) -> u64 {
        match self {
            SelectionStrategy::Dpp { fallback_fills, .. } => *fallback_fills,
            _ => 0,
        }
    }
}

fn build_kernel(
    profiles: &[DataProfile],
    normalization: Normalization,
) -> Result<KernelMatrix, DppError> {
    let similarity = crate::profiling::similarity_matrix(profiles, normalization)
        .expect("profiles validated upstream");
    Ok(kernel_matrix(&similarity))
}

/// Sequential weighted draws without replacement. Weights are the latest
/// known losses; clients never yet selected weigh in at the running mean of
/// the known losses (uniform when nothing is known).
fn weighted_without_replacement(
    losses: &[Option<f64>],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let known: Vec<f64> = losses.iter().filter_map(|l| *l).collect();
    let default = if known.is_empty() {
        1.0
    } else {
        known.iter().sum::<f64>() / known.len() as f64
    };
    let mut weights: Vec<f64> = losses
        .iter()
        .map(|l| l.unwrap_or(default).max(1e-12))
        .collect();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = weights.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = None;
        let mut last_alive = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                last_alive = i;
            }
            target -= w;
            if target <= 0.0 && w > 0.0 {
                pick = Some(i);
                break;
            }
        }
        let pick = pick.unwrap_or(last_alive);
        chosen.push(pick);
        weights[pick] = 0.0;
    }
    chosen.sort_unstable();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_rng, Purpose};

    #[test]
    fn random_selects_exact_distinct_count() {
        let mut strategy = SelectionStrategy::Random;
        let mut rng = derive_rng(0, 0, Purpose::Selection);
        for round in 0..200 {
            let s = strategy.select(round, 20, 5, &mut rng).unwrap();
            assert_eq!(s.chosen.len(), 5);
            assert!(s.chosen.windows(2).all(|w| w[0] < w[1]));
            assert!(s.chosen.iter().all(|&c| c < 20));
        }
    }

    #[test]
    fn full_participation_returns_everyone() {
        let mut rng = derive_rng(1, 0, Purpose::Selection);
        let mut random = SelectionStrategy::Random;
        let s = random.select(0, 6, 6, &mut rng).unwrap();
        assert_eq!(s.chosen, vec![0, 1, 2, 3, 4, 5]);

        let mut lossy = SelectionStrategy::LossProportional {
            losses: vec![None; 6],
        };
        let s = lossy.select(0, 6, 6, &mut rng).unwrap();
        assert_eq!(s.chosen, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn loss_proportional_prefers_dominant_loss() {
        // One client's loss dwarfs the others by 1e6: it must appear in at
        // least 99% of selections.
        let mut losses = vec![Some(1e-6); 10];
        losses[7] = Some(1.0);
        let mut strategy = SelectionStrategy::LossProportional { losses };
        let mut rng = derive_rng(2, 0, Purpose::Selection);
        let mut hits = 0;
        let draws = 10_000;
        for round in 0..draws {
            let s = strategy.select(round, 10, 3, &mut rng).unwrap();
            if s.chosen.contains(&7) {
                hits += 1;
            }
        }
        assert!(
            hits as f64 / draws as f64 >= 0.99,
            "dominant-loss client hit rate {}",
            hits as f64 / draws as f64
        );
    }

    #[test]
    fn loss_proportional_unseen_use_running_mean() {
        let mut strategy = SelectionStrategy::LossProportional {
            losses: vec![None; 4],
        };
        strategy.observe_losses(
            &Selection {
                round: 0,
                chosen: vec![1, 2],
            },
            &[2.0, 4.0],
        );
        if let SelectionStrategy::LossProportional { losses } = &strategy {
            assert_eq!(losses[1], Some(2.0));
            assert_eq!(losses[2], Some(4.0));
            assert_eq!(losses[0], None);
        } else {
            unreachable!()
        }
        // Unseen clients weigh in at mean(2, 4) = 3; over many draws of k = 1
        // the frequency of client 0 approaches 3 / (3 + 2 + 4 + 3) = 0.25.
        let mut rng = derive_rng(3, 0, Purpose::Selection);
        let mut count0 = 0;
        let draws = 40_000;
        for round in 0..draws {
            let s = strategy.select(round, 4, 1, &mut rng).unwrap();
            if s.chosen == vec![0] {
                count0 += 1;
            }
        }
        let freq = count0 as f64 / draws as f64;
        assert!((freq - 0.25).abs() < 0.01, "unseen-client frequency {freq}");
    }

    #[test]
    fn cluster_strategy_picks_one_per_cluster() {
        let mut strategy = SelectionStrategy::ProfileCluster {
            clusters: vec![vec![0, 1], vec![2, 3], vec![4, 5]],
        };
        let mut rng = derive_rng(4, 0, Purpose::Selection);
        for round in 0..100 {
            let s = strategy.select(round, 6, 3, &mut rng).unwrap();
            assert_eq!(s.chosen.len(), 3);
            assert!(s.chosen.iter().filter(|&&c| c < 2).count() == 1);
            assert!(s.chosen.iter().filter(|&&c| (2..4).contains(&c)).count() == 1);
            assert!(s.chosen.iter().filter(|&&c| c >= 4).count() == 1);
        }
    }

    #[test]
    fn dpp_identity_kernel_matches_uniform_enumeration() {
        // Identity kernel: every pair equally likely; compare against the
        // brute-force pmf at C = 6, k = 2.
        use crate::dpp::kdpp_pmf_bruteforce;
        use crate::linalg::SquareMatrix;
        use crate::profiling::KernelMatrix;

        let kernel = KernelMatrix {
            l: SquareMatrix::identity(6),
        };
        let pmf = kdpp_pmf_bruteforce(&kernel, 2).unwrap();
        let decomposition = kernel_eigh(&kernel).unwrap();
        let rank = kernel_rank(&decomposition);
        let mut strategy = SelectionStrategy::Dpp {
            decomposition,
            rank,
            fallback_fills: 0,
        };
        let mut rng = derive_rng(5, 0, Purpose::Selection);
        let mut counts = std::collections::HashMap::new();
        let draws = 150_000;
        for round in 0..draws {
            let s = strategy.select(round, 6, 2, &mut rng).unwrap();
            *counts.entry(s.chosen).or_insert(0usize) += 1;
        }
        for (subset, p) in pmf {
            let freq = *counts.get(&subset).unwrap_or(&0) as f64 / draws as f64;
            assert!(
                (freq - p).abs() < 0.01,
                "subset {subset:?}: freq {freq} vs pmf {p}"
            );
        }
    }

    #[test]
    fn dpp_rank_deficient_falls_back_to_uniform_fill() {
        use crate::linalg::SquareMatrix;
        use crate::profiling::KernelMatrix;

        // All-ones kernel has rank 1 but k = 3 requested.
        let mut l = SquareMatrix::zeros(6);
        for i in 0..6 {
            for j in 0..6 {
                l.set(i, j, 1.0);
            }
        }
        let kernel = KernelMatrix { l };
        let decomposition = kernel_eigh(&kernel).unwrap();
        let rank = kernel_rank(&decomposition);
        assert_eq!(rank, 1);
        let mut strategy = SelectionStrategy::Dpp {
            decomposition,
            rank,
            fallback_fills: 0,
        };
        let mut rng = derive_rng(6, 0, Purpose::Selection);
        for round in 0..50 {
            let s = strategy.select(round, 6, 3, &mut rng).unwrap();
            assert_eq!(s.chosen.len(), 3);
            assert!(s.chosen.windows(2).all(|w| w[0] < w[1]));
        }
        assert_eq!(strategy.fallback_fills(), 50);
    }
}
