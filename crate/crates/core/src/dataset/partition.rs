//! Skew-controlled assignment of samples to clients.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::DataError;
use crate::rng::{derive_rng, Purpose};

use super::{ClientDataset, LabeledDataset, Partition, SkewSpec};

/// Splits `ds` across `clients` clients of exactly floor(n / C) samples each
/// (leftovers are discarded).
///
/// Dominant classes are assigned round-robin: client c's dominant class is
/// c mod N, and for `half-half` its second class is (c + 1) mod N. Dominant
/// demand is reserved for every client before any free draw, so feasibility
/// depends only on per-class supply. Non-dominant samples are drawn uniformly
/// without replacement from the remaining samples of all other classes.
pub fn partition(
    ds: &LabeledDataset,
    clients: usize,
    skew: SkewSpec,
    seed: u64,
) -> Result<Partition, DataError> {
    skew.validate()?;
    assert!(clients >= 1, "need at least one client");
    let n = ds.len();
    let classes = ds.classes();
    let per_client = n / clients;
    if per_client == 0 {
        return Err(DataError::TooSmall { n, clients });
    }

    // Per-client (class, count) reservations.
    let demands: Vec<Vec<(usize, usize)>> = (0..clients)
        .map(|c| match skew {
            SkewSpec::Fraction(xi) => {
                let dom = ((xi * per_client as f64).round() as usize).min(per_client);
                vec![(c % classes, dom)]
            }
            SkewSpec::HalfHalf => {
                let first = per_client.div_ceil(2);
                vec![(c % classes, first), ((c + 1) % classes, per_client - first)]
            }
        })
        .collect();

    // Feasibility: reserved demand per class against supply.
    let supply = ds.histogram();
    let mut demand = vec![0usize; classes];
    for d in &demands {
        for &(class, count) in d {
            demand[class] += count;
        }
    }
    for class in 0..classes {
        if demand[class] > supply[class] {
            return Err(DataError::InfeasibleSkew {
                class,
                supply: supply[class],
                demand: demand[class],
            });
        }
    }

    // Shuffled per-class pools; popping the back is a uniform draw without
    // replacement.
    let mut rng = derive_rng(seed, 0, Purpose::Partition);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &label) in ds.labels().iter().enumerate() {
        pools[label].push(i);
    }
    for pool in pools.iter_mut() {
        pool.shuffle(&mut rng);
    }

    let mut assigned: Vec<Vec<usize>> = vec![Vec::with_capacity(per_client); clients];
    for (c, d) in demands.iter().enumerate() {
        for &(class, count) in d {
            for _ in 0..count {
                assigned[c].push(pools[class].pop().expect("reserved by feasibility check"));
            }
        }
    }

    // Free draws for fraction(xi < 1): uniform over the remaining samples of
    // all other classes, guarded so no later client is starved.
    //
    // Feasibility invariant (Hall's condition for one-excluded-class
    // demands): for every class m, the remaining free need of clients whose
    // dominant class is m must fit into the leftovers of the other classes,
    // i.e. need[m] + leftover[m] <= total. A draw from class j tightens the
    // constraint of every class other than j and the drawer's dominant, so a
    // class at equality must be drawn from (or be the drawer's dominant), and
    // clients of a tight class are served first.
    if let SkewSpec::Fraction(_) = skew {
        let mut remaining: Vec<usize> = (0..clients)
            .map(|c| per_client - assigned[c].len())
            .collect();
        let mut need = vec![0usize; classes];
        for c in 0..clients {
            need[c % classes] += remaining[c];
        }
        let mut total: usize = pools.iter().map(|p| p.len()).sum();
        let mut cursor = 0; // round-robin position over clients

        while remaining.iter().any(|&r| r > 0) {
            let tight: Vec<usize> = (0..classes)
                .filter(|&m| need[m] > 0 && need[m] + pools[m].len() == total)
                .collect();
            let client = if let Some(&m) = tight.first() {
                (0..clients)
                    .find(|&c| c % classes == m && remaining[c] > 0)
                    .expect("need[m] > 0 implies such a client")
            } else {
                while remaining[cursor % clients] == 0 {
                    cursor += 1;
                }
                let c = cursor % clients;
                cursor += 1;
                c
            };
            let dominant = client % classes;

            let eligible: Vec<usize> = (0..classes)
                .filter(|&j| {
                    j != dominant
                        && !pools[j].is_empty()
                        && tight.iter().all(|&m| m == j || m == dominant)
                })
                .collect();
            let weight: usize = eligible.iter().map(|&j| pools[j].len()).sum();
            if weight == 0 {
                return Err(DataError::PoolExhausted {
                    client,
                    need: remaining[client],
                    have: pools
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != dominant)
                        .map(|(_, p)| p.len())
                        .sum(),
                });
            }
            let mut pick = rng.random_range(0..weight);
            for &j in &eligible {
                if pick < pools[j].len() {
                    assigned[client].push(pools[j].pop().expect("nonempty by pick < len"));
                    remaining[client] -= 1;
                    need[dominant] -= 1;
                    total -= 1;
                    break;
                }
                pick -= pools[j].len();
            }
        }
    }

    let mut client_sets = Vec::with_capacity(clients);
    let mut global_hist = vec![0usize; classes];
    for (c, mut indices) in assigned.into_iter().enumerate() {
        indices.sort_unstable();
        let mut label_hist = vec![0usize; classes];
        for &i in &indices {
            label_hist[ds.label_of(i)] += 1;
            global_hist[ds.label_of(i)] += 1;
        }
        client_sets.push(ClientDataset {
            client_id: c,
            indices,
            label_hist,
        });
    }

    Ok(Partition {
        clients: client_sets,
        skew,
        global_hist,
    })
}
