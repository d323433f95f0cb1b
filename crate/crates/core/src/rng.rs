//! Deterministic RNG stream derivation.
//!
//! Every random draw in an experiment comes from a stream derived from
//! (experiment seed, round, purpose), so concurrent execution and replay
//! always produce the same results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for. Each purpose gets an independent
/// stream even at the same (seed, round).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    SynthData,
    Partition,
    InitParams,
    Selection,
    Shuffle,
    Kmeans,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::SynthData => 0x01,
            Purpose::Partition => 0x02,
            Purpose::InitParams => 0x03,
            Purpose::Selection => 0x04,
            Purpose::Shuffle => 0x05,
            Purpose::Kmeans => 0x06,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent ChaCha stream for (seed, round, purpose).
/// Initialization-time streams pass round = 0.
pub fn derive_rng(seed: u64, round: usize, purpose: Purpose) -> ChaCha8Rng {
    let mut state = seed
        .wrapping_mul(0x5851_f42d_4c95_7f2d)
        .wrapping_add((round as u64) << 8)
        .wrapping_add(purpose.tag());
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn same_lineage_same_stream() {
        let mut a = derive_rng(42, 7, Purpose::Selection);
        let mut b = derive_rng(42, 7, Purpose::Selection);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn purposes_are_independent() {
        let mut a = derive_rng(42, 7, Purpose::Selection);
        let mut b = derive_rng(42, 7, Purpose::Partition);
        let draws_a: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let draws_b: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        assert_ne!(draws_a, draws_b);
    }

    #[test]
    fn rounds_are_independent() {
        let mut a = derive_rng(42, 1, Purpose::Selection);
        let mut b = derive_rng(42, 2, Purpose::Selection);
        assert_ne!(a.next_u64(), b.next_u64());
    }
}
