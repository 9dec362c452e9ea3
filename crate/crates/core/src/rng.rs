//! Reproducible per-replica random streams.
//!
//! A replica's generator is ChaCha8 keyed by `seed_from_u64(master_seed)`
//! with its stream id set to `replica_index`. ChaCha is counter based, so
//! every `(master_seed, replica_index)` pair addresses a disjoint keystream
//! and replicas can be evaluated in any order or on any thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type ReplicaRng = ChaCha8Rng;

pub const STREAM_SCHEME: &str = "chacha8: key = seed_from_u64(master_seed), stream = replica_index";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub replica_index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, replica_index: u64) -> Self {
        Self {
            master_seed,
            replica_index,
        }
    }

    pub fn rng(&self) -> ReplicaRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.replica_index);
        rng
    }
}

/// Derives an independent master seed for a sub-experiment (one start state,
/// one grid level, ...). SplitMix64 finalizer over `master ^ tag`.
pub fn fork(master_seed: u64, tag: u64) -> u64 {
    let mut z = master_seed
        ^ tag
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
