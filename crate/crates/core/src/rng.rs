//! Seed derivation. Every random stream in a run is a ChaCha8 generator
//! seeded from the run seed plus a tag path, so streams are independent of
//! one another and of the order in which they are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `tags` into `base`, one splitmix round per tag.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_for(base: u64, tags: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

/// Stream tags used across the crate.
pub mod tag {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const PRETRAIN: u64 = 4;
    pub const MORPH: u64 = 5;
    pub const TRAIN_STREAM: u64 = 6;
    pub const VAL_STREAM: u64 = 7;
    pub const MUTATION: u64 = 8;
    pub const FINAL: u64 = 9;
    pub const PROBE: u64 = 10;
    pub const BENCH: u64 = 11;
}
