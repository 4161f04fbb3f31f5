//! Seed derivation.
//!
//! All randomness descends from one master seed. Independent streams are
//! addressed by a path of integers (repetition, training size, sample index,
//! ...) so that work items draw the same numbers regardless of the order or
//! thread they run on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream tags so that sibling streams under the same path never collide.
pub mod tag {
    pub const SPLIT: u64 = 1;
    pub const APP: u64 = 2;
    pub const GRID: u64 = 3;
    pub const FOLDS: u64 = 4;
    pub const SYNTH: u64 = 5;
    pub const COMMENTS: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `path` into `seed`, producing a well-mixed 64-bit child seed.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64, path: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive(seed, path))
}
