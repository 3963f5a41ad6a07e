//! Seed derivation. Every random draw in the crate comes from a `ChaCha8Rng`
//! seeded through [`derive_seed`], so runs are reproducible across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `stream` of `parent`.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    mix64(parent ^ mix64(stream.wrapping_add(0x632B_E59B_D9B4_E019)))
}

pub fn rng_for(parent: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parent, stream))
}

/// Stream identifiers, so unrelated consumers of one seed never collide.
pub mod streams {
    pub const CLASS_SIGNATURE: u64 = 1;
    pub const SAMPLES: u64 = 2;
    pub const DRIFT_LOADINGS: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const AUGMENT: u64 = 6;
    pub const FOREST: u64 = 7;
    pub const MEMORY: u64 = 8;
    pub const DATA_TRAIN: u64 = 9;
    pub const DATA_TEST: u64 = 10;
    pub const HEAD: u64 = 11;
}
