//! Deterministic seed derivation.
//!
//! Every random stream in the toolkit is derived from an explicit master seed,
//! a stream label, and an index, so that experiments reproduce byte-for-byte
//! regardless of worker scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels keep independent purposes from colliding even when they share
/// a master seed and index.
pub mod stream {
    pub const PLAINTEXT: u64 = 0x706c_7478; // "pltx"
    pub const MEASUREMENT: u64 = 0x6d65_6173; // "meas"
    pub const INJECTED: u64 = 0x6e6f_6973; // "nois"
    pub const SHUFFLE: u64 = 0x7368_7566; // "shuf"
}

/// SplitMix64 finalizer; good avalanche, cheap, stable across platforms.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-item seed for `index` within the labelled stream of `master`.
pub fn derive(master: u64, label: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(label ^ index.rotate_left(17)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-item RNG in one call.
pub fn derived_rng(master: u64, label: u64, index: u64) -> ChaCha8Rng {
    rng(derive(master, label, index))
}
