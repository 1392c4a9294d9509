//! Seeded random streams.
//!
//! Every simulation stream is a [`ChaCha8Rng`] seeded from a 64-bit value.
//! Per-replication seeds are derived from a master seed by folding the cell
//! coordinates and the replication index through the SplitMix64 finalizer,
//! so a replication's stream depends only on `(master, cell, rep)` and never
//! on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold a sequence of words into a seed, starting from `master`.
pub fn derive_seed(master: u64, words: &[u64]) -> u64 {
    words
        .iter()
        .fold(mix64(master), |acc, &w| mix64(acc ^ mix64(w)))
}
