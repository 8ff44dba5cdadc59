//! Seeded random streams.
//!
//! Every stochastic component draws from its own ChaCha8 stream so that a
//! single replication seed determines a run regardless of evaluation order or
//! thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Stream tags; distinct tags give statistically independent streams.
pub mod tag {
    pub const BEHAVIOR: u64 = 1;
    pub const ENV: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const INIT: u64 = 4;
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a sequence of tags.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix(seed), |acc, &t| mix(acc ^ mix(t)))
}

/// A generator for the given seed.
pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// A generator for a tagged child stream of `seed`.
pub fn stream(seed: u64, tags: &[u64]) -> SimRng {
    seeded(derive_seed(seed, tags))
}
