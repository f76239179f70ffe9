//! Seeded random streams.
//!
//! Every parameter draws from its own SplitMix64 stream keyed by the run
//! seed and the parameter id, so initial weights do not depend on the order
//! in which layers are constructed.

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

pub use rand::seq::SliceRandom;
pub use rand::Rng;

pub type StreamRng = SplitMix64;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Derives an independent stream from `seed` and a numeric key.
pub fn stream(seed: u64, key: u64) -> StreamRng {
    let mut mixer = SplitMix64::seed_from_u64(seed ^ key.wrapping_mul(GOLDEN));
    SplitMix64::seed_from_u64(rand::RngCore::next_u64(&mut mixer))
}

/// Standard normal sample.
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    use rand_distr::Distribution;
    rand_distr::StandardNormal.sample(rng)
}
