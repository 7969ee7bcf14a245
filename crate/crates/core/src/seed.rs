//! Seed mixing shared by every stochastic component.
//!
//! All randomness in the crate flows from `u64` seeds through [`ChaCha8Rng`],
//! whose output stream is platform independent. Child seeds are derived with
//! the SplitMix64 finalizer so that nearby integers (sample ids, epochs,
//! restart indices) map to unrelated streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer (Steele, Lea & Flood). A bijection on `u64`.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `words` into `base` one at a time: `h = splitmix64(h ^ splitmix64(w))`.
pub fn mix(base: u64, words: &[u64]) -> u64 {
    words
        .iter()
        .fold(splitmix64(base), |h, &w| splitmix64(h ^ splitmix64(w)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
