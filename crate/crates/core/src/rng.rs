//! Seeded randomness shared by every stochastic stage.
//!
//! All streams are ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded through
//! `seed_from_u64`. Uniform `f64` draws take the top 53 bits of a `u64`
//! output scaled by 2^-53 (the `rand` crate's standard float conversion).
//! Gaussian draws use the basic Box–Muller transform, one output per pair of
//! uniforms:
//!
//! ```text
//! u1, u2 <- uniform [0, 1)
//! z = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)
//! ```
//!
//! The sine branch is discarded so every Gaussian consumes exactly two
//! uniforms, which keeps streams easy to reproduce in another language.
//!
//! Sub-streams are keyed with [`derive_seed`], a SplitMix64 finalizer folded
//! over the key parts, so results never depend on scheduling order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a key path into an independent sub-seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(base), |h, &p| splitmix(h ^ p))
}

pub fn stage_rng(seed: u64) -> StageRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng) -> f64 {
    rng.random::<f64>()
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1 = uniform(rng);
    let u2 = uniform(rng);
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform integer in the closed range `[lo, hi]`.
pub fn uniform_int(rng: &mut impl Rng, lo: i64, hi: i64) -> i64 {
    rng.random_range(lo..=hi)
}
