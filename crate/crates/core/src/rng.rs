//! Seeded randomness.
//!
//! Every stochastic step draws from ChaCha8 (`rand_chacha::ChaCha8Rng`)
//! seeded with `seed_from_u64`. Uniform indices are `next_u64() % len`;
//! the modulo bias is below 2^-40 for any realistic `len`, and the rule is
//! trivial to reproduce in another language.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform index in `0..len`. `len` must be nonzero.
pub fn index(rng: &mut Rng, len: usize) -> usize {
    debug_assert!(len > 0);
    (rng.next_u64() % len as u64) as usize
}

/// Uniform real in `[0, 1)` with 53 bits of precision.
pub fn unit(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
