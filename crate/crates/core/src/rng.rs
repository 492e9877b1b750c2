//! Seeded randomness.
//!
//! Every stochastic step in the crate draws from [`SeededRng`], which is
//! ChaCha8 (a 64-bit-seeded, counter-based stream generator). Its output
//! stream is fixed by the algorithm, so a seed produces the same draws on
//! every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream from a base seed and a tag.
pub fn derived(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
