//! Seeded random streams.
//!
//! A run has one seed. Each phase draws from its own ChaCha stream of
//! that seed, so changing how much randomness one phase consumes never
//! shifts another phase.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Init = 1,
    Negatives = 2,
    Dropout = 3,
    Sampling = 4,
    Split = 5,
    Fixture = 6,
}

pub fn phase_rng(seed: u64, phase: Phase) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(phase as u64);
    rng
}

/// A stream for item `index` within a phase (e.g. one query graph).
pub fn item_rng(seed: u64, phase: Phase, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(phase as u64);
    rng
}
