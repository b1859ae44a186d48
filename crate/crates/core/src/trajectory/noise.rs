//! Wiener increments from a counter-based generator.
//!
//! Trajectory `index` reads ChaCha8 stream `index` under key `base_seed`;
//! step `n` always occupies words `[4n, 4n + 4)` of that stream, which a
//! Box-Muller transform turns into one standard normal per channel. Any
//! `(base_seed, index, step, channel)` therefore maps to a fixed number,
//! independent of scheduling.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS_PER_STEP: u128 = 4;

/// Sequential reader of the standard normal pairs of one trajectory.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(base_seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
        rng.set_stream(index);
        NoiseStream { rng }
    }

    /// Positions the stream at the start of `step`.
    pub fn at(base_seed: u64, index: u64, step: u64) -> Self {
        let mut s = NoiseStream::new(base_seed, index);
        s.rng.set_word_pos(step as u128 * WORDS_PER_STEP);
        s
    }

    /// Standard normals `(z_1, z_2)` for the next step.
    pub fn next_pair(&mut self) -> [f64; 2] {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        // u1 in (0, 1], u2 in [0, 1)
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        [r * c, r * s]
    }
}

/// Standard normal for `(base_seed, index, step, channel)`, channel 0 or 1.
pub fn standard_normal(base_seed: u64, index: u64, step: u64, channel: usize) -> f64 {
    NoiseStream::at(base_seed, index, step).next_pair()[channel]
}
