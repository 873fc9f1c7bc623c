//! Deterministic, splittable random number generation.
//!
//! Every random object in the engine is drawn from a ChaCha20 stream keyed by
//! a single `u64` seed. Independent substreams are selected with an integer
//! tag, so the weights of one component never depend on how many draws
//! another component made.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Seed for a reproducible random pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RngSpec {
    pub seed: u64,
}

impl RngSpec {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

/// Tags used for the standard substreams of a model.
pub mod tags {
    pub const EMBEDDING: u64 = 1;
    pub const RESERVOIR: u64 = 2;
    pub const BIAS: u64 = 3;
    pub const GRU: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const INITIAL_CONDITION: u64 = 6;
    pub const POWER_ITERATION: u64 = 7;
    pub const DATASET: u64 = 8;
}

/// Single-owner deterministic generator.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha20Rng,
}

/// Returns the root generator for `spec` (substream 0).
pub fn seeded_rng(spec: RngSpec) -> SeededRng {
    SeededRng::with_stream(spec.seed, 0)
}

impl SeededRng {
    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    /// Independent generator for `tag`, derived from the same seed.
    ///
    /// The result does not depend on how many values were already drawn from
    /// `self`.
    pub fn substream(&self, tag: u64) -> SeededRng {
        Self::with_stream(self.seed, tag)
    }

    /// Nested substream, for per-chunk streams inside a component stream.
    pub fn child(&self, index: u64) -> SeededRng {
        let seed = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(self.inner.get_stream() as u64)
            .rotate_left(17);
        Self::with_stream(seed ^ 0xD1B5_4A32_D192_ED03, index.wrapping_add(1))
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw on `[lo, hi]`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn fill_uniform(&mut self, out: &mut [f64], lo: f64, hi: f64) {
        for v in out {
            *v = self.uniform_range(lo, hi);
        }
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }
}
