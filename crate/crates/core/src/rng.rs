//! Seeded random streams.
//!
//! Every chain draws from its own ChaCha8 substream, addressed by
//! `(seed, stream)`. Standard normals use the ziggurat transform of
//! `rand_distr::StandardNormal`, which is a fixed table-driven algorithm and
//! therefore bit-stable across platforms.

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stream identifiers reserved for the phases of a pipeline run.
pub mod streams {
    pub const LEARN: u64 = 0;
    pub const SAMPLE: u64 = 1;
    pub const MONTE_CARLO: u64 = 2;
    /// Repetition `r` of an experiment uses streams starting at `REPETITION_BASE + 4 r`.
    pub const REPETITION_BASE: u64 = 1 << 32;
}

#[derive(Debug, Clone)]
pub struct StreamRng {
    inner: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl StreamRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner, seed, stream }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent substream of the same seed.
    pub fn substream(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }

    /// Streams for repetition `rep` of an experiment, offset by `phase` (< 4).
    pub fn repetition(seed: u64, rep: u64, phase: u64) -> Self {
        Self::new(seed, streams::REPETITION_BASE + 4 * rep + phase)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Vector of `d` independent standard normals.
    pub fn normal_vec(&mut self, d: usize) -> DVector<f64> {
        DVector::from_iterator(d, (0..d).map(|_| self.normal()))
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}
