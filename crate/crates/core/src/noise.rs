//! Reproducible randomness.
//!
//! Every random draw in the toolkit comes from a [`NoiseSource`]: a ChaCha8
//! keystream addressed by `(seed, stream)`. The generator is counter based, so
//! independent modules can take disjoint streams from one seed without
//! interfering with each other's sequences.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Well-known stream ids so each pipeline stage draws from its own sequence.
pub mod streams {
    pub const TOY_WORLD: u64 = 1;
    pub const SQF_INIT: u64 = 2;
    pub const SQF_TRAIN: u64 = 3;
    pub const HISTOGRAM: u64 = 4;
    pub const MODEL_INIT: u64 = 5;
    pub const PRETRAIN: u64 = 6;
    pub const FINETUNE_SAMPLING: u64 = 7;
    pub const FINETUNE_NOISE: u64 = 8;
    pub const SYNTH: u64 = 9;
    pub const EVAL: u64 = 10;
}

/// Single-consumer Gaussian/uniform source. Not `Sync` by intent: one stream
/// must not be shared across threads.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh source on another stream of the same seed.
    pub fn fork(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }

    /// One draw from N(0, 1).
    pub fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn gaussian_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.gaussian()).collect()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform integer in `[low, high]` inclusive.
    pub fn uniform_int(&mut self, low: usize, high: usize) -> usize {
        self.rng.gen_range(low..=high)
    }

    /// Independent inclusion of each of `n` indices with probability `q`.
    pub fn poisson_subsample(&mut self, n: usize, q: f64) -> Vec<usize> {
        (0..n).filter(|_| self.uniform() < q).collect()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }
}
