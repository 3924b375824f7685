//! Seeded, stream-addressable randomness.
//!
//! Every consumer of randomness in the harness gets its own `(seed, stream)`
//! pair, so a rollout draws the same numbers whether it runs on the control
//! thread or on a worker.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// ChaCha8 generator keyed by a 64-bit seed and a 64-bit stream id.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Stream ids used by the harness. Rollout streams are keyed by iteration and
/// rollout index so parallel and serial schedules coincide.
pub mod streams {
    pub const MIXTURE: u64 = 1;
    pub const GP: u64 = 2;
    pub const EMBED: u64 = 3;

    pub fn mixture(iter: usize) -> u64 {
        (MIXTURE << 56) | iter as u64
    }

    pub fn gp(iter: usize) -> u64 {
        (GP << 56) | iter as u64
    }

    pub fn rollout(iter: usize, index: usize) -> u64 {
        (1u64 << 62) | ((iter as u64) << 32) | index as u64
    }

    /// Streams for evaluation replays, disjoint from training rollouts.
    pub fn eval(index: usize) -> u64 {
        (3u64 << 62) | index as u64
    }
}
