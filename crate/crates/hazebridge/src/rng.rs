//! Seeded, stream-addressable random number generation.
//!
//! Every source of randomness in the toolkit is an [`RngStream`] identified by
//! a `(seed, stream_id)` pair. The same pair with the same call sequence
//! always reproduces the same values, and distinct stream ids give
//! statistically independent sequences, so deterministic runs can hand out
//! independent generators per purpose (or per item) without coordination.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A deterministic random stream addressed by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    /// Derive a fresh stream for a sub-purpose. The child id mixes the parent
    /// stream id so per-item streams from different parents never collide.
    pub fn derive(&self, child: u64) -> Self {
        let mixed = self
            .stream_id
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(child)
            .wrapping_add(1);
        Self::new(self.seed, mixed)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// One standard normal draw.
    pub fn normal<E>(&mut self) -> E
    where
        StandardNormal: Distribution<E>,
    {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform draw from `[0, 1)`.
    pub fn uniform_f64(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform integer in `[lo, hi]` (inclusive).
    pub fn uniform_usize(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.gen_range(lo..=hi)
    }

    /// Uniform real in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }
}
