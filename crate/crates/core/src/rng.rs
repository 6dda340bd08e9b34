//! Counter-based Gaussian streams.
//!
//! Every trajectory draws from its own ChaCha8 stream selected by
//! `(seed, stream_id)`, so results do not depend on how trajectories are
//! scheduled across workers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Address of an independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub const fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn gaussian(&self) -> GaussianSource {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        GaussianSource { rng }
    }
}

/// Standard normal draws from one stream.
#[derive(Debug, Clone)]
pub struct GaussianSource {
    rng: ChaCha8Rng,
}

impl GaussianSource {
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Fills `out` with N(0, scale²) draws.
    #[inline]
    pub fn fill_scaled(&mut self, scale: f64, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = scale * self.standard_normal();
        }
    }
}
