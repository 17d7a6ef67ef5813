//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator (`rand_chacha::ChaCha8Rng`) keyed by
//! `seed_from_u64`. ChaCha is a counter-mode generator whose output is
//! specified bit for bit and does not depend on the platform, so simulation
//! tables reproduce across machines.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Name of the underlying generator, recorded in outputs.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9, seed_from_u64)";

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    /// Uniform on `[low, high)`.
    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal draw (ziggurat sampler from `rand_distr`).
    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_output() {
        // Pinned values; a change here means tables no longer reproduce.
        let mut r = RngStream::new(20240611);
        assert_eq!(r.next_u64(), 16795367646201727388);
        assert_eq!(r.next_u64(), 9483187956253255954);
        assert_eq!(r.next_u64(), 15089178223454422052);
        assert_eq!(r.uniform(), 0.754459454361714);
        assert_eq!(r.standard_normal(), 0.5533125208871998);
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = RngStream::new(7);
        let mut b = RngStream::new(7);
        for _ in 0..1000 {
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
        let mut c = RngStream::new(8);
        assert_ne!(RngStream::new(7).next_u64(), c.next_u64());
    }

    #[test]
    fn uniform_moments() {
        let mut r = RngStream::new(1);
        let n = 200_000;
        let mut s = 0.0;
        let mut s2 = 0.0;
        for _ in 0..n {
            let u = r.uniform_range(-3.0, 3.0);
            assert!((-3.0..3.0).contains(&u));
            s += u;
            s2 += u * u;
        }
        let mean = s / n as f64;
        assert!(mean.abs() < 0.02);
        assert!((s2 / n as f64 - 3.0).abs() < 0.05);
    }
}
