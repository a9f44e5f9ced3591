//! Seeded pseudo-random streams.
//!
//! Every random decision in the crate (split shuffles, parameter
//! initialization, sampling) goes through [`Prng`], a thin wrapper around
//! xoshiro256++ seeded with SplitMix64. Bounded integers, shuffles and unit
//! floats are derived here rather than through `rand` distribution helpers so
//! that the exact value sequence is frozen with this crate and does not move
//! when dependencies are upgraded.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Name recorded in output files that depend on the generator.
pub const PRNG_NAME: &str = "xoshiro256++/splitmix64";

#[derive(Debug, Clone)]
pub struct Prng {
    inner: Xoshiro256PlusPlus,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Independent stream for a named purpose, so that e.g. the sampler and
    /// the initializer never share draws.
    pub fn stream(seed: u64, purpose: &str) -> Self {
        Self::new(seed ^ crate::embeddings::fnv1a64(purpose.as_bytes()))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..n` by rejection on the largest multiple of `n`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        // 2^64 mod n; accept draws below 2^64 - rem.
        let rem = (u64::MAX % n + 1) % n;
        let zone = 0u64.wrapping_sub(rem);
        loop {
            let x = self.next_u64();
            if rem == 0 || x < zone {
                return x % n;
            }
        }
    }

    /// Uniform float in `[0, 1)` with 53 bits of precision.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Fisher-Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
