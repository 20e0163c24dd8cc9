//! Seeded pseudo-random streams.
//!
//! Every random draw in the toolkit goes through [`Rng`], a xoshiro256**
//! generator whose state is expanded from a 64-bit seed with SplitMix64.
//! Child streams are derived from a parent seed and a textual tag, so one
//! global seed reproduces every stage of an experiment.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256StarStar};

/// FNV-1a over the tag bytes; used only to turn stage names into stream tags.
fn tag_hash(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Derives a child seed from `parent` and a stage tag.
pub fn derive_seed(parent: u64, tag: &str) -> u64 {
    let mut mix = SplitMix64::seed_from_u64(parent ^ tag_hash(tag));
    mix.next_u64()
}

/// Derives a child seed from `parent`, a tag and an item index.
pub fn derive_indexed(parent: u64, tag: &str, index: u64) -> u64 {
    let mut mix = SplitMix64::seed_from_u64(derive_seed(parent, tag));
    let base = mix.next_u64();
    let mut mix = SplitMix64::seed_from_u64(base ^ index);
    mix.next_u64()
}

#[derive(Clone, Debug)]
pub struct Rng {
    inner: Xoshiro256StarStar,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn derive(seed: u64, tag: &str) -> Self {
        Self::new(derive_seed(seed, tag))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via the cosine branch of Box-Muller (two uniforms per draw).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `[0, n)` by rejection, `n > 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
