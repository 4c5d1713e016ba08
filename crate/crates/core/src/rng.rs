//! Keyed, reproducible random streams.
//!
//! A stream is identified by `(master_seed, key)`. The key is hashed (FNV-1a)
//! and mixed with the seed through SplitMix64 before seeding a
//! xoshiro256++ generator, so identical pairs replay identically on every
//! platform and distinct keys give unrelated sequences.

use alloc::format;
use alloc::string::String;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    key: String,
    inner: Xoshiro256PlusPlus,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the stream for `(master_seed, stream_key)`.
pub fn derive_rng(master_seed: u64, stream_key: &str) -> RngStream {
    RngStream::derive(master_seed, stream_key)
}

impl RngStream {
    pub fn derive(master_seed: u64, stream_key: &str) -> Self {
        let state = splitmix64(master_seed ^ splitmix64(fnv1a(stream_key.as_bytes())));
        Self {
            master_seed,
            key: String::from(stream_key),
            inner: Xoshiro256PlusPlus::seed_from_u64(state),
        }
    }

    /// Child stream keyed `<parent key>/<suffix>`; does not consume parent state.
    pub fn child(&self, suffix: &str) -> Self {
        Self::derive(self.master_seed, &format!("{}/{}", self.key, suffix))
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi]`; returns `lo` when the interval is empty.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
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
