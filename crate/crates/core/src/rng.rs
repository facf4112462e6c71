//! Seeded pseudo-random numbers shared by every stochastic step.
//!
//! The generator is Marsaglia's xorshift128 (`rand_xorshift::XorShiftRng`),
//! seeded from a `u64` through `rand_core`'s `seed_from_u64` (a PCG32 stream
//! fills the 16 seed bytes). Derived quantities are defined so another
//! implementation can reproduce them exactly:
//!
//! * `next_f64`: `(next_u64() >> 11) * 2^-53`, uniform on `[0, 1)`.
//! * `below(n)`: `(next_u64() as u128 * n) >> 64` (multiply-high, no rejection).
//! * `shuffle`: Fisher-Yates from the last index down, `j = below(i + 1)`.
//! * `derive_seed(seed, stream)`: SplitMix64 finalizer applied to
//!   `seed + stream * 0x9E3779B97F4A7C15` (wrapping).
//!
//! Test vectors (seed 42): `next_u64` yields `0x2cf3213dcfbf6560`,
//! `0xf553e12bed54aaa1`, `0x74bc254ec1f30e84` for its first three draws.

use rand_core::{RngCore, SeedableRng};
use rand_xorshift::XorShiftRng;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: XorShiftRng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: XorShiftRng::seed_from_u64(seed),
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Integer in `0..n`. `n` must be non-zero.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Independent sub-seed for a numbered stream of a parent seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
