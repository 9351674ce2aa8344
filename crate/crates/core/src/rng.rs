//! Seedable, splittable random streams.
//!
//! The core generator is ChaCha8 (`rand_chacha`), seeded through
//! `SeedableRng::seed_from_u64`. Both are value-stable across platforms.
//! Sub-streams are derived with [`RngState::derive`], which depends only on
//! the parent seed and a stream label, never on how much of the parent
//! stream has been consumed. Normal deviates use the Box–Muller transform,
//! consuming two uniforms per pair and caching the second deviate.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer, used to mix seeds and stream labels.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A single-owner random stream.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child seed for stream `stream`: `splitmix64(seed ^ splitmix64(stream))`.
    pub fn derive_seed(seed: u64, stream: u64) -> u64 {
        splitmix64(seed ^ splitmix64(stream))
    }

    /// Independent sub-stream labelled `stream`.
    pub fn derive(&self, stream: u64) -> RngState {
        RngState::new(Self::derive_seed(self.seed, stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Standard normal deviate (Box–Muller).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fisher–Yates shuffle, walking from the last element down.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// A uniformly random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // First eight raw draws for seed 42. Frozen: any change to the
    // generator or seeding breaks every golden value downstream.
    const GOLDEN_SEED_42: [u64; 8] = [
        0xae90_bfb5_395d_5ba1,
        0xf345_3fc6_2579_9188,
        0x6d71_b708_c5b6_538c,
        0xa09a_b2f9_5816_6752,
        0x49e1_49d8_bcb6_42b0,
        0x2663_b45b_a45d_829e,
        0x4edb_bf01_5087_1314,
        0xcdca_9b0d_2a12_2884,
    ];

    #[test]
    fn golden_stream_seed_42() {
        let mut rng = RngState::new(42);
        let draws: Vec<u64> = (0..8).map(|_| rng.next_u64()).collect();
        assert_eq!(draws, GOLDEN_SEED_42, "got {draws:#018x?}");
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = RngState::new(7);
        let mut b = RngState::new(7);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn derive_ignores_consumption() {
        let a = RngState::new(11);
        let mut b = RngState::new(11);
        b.uniform();
        assert_eq!(a.derive(3).next_u64(), b.derive(3).next_u64());
        assert_ne!(a.derive(3).next_u64(), a.derive(4).next_u64());
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut rng = RngState::new(1);
        let mut p = rng.permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = RngState::new(5);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
