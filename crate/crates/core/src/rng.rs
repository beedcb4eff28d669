//! Seeded random streams.
//!
//! Every random draw in the toolkit comes from a [`SeedStream`], a ChaCha8
//! generator (`rand_chacha::ChaCha8Rng`) seeded via `seed_from_u64`. ChaCha8
//! output is specified bit-for-bit and does not depend on the platform, so a
//! given seed reproduces the same stream everywhere.
//!
//! Independent per-item streams (one per augmentation pair, one per sweep
//! point) use `seed XOR splitmix64(index)`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SeedStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for item `index` of a batch seeded with `seed`.
    pub fn derived(seed: u64, index: u64) -> Self {
        Self::new(derive_seed(seed, index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer in [0, n). `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

impl RngCore for SeedStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, index: u64) -> u64 {
    seed ^ splitmix64(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeedStream::new(42);
        let mut b = SeedStream::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn stream_is_pinned() {
        // Frozen first outputs; a change here breaks reproducibility of
        // every stored schedule and plan.
        let mut s = SeedStream::new(0);
        let first: Vec<u64> = (0..3).map(|_| s.next_u64()).collect();
        assert_eq!(
            first,
            [
                0xB585_F767_A79A_3B6C,
                0x7746_A55F_BAD8_C037,
                0xB2FB_0D32_81E2_A6E6
            ]
        );
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn derived_streams_differ() {
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        let mut a = SeedStream::derived(7, 0);
        let mut b = SeedStream::derived(7, 1);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn uniform_range() {
        let mut s = SeedStream::new(3);
        for _ in 0..10_000 {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
