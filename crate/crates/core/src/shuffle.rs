//! Seeded permutations with a fully specified algorithm.
//!
//! The generator is ChaCha20 keyed with the 64-bit seed in little-endian
//! order followed by 24 zero bytes. Bounded integers use rejection sampling
//! on whole 64-bit outputs (`x >= 2^64 mod n`, then `x mod n`), and the
//! shuffle is a descending Fisher–Yates. Any implementation of those three
//! pieces reproduces the same order.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

/// Version tag recorded in dataset manifests.
pub const SHUFFLE_ALGORITHM: &str = "chacha20-le64seed/fisher-yates-desc/v1";

pub struct SeededRng {
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        SeededRng {
            inner: ChaCha20Rng::from_seed(key),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % n;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_order() {
        let mut a: Vec<u32> = (0..100).collect();
        let mut b = a.clone();
        SeededRng::new(7).shuffle(&mut a);
        SeededRng::new(7).shuffle(&mut b);
        assert_eq!(a, b);
        let mut c: Vec<u32> = (0..100).collect();
        SeededRng::new(8).shuffle(&mut c);
        assert_ne!(a, c);
        c.sort();
        assert_eq!(c, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = SeededRng::new(1);
        for n in 1..50 {
            assert!(rng.below(n) < n);
        }
    }

    #[test]
    fn keystream_is_pinned() {
        // guards against silent changes in the generator or seeding scheme
        let mut rng = SeededRng::new(0);
        let first = rng.next_u64();
        let mut again = SeededRng::new(0);
        assert_eq!(first, again.next_u64());
        // ChaCha20 block 0 with an all-zero key starts 76 b8 e0 ad a0 f1 3d 90
        assert_eq!(first, u64::from_le_bytes([0x76, 0xb8, 0xe0, 0xad, 0xa0, 0xf1, 0x3d, 0x90]));
    }
}
