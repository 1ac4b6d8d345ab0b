//! Portable seeded randomness.
//!
//! Every random draw in the crate goes through [`PortableRng`], whose
//! behaviour is fully specified so other implementations can reproduce it:
//!
//! * generator: xoshiro256** (Blackman & Vigna);
//! * seeding: the 256-bit state is four consecutive SplitMix64 outputs
//!   starting from the `u64` seed;
//! * `uniform()`: `(next_u64() >> 11) · 2⁻⁵³`, in `[0, 1)`;
//! * `below(n)`: rejection sampling on `next_u64()` against the largest
//!   multiple of `n`, then `value % n`;
//! * `normal()`: Box–Muller, `sqrt(-2 ln(1 - u1)) · cos(2π u2)`, one
//!   output per pair of uniforms (the sine branch is discarded);
//! * `shuffle`: Fisher–Yates from the last index down, `j = below(i + 1)`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Clone, Debug)]
pub struct PortableRng(Xoshiro256StarStar);

impl PortableRng {
    pub fn seed_from_u64(seed: u64) -> Self {
        PortableRng(Xoshiro256StarStar::seed_from_u64(seed))
    }

    /// Independent stream derived from this seed and a label.
    pub fn derived(seed: u64, stream: u64) -> Self {
        // Mixes the stream id through one SplitMix64 round.
        let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        PortableRng::seed_from_u64(z ^ (z >> 31))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
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

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} of {n} without replacement");
        // Partial Fisher–Yates from the front.
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
