//! Seeded, platform-independent random streams and Gaussian sampling.
//!
//! The stream is xoshiro256** seeded through SplitMix64. Each Gaussian sample
//! consumes exactly two `u64` draws (Box–Muller, cosine branch only), so a
//! `rows x cols` matrix consumes `2 * rows * cols` draws.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use super::matrix::Matrix;

/// Label recorded in reports next to every seed.
pub const RNG_ALGORITHM: &str = "xoshiro256**/splitmix64-seeded/box-muller-cos";

/// Number of raw `u64` draws consumed per Gaussian sample.
pub const DRAWS_PER_GAUSSIAN: usize = 2;

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: Xoshiro256StarStar,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Xoshiro256StarStar::seed_from_u64(seed),
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

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal sample.
    pub fn next_gaussian(&mut self) -> f64 {
        // 1 - u lies in (0, 1], keeping ln finite.
        let u1 = 1.0 - self.next_uniform();
        let u2 = self.next_uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Independent child stream; consumes one draw from `self`.
    pub fn fork(&mut self) -> SeededRng {
        SeededRng::new(self.next_u64())
    }
}

/// `rows x cols` matrix of i.i.d. `N(0, 1)` entries times `scale`, filled in
/// row-major order.
///
/// # Panics
/// Panics when `scale` is not strictly positive and finite, or when a
/// dimension is zero.
pub fn random_matrix(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> Matrix {
    assert!(scale > 0.0 && scale.is_finite(), "scale must be positive and finite");
    let data: Vec<f64> = (0..rows * cols).map(|_| scale * rng.next_gaussian()).collect();
    Matrix::new(rows, cols, data).expect("gaussian samples are finite")
}
