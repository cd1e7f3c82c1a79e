//! Seeded Gaussian noise.
//!
//! Algorithm: ChaCha20 (`rand_chacha::ChaCha20Rng::seed_from_u64`) feeds
//! uniform doubles `u = (x >> 11) * 2^-53` from successive `next_u64`
//! outputs; each pair `(u1, u2)` gives two normals by Box-Muller,
//! `sqrt(-2 ln(1 - u1)) * (cos, sin)(2 pi u2)`, cosine first.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone)]
pub struct GaussianNoise {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl GaussianNoise {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw.
    pub fn standard(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn sample(&mut self, std: f64) -> f64 {
        std * self.standard()
    }

    /// `n` draws with standard deviation `std`.
    pub fn sequence(&mut self, n: usize, std: f64) -> Vec<f64> {
        (0..n).map(|_| self.sample(std)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let a = GaussianNoise::new(7).sequence(100, 1.0);
        let b = GaussianNoise::new(7).sequence(100, 1.0);
        assert_eq!(a, b);
        assert_ne!(a, GaussianNoise::new(8).sequence(100, 1.0));
    }

    #[test]
    fn empirical_moments() {
        let sigma = 5e-3;
        let xs = GaussianNoise::new(1).sequence(100_000, sigma);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 5.0 * sigma / n.sqrt());
        assert!((std / sigma - 1.0).abs() < 0.02, "{std}");
    }
}
