//! Seeded smooth test functions: sums of Gaussian bumps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number of bumps in a random test function.
pub const BUMPS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Bump {
    pub center: Vec<f64>,
    /// Per-coordinate width.
    pub width: Vec<f64>,
    pub amplitude: f64,
}

/// `Σ_k a_k exp(−Σ_i ((z_i − c_{k,i}) / w_{k,i})²)` on `ℝ^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSum {
    pub bumps: Vec<Bump>,
}

impl GaussianSum {
    /// [`BUMPS`] bumps with centres uniform in the box `[lo, hi]`, widths
    /// uniform in `[w_lo, w_hi]` per coordinate and random signs.
    pub fn random(seed: u64, lo: &[f64], hi: &[f64], w_lo: &[f64], w_hi: &[f64]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bumps = (0..BUMPS)
            .map(|_| {
                let center = lo.iter().zip(hi).map(|(&a, &b)| rng.gen_range(a..=b)).collect();
                let width = w_lo.iter().zip(w_hi).map(|(&a, &b)| rng.gen_range(a..=b)).collect();
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                Bump { center, width, amplitude: sign * rng.gen_range(0.5..=1.0) }
            })
            .collect();
        Self { bumps }
    }

    pub fn single(center: Vec<f64>, width: Vec<f64>) -> Self {
        Self { bumps: vec![Bump { center, width, amplitude: 1.0 }] }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.bumps
            .iter()
            .map(|b| {
                let e: f64 = z.iter().zip(&b.center).zip(&b.width).map(|((x, c), w)| ((x - c) / w).powi(2)).sum();
                b.amplitude * (-e).exp()
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_reproducible() {
        let a = GaussianSum::random(7, &[0.0, 0.0], &[1.0, 1.0], &[0.1, 0.1], &[0.3, 0.3]);
        let b = GaussianSum::random(7, &[0.0, 0.0], &[1.0, 1.0], &[0.1, 0.1], &[0.3, 0.3]);
        let c = GaussianSum::random(8, &[0.0, 0.0], &[1.0, 1.0], &[0.1, 0.1], &[0.3, 0.3]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.bumps.len(), BUMPS);
        assert!(a.bumps.iter().all(|b| b.center.iter().all(|&x| (0.0..=1.0).contains(&x))));
    }

    #[test]
    fn single_bump_peak() {
        let g = GaussianSum::single(vec![0.5], vec![0.2]);
        assert_eq!(g.eval(&[0.5]), 1.0);
        assert!((g.eval(&[0.7]) - (-1.0f64).exp()).abs() < 1e-15);
    }
}
