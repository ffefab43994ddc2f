//! Per-trajectory observation noise.

use crate::scalar::Real;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Draw one noise level `sigma = |N(0, lambda)|` (folded Gaussian with
/// standard deviation `lambda`) and add `N(0, sigma)` noise to every
/// observation.
pub fn apply<F: Real>(x_at_obs: &[F], lambda: f64, rng: &mut impl Rng) -> (Vec<F>, F) {
    debug_assert!(lambda >= 0.0);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let sigma = (std_normal.sample(rng) * lambda).abs();
    let y = x_at_obs
        .iter()
        .map(|&x| x + F::of(std_normal.sample(rng) * sigma))
        .collect();
    (y, F::of(sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_lambda_is_noise_free() {
        let x = vec![1.0f64, -2.0, 3.5];
        let mut r = rng::derive(1, &[0]);
        let (y, sigma) = apply(&x, 0.0, &mut r);
        assert_eq!(sigma, 0.0);
        assert_eq!(y, x);
    }

    #[test]
    fn folded_mean_matches_closed_form() {
        // E|N(0, lambda)| = lambda * sqrt(2/pi)
        let lambda = 0.1;
        let mut r = rng::derive(2, &[0]);
        let draws = 100_000;
        let mut acc = 0.0f64;
        for _ in 0..draws {
            let (_, s) = apply::<f64>(&[0.0], lambda, &mut r);
            acc += s;
        }
        let expected = lambda * (2.0 / std::f64::consts::PI).sqrt();
        let mean = acc / draws as f64;
        assert!(
            (mean - expected).abs() / expected < 0.01,
            "mean {mean} vs {expected}"
        );
    }

    #[test]
    fn standardized_residuals_have_unit_moments() {
        let mut r = rng::derive(3, &[0]);
        let x = vec![0.5f64; 100];
        let mut zs: Vec<f64> = Vec::new();
        while zs.len() < 100_000 {
            let (y, sigma) = apply(&x, 0.2, &mut r);
            if sigma == 0.0 {
                continue;
            }
            zs.extend(y.iter().zip(&x).map(|(&yi, &xi)| (yi - xi) / sigma));
        }
        let n = zs.len() as f64;
        let mean = zs.iter().sum::<f64>() / n;
        let var = zs.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
