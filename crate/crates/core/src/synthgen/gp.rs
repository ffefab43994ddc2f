//! Zero-mean Gaussian-process samples on the fine grid.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::series::FineGridFunction;
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    Rbf { lengthscale: f64 },
    Periodic { lengthscale: f64, period: f64 },
}

impl Kernel {
    pub fn eval(&self, s: f64, t: f64) -> f64 {
        match *self {
            Kernel::Rbf { lengthscale } => {
                let d = s - t;
                (-d * d / (2.0 * lengthscale * lengthscale)).exp()
            }
            Kernel::Periodic { lengthscale, period } => {
                let arg = std::f64::consts::PI * (s - t).abs() / period;
                (-2.0 * arg.sin().powi(2) / (lengthscale * lengthscale)).exp()
            }
        }
    }
}

/// Lengthscale prior for RBF kernels: an even mixture of Beta(2, 10) and
/// Beta(2, 5), favouring fast-varying functions half of the time.
pub fn sample_rbf_lengthscale(rng: &mut impl Rng) -> f64 {
    let (a, b) = if rng.gen::<bool>() { (2.0, 10.0) } else { (2.0, 5.0) };
    Beta::new(a, b).expect("valid beta").sample(rng)
}

/// Hyperparameter priors for Periodic kernels: lengthscale U(0.75, 1),
/// period U(0.3, 0.5).
pub fn sample_periodic_hypers(rng: &mut impl Rng) -> (f64, f64) {
    let lengthscale = rng.gen_range(0.75..1.0);
    let period = rng.gen_range(0.3..0.5);
    (lengthscale, period)
}

/// Dense kernel Gram matrix over the given abscissae (row-major `n x n`).
pub fn gram(kernel: &Kernel, times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(times[i], times[j]);
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    g
}

/// In-place lower Cholesky factor; `None` when the matrix is not positive
/// definite.
fn cholesky(a: &mut [f64], n: usize) -> bool {
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return false;
                }
                a[i * n + i] = sum.sqrt();
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
        for j in (i + 1)..n {
            a[i * n + j] = 0.0;
        }
    }
    true
}

/// Cholesky factor of `gram + jitter * I`, escalating the jitter from 1e-6
/// to 1e-2 of the mean diagonal before giving up.
pub fn cholesky_with_jitter(gram: &[f64], n: usize, lengthscale: f64) -> Result<Vec<f64>> {
    let mean_diag: f64 = (0..n).map(|i| gram[i * n + i]).sum::<f64>() / n as f64;
    let mut jitter = 1e-6 * mean_diag;
    let max_jitter = 1e-2 * mean_diag;
    loop {
        let mut a = gram.to_vec();
        for i in 0..n {
            a[i * n + i] += jitter;
        }
        if cholesky(&mut a, n) {
            return Ok(a);
        }
        jitter *= 10.0;
        if jitter > max_jitter * (1.0 + 1e-12) {
            return Err(Error::Cholesky { lengthscale });
        }
    }
}

/// One zero-mean GP sample on the regular fine grid.
pub fn sample<F: Real>(
    kernel: &Kernel,
    grid_len: usize,
    rng: &mut impl Rng,
) -> Result<FineGridFunction<F>> {
    let dt = 1.0 / (grid_len - 1) as f64;
    let times: Vec<f64> = (0..grid_len).map(|i| i as f64 * dt).collect();
    let g = gram(kernel, &times);
    let lengthscale = match kernel {
        Kernel::Rbf { lengthscale } => *lengthscale,
        Kernel::Periodic { lengthscale, .. } => *lengthscale,
    };
    let l = cholesky_with_jitter(&g, grid_len, lengthscale)?;
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let z: Vec<f64> = (0..grid_len).map(|_| normal.sample(rng)).collect();
    let values = (0..grid_len)
        .map(|i| {
            let mut acc = 0.0;
            for (k, &zk) in z.iter().enumerate().take(i + 1) {
                acc += l[i * grid_len + k] * zk;
            }
            F::of(acc)
        })
        .collect();
    Ok(FineGridFunction::new(values))
}
