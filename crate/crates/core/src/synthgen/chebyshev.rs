//! Random truncated Chebyshev expansions.

use crate::scalar::Real;
use crate::series::FineGridFunction;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Expansion degrees follow a Zipf(2) law truncated at this maximum;
/// unbounded degrees carry no usable signal on the fine grids we use.
pub const MAX_DEGREE: usize = 16;

/// Renormalized masses of the truncated Zipf(2) prior, `P(M = m) ∝ 1/m²`.
pub fn degree_masses() -> [f64; MAX_DEGREE] {
    let mut masses = [0.0; MAX_DEGREE];
    let mut z = 0.0;
    for (i, m) in masses.iter_mut().enumerate() {
        *m = 1.0 / ((i + 1) as f64).powi(2);
        z += *m;
    }
    for m in &mut masses {
        *m /= z;
    }
    masses
}

/// Draw a degree in `1..=MAX_DEGREE` by inverse CDF.
pub fn sample_degree(rng: &mut impl Rng) -> usize {
    let masses = degree_masses();
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &m) in masses.iter().enumerate() {
        acc += m;
        if u < acc {
            return i + 1;
        }
    }
    MAX_DEGREE
}

/// Evaluate `sum_{m=1}^{M} a_m T_m(u)` with `u = 2t - 1`, mapping the unit
/// interval onto the Chebyshev domain `[-1, 1]`.
pub fn eval<F: Real>(coeffs: &[F], t: F) -> F {
    let u = F::of(2.0) * t - F::one();
    let mut acc = F::zero();
    // T_0 = 1, T_1 = u, T_{m+1} = 2u T_m - T_{m-1}
    let mut t_prev = F::one();
    let mut t_cur = u;
    for &a in coeffs {
        acc += a * t_cur;
        let t_next = F::of(2.0) * u * t_cur - t_prev;
        t_prev = t_cur;
        t_cur = t_next;
    }
    acc
}

/// Evaluate an expansion with the given coefficients on a regular fine grid.
pub fn on_grid<F: Real>(coeffs: &[F], grid_len: usize) -> FineGridFunction<F> {
    let dt = 1.0 / (grid_len - 1) as f64;
    let values = (0..grid_len)
        .map(|i| eval(coeffs, F::of(i as f64 * dt)))
        .collect();
    FineGridFunction::new(values)
}

/// Sample a random expansion: degree from the truncated Zipf(2) prior,
/// coefficients i.i.d. `N(0, 1/M)` (variance `1/M`).
pub fn sample<F: Real>(grid_len: usize, rng: &mut impl Rng) -> FineGridFunction<F> {
    let degree = sample_degree(rng);
    let std = (1.0 / degree as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid normal");
    let coeffs: Vec<F> = (0..degree).map(|_| F::of(normal.sample(rng))).collect();
    on_grid(&coeffs, grid_len)
}
