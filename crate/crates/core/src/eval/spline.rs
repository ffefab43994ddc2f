//! Classical baselines: not-a-knot cubic spline interpolation, optionally
//! preceded by Savitzky-Golay least-squares smoothing.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::series::TimeSeries;
use serde::{Deserialize, Serialize};

/// Savitzky-Golay configuration: `window` points enter each local fit of
/// degree `order`. Even windows are allowed (the extra point sits left of
/// center); near the boundaries the window shrinks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Savgol {
    pub window: usize,
    pub order: usize,
}

impl Savgol {
    pub fn validate(&self) -> Result<()> {
        if self.window <= self.order {
            return Err(Error::Config(format!(
                "savgol window {} must exceed the polynomial order {}",
                self.window, self.order
            )));
        }
        if self.window < 2 {
            return Err(Error::Config("savgol window must be at least 2".into()));
        }
        Ok(())
    }
}

/// Solve a small dense symmetric system by Gaussian elimination with
/// partial pivoting. Sizes never exceed `order + 1`.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<()> {
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        if a[piv * n + col].abs() < 1e-300 {
            return Err(Error::Metric("singular local least-squares system".into()));
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            b.swap(col, piv);
        }
        for r in col + 1..n {
            let factor = a[r * n + col] / a[col * n + col];
            for c in col..n {
                a[r * n + c] -= factor * a[col * n + c];
            }
            b[r] -= factor * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for c in col + 1..n {
            acc -= a[col * n + c] * b[c];
        }
        b[col] = acc / a[col * n + col];
    }
    Ok(())
}

/// Least-squares local polynomial smoothing. The fitted polynomial is
/// evaluated at the center point itself, so polynomials of degree at most
/// `order` pass through unchanged. Works on irregular grids.
pub fn savgol_smooth<F: Real>(times: &[F], values: &[F], cfg: Savgol) -> Result<Vec<F>> {
    cfg.validate()?;
    let n = values.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let left_nominal = (cfg.window - 1) / 2 + (cfg.window - 1) % 2; // even windows lean left
    let right_nominal = (cfg.window - 1) / 2;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // shrink symmetrically near the boundaries
        let reach = left_nominal.min(i).min(right_nominal.min(n - 1 - i).max(0));
        let lo = i - left_nominal.min(i);
        let hi = (i + right_nominal).min(n - 1);
        let (lo, hi) = if i - lo > reach || hi - i > reach {
            (i - reach.min(i), (i + reach).min(n - 1))
        } else {
            (lo, hi)
        };
        let count = hi - lo + 1;
        let degree = cfg.order.min(count - 1);
        let dim = degree + 1;
        // normal equations for the centered Vandermonde fit
        let mut ata = vec![0.0f64; dim * dim];
        let mut atb = vec![0.0f64; dim];
        for j in lo..=hi {
            let x = (times[j] - times[i]).to_f64x();
            let mut pows = vec![1.0f64; dim];
            for p in 1..dim {
                pows[p] = pows[p - 1] * x;
            }
            for r in 0..dim {
                for c in 0..dim {
                    ata[r * dim + c] += pows[r] * pows[c];
                }
                atb[r] += pows[r] * values[j].to_f64x();
            }
        }
        solve_dense(&mut ata, &mut atb, dim)?;
        out.push(F::of(atb[0]));
    }
    Ok(out)
}

/// Not-a-knot cubic spline through `(times, values)`; exact on cubic
/// polynomials. Evaluation outside the knot span extrapolates the end
/// segments.
#[derive(Debug, Clone)]
pub struct CubicSpline<F> {
    xs: Vec<F>,
    ys: Vec<F>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl<F: Real> CubicSpline<F> {
    pub fn fit(times: &[F], values: &[F]) -> Result<Self> {
        let n = times.len();
        if n < 4 {
            return Err(Error::Series(format!(
                "cubic spline needs at least 4 observations, got {n}"
            )));
        }
        let x: Vec<f64> = times.iter().map(|&t| t.to_f64x()).collect();
        let y: Vec<f64> = values.iter().map(|&v| v.to_f64x()).collect();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();

        // interior equations for the second derivatives m[1..n-1]:
        //   h[i-1] m[i-1] + 2(h[i-1]+h[i]) m[i] + h[i] m[i+1] = rhs_i
        // not-a-knot boundaries eliminate m[0] and m[n-1]:
        //   m[0]   = m[1]   + (m[1] - m[2]) h[0] / h[1]
        //   m[n-1] = m[n-2] + (m[n-2] - m[n-3]) h[n-2] / h[n-3]
        let k = n - 2; // unknowns m[1..=n-2]
        let mut sub = vec![0.0; k];
        let mut diag = vec![0.0; k];
        let mut sup = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for i in 1..=k {
            let hi0 = h[i - 1];
            let hi1 = h[i];
            rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / hi1 - (y[i] - y[i - 1]) / hi0);
            sub[i - 1] = hi0;
            diag[i - 1] = 2.0 * (hi0 + hi1);
            sup[i - 1] = hi1;
        }
        // fold the boundary relations into the first and last rows
        {
            let r = h[0] / h[1];
            diag[0] += h[0] * (1.0 + r);
            sup[0] -= h[0] * r;
        }
        {
            let r = h[n - 2] / h[n - 3];
            diag[k - 1] += h[n - 2] * (1.0 + r);
            sub[k - 1] -= h[n - 2] * r;
        }
        // Thomas algorithm
        for i in 1..k {
            let w = sub[i] / diag[i - 1];
            diag[i] -= w * sup[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        let mut inner = vec![0.0; k];
        inner[k - 1] = rhs[k - 1] / diag[k - 1];
        for i in (0..k - 1).rev() {
            inner[i] = (rhs[i] - sup[i] * inner[i + 1]) / diag[i];
        }
        let mut m = vec![0.0; n];
        m[1..=k].copy_from_slice(&inner);
        m[0] = m[1] + (m[1] - m[2]) * h[0] / h[1];
        m[n - 1] = m[n - 2] + (m[n - 2] - m[n - 3]) * h[n - 2] / h[n - 3];

        Ok(Self { xs: times.to_vec(), ys: values.to_vec(), m })
    }

    fn segment(&self, t: F) -> usize {
        let n = self.xs.len();
        if t <= self.xs[0] {
            return 0;
        }
        if t >= self.xs[n - 1] {
            return n - 2;
        }
        let mut lo = 0;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.xs[mid] <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    pub fn eval(&self, t: F) -> F {
        let i = self.segment(t);
        let x0 = self.xs[i].to_f64x();
        let x1 = self.xs[i + 1].to_f64x();
        let h = x1 - x0;
        let a = (x1 - t.to_f64x()) / h;
        let b = (t.to_f64x() - x0) / h;
        let y0 = self.ys[i].to_f64x();
        let y1 = self.ys[i + 1].to_f64x();
        let v = a * y0
            + b * y1
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0;
        F::of(v)
    }

    pub fn eval_many(&self, ts: &[F]) -> Vec<F> {
        ts.iter().map(|&t| self.eval(t)).collect()
    }
}

/// Spline baseline over a series: optional Savitzky-Golay smoothing, then
/// the not-a-knot cubic spline; returns a queryable trajectory.
pub fn spline_baseline<F: Real>(
    series: &TimeSeries<F>,
    smoothing: Option<Savgol>,
) -> Result<CubicSpline<F>> {
    let obs = series.observed();
    let values = match smoothing {
        None => obs.values.clone(),
        Some(cfg) => savgol_smooth(&obs.times, &obs.values, cfg)?,
    };
    CubicSpline::fit(&obs.times, &values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic(t: f64) -> f64 {
        2.0 - 1.5 * t + 0.75 * t * t - 0.3 * t * t * t
    }

    #[test]
    fn spline_interpolates_observations_exactly() {
        let ts: Vec<f64> = (0..12).map(|i| i as f64 * 0.31).collect();
        let ys: Vec<f64> = ts.iter().map(|&t| (2.0 * t).sin()).collect();
        let sp = CubicSpline::fit(&ts, &ys).unwrap();
        for (t, y) in ts.iter().zip(&ys) {
            assert!((sp.eval(*t) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn spline_reproduces_cubic_polynomials() {
        let ts: Vec<f64> = (0..9).map(|i| 0.2 + i as f64 * 0.4).collect();
        let ys: Vec<f64> = ts.iter().map(|&t| cubic(t)).collect();
        let sp = CubicSpline::fit(&ts, &ys).unwrap();
        for k in 0..200 {
            let t = 0.2 + k as f64 * (3.4 / 199.0);
            assert!(
                (sp.eval(t) - cubic(t)).abs() < 1e-8,
                "cubic reproduction failed at {t}: {} vs {}",
                sp.eval(t),
                cubic(t)
            );
        }
    }

    #[test]
    fn spline_needs_four_points() {
        let ts = [0.0, 1.0, 2.0];
        let ys = [0.0, 1.0, 4.0];
        assert!(CubicSpline::fit(&ts, &ys).is_err());
    }

    #[test]
    fn savgol_is_identity_on_low_degree_polynomials() {
        let ts: Vec<f64> = (0..25).map(|i| i as f64 * 0.13).collect();
        for (window, order) in [(15, 3), (8, 3), (4, 3), (5, 2)] {
            let cfg = Savgol { window, order };
            let ys: Vec<f64> = ts
                .iter()
                .map(|&t| 1.0 + 0.5 * t - 0.25 * t * t + if order >= 3 { 0.1 * t * t * t } else { 0.0 })
                .collect();
            let sm = savgol_smooth(&ts, &ys, cfg).unwrap();
            for (a, b) in sm.iter().zip(&ys) {
                assert!((a - b).abs() < 1e-9, "savgol({window},{order}) not exact: {a} vs {b}");
            }
        }
    }

    #[test]
    fn savgol_smooths_noise() {
        let ts: Vec<f64> = (0..101).map(|i| i as f64 * 0.01).collect();
        let noisy: Vec<f64> = ts
            .iter()
            .enumerate()
            .map(|(i, &t)| t + if i % 2 == 0 { 0.05 } else { -0.05 })
            .collect();
        let sm = savgol_smooth(&ts, &noisy, Savgol { window: 15, order: 3 }).unwrap();
        let rough: f64 = noisy.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        let smooth: f64 = sm.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        assert!(smooth < rough / 2.0, "smoothing had little effect: {smooth} vs {rough}");
    }

    #[test]
    fn savgol_rejects_window_not_exceeding_order() {
        let cfg = Savgol { window: 3, order: 3 };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn baseline_composes_smoothing_and_interpolation() {
        let ts: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = ts.iter().map(|&t| cubic(t)).collect();
        let series = TimeSeries::new(ts.clone(), ys).unwrap();
        let q = spline_baseline(&series, Some(Savgol { window: 8, order: 3 })).unwrap();
        for &t in &[0.05, 1.33, 2.71, 3.85] {
            assert!((q.eval(t) - cubic(t)).abs() < 1e-7);
        }
    }
}
