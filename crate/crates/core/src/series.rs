//! Time-series and fine-grid function containers.

use crate::error::{Error, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

/// Scalar observations at strictly increasing times, with an optional
/// per-point availability mask (`false` = missing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries<F> {
    pub times: Vec<F>,
    pub values: Vec<F>,
    pub mask: Option<Vec<bool>>,
}

impl<F: Real> TimeSeries<F> {
    pub fn new(times: Vec<F>, values: Vec<F>) -> Result<Self> {
        Self::with_mask(times, values, None)
    }

    pub fn with_mask(times: Vec<F>, values: Vec<F>, mask: Option<Vec<bool>>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Series(format!(
                "times ({}) and values ({}) differ in length",
                times.len(),
                values.len()
            )));
        }
        if let Some(m) = &mask {
            if m.len() != times.len() {
                return Err(Error::Series("mask length mismatch".into()));
            }
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Series(format!(
                    "times not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { times, values, mask })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Copy with masked-out points removed; no-op when there is no mask.
    pub fn observed(&self) -> Self {
        match &self.mask {
            None => self.clone(),
            Some(m) => {
                let mut times = Vec::new();
                let mut values = Vec::new();
                for i in 0..self.len() {
                    if m[i] {
                        times.push(self.times[i]);
                        values.push(self.values[i]);
                    }
                }
                Self { times, values, mask: None }
            }
        }
    }

    /// Observations with time strictly inside `(lo, hi)` removed.
    pub fn without_interval(&self, lo: F, hi: F) -> Self {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, &t) in self.times.iter().enumerate() {
            let keep = !(t >= lo && t <= hi) && self.mask.as_ref().map_or(true, |m| m[i]);
            if keep {
                times.push(t);
                values.push(self.values[i]);
            }
        }
        Self { times, values, mask: None }
    }
}

/// Values of a scalar function on the regular grid `t_i = i/(L-1)` over
/// `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineGridFunction<F> {
    pub values: Vec<F>,
}

impl<F: Real> FineGridFunction<F> {
    pub fn new(values: Vec<F>) -> Self {
        debug_assert!(values.len() >= 2);
        Self { values }
    }

    pub fn grid_len(&self) -> usize {
        self.values.len()
    }

    pub fn dt(&self) -> F {
        F::one() / F::of_usize(self.grid_len() - 1)
    }

    /// Grid abscissa `i / (L-1)`.
    pub fn time(&self, i: usize) -> F {
        F::of_usize(i) * self.dt()
    }

    pub fn times(&self) -> Vec<F> {
        (0..self.grid_len()).map(|i| self.time(i)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Piecewise-linear interpolation of `(xs, ys)` at `x`, clamped to the end
/// values outside the domain.
pub fn interp_linear<F: Real>(xs: &[F], ys: &[F], x: F) -> F {
    debug_assert_eq!(xs.len(), ys.len());
    debug_assert!(!xs.is_empty());
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    // binary search for the bracketing segment
    let mut lo = 0;
    let mut hi = xs.len() - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if xs[mid] <= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + (ys[hi] - ys[lo]) * w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_monotone_times() {
        assert!(TimeSeries::new(vec![0.0, 1.0, 1.0], vec![1.0, 2.0, 3.0]).is_err());
        assert!(TimeSeries::new(vec![0.0, 2.0, 1.0], vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn observed_drops_masked_points() {
        let s = TimeSeries::with_mask(
            vec![0.0, 1.0, 2.0],
            vec![5.0, 6.0, 7.0],
            Some(vec![true, false, true]),
        )
        .unwrap();
        let o = s.observed();
        assert_eq!(o.times, vec![0.0, 2.0]);
        assert_eq!(o.values, vec![5.0, 7.0]);
    }

    #[test]
    fn interp_hits_knots_exactly() {
        let xs = [0.0f64, 0.5, 2.0];
        let ys = [1.0, -1.0, 3.0];
        for i in 0..3 {
            assert_eq!(interp_linear(&xs, &ys, xs[i]), ys[i]);
        }
        assert!((interp_linear(&xs, &ys, 0.25) - 0.0).abs() < 1e-15);
        assert_eq!(interp_linear(&xs, &ys, -1.0), 1.0);
        assert_eq!(interp_linear(&xs, &ys, 5.0), 3.0);
    }

    #[test]
    fn fine_grid_abscissae() {
        let f: FineGridFunction<f64> = FineGridFunction::new(vec![0.0; 5]);
        assert_eq!(f.time(0), 0.0);
        assert_eq!(f.time(4), 1.0);
        assert_eq!(f.time(2), 0.5);
    }
}
