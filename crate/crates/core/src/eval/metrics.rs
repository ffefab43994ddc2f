//! Imputation metrics: masked MAE/MSE/RMSE/MRE, unmasked R² and the
//! R²-accuracy aggregate.

use crate::error::{Error, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Score only points that were removed by the corruption.
    MissingOnly,
    /// Score only points inside the gap interval.
    GapOnly,
    /// Score the complete trajectory.
    All,
}

/// Per-trajectory metric values. `r2` is averaged over dimensions and
/// computed without the mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub mre: f64,
    pub r2: f64,
}

/// Masked metrics over a multi-dimensional trajectory.
/// `target[i][d]`, `prediction[i][d]`, `mask[i][d]`.
pub fn metrics<F: Real>(
    target: &[Vec<F>],
    prediction: &[Vec<F>],
    mask: &[Vec<bool>],
) -> Result<MetricValues> {
    let l = target.len();
    if prediction.len() != l || mask.len() != l || l == 0 {
        return Err(Error::Metric("shape mismatch between target, prediction and mask".into()));
    }
    let d = target[0].len();
    for i in 0..l {
        if target[i].len() != d || prediction[i].len() != d || mask[i].len() != d {
            return Err(Error::Metric("ragged rows in metric inputs".into()));
        }
    }
    let mut count = 0.0f64;
    let mut abs_sum = 0.0f64;
    let mut sq_sum = 0.0f64;
    let mut target_abs_sum = 0.0f64;
    for i in 0..l {
        for j in 0..d {
            if mask[i][j] {
                let t = target[i][j].to_f64x();
                let p = prediction[i][j].to_f64x();
                count += 1.0;
                abs_sum += (t - p).abs();
                sq_sum += (t - p) * (t - p);
                target_abs_sum += t.abs();
            }
        }
    }
    if count == 0.0 {
        return Err(Error::Metric("mask selects no points".into()));
    }
    let mae = abs_sum / count;
    let mse = sq_sum / count;
    let rmse = mse.sqrt();
    let mre = if target_abs_sum > 0.0 { abs_sum / target_abs_sum } else { f64::INFINITY };

    // R² per dimension, unmasked
    let mut r2_acc = 0.0f64;
    for j in 0..d {
        let mean = target.iter().map(|row| row[j].to_f64x()).sum::<f64>() / l as f64;
        let mut ss_res = 0.0;
        let mut ss_tot = 0.0;
        for i in 0..l {
            let t = target[i][j].to_f64x();
            let p = prediction[i][j].to_f64x();
            ss_res += (t - p) * (t - p);
            ss_tot += (t - mean) * (t - mean);
        }
        if ss_tot == 0.0 {
            return Err(Error::Metric(format!("zero-variance target in dimension {j}")));
        }
        r2_acc += 1.0 - ss_res / ss_tot;
    }
    Ok(MetricValues { mae, mse, rmse, mre, r2: r2_acc / d as f64 })
}

/// Convenience wrapper for one-dimensional trajectories.
pub fn metrics_1d<F: Real>(target: &[F], prediction: &[F], mask: &[bool]) -> Result<MetricValues> {
    let t: Vec<Vec<F>> = target.iter().map(|&v| vec![v]).collect();
    let p: Vec<Vec<F>> = prediction.iter().map(|&v| vec![v]).collect();
    let m: Vec<Vec<bool>> = mask.iter().map(|&v| vec![v]).collect();
    metrics(&t, &p, &m)
}

/// Aggregate of per-trajectory metrics: means, standard deviations and the
/// fraction of trajectories with R² above 0.9.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub mask_mode: MaskMode,
    pub per_trajectory: Vec<MetricValues>,
    pub mean: MetricValues,
    pub std: MetricValues,
    pub r2_accuracy: f64,
}

impl MetricReport {
    pub fn aggregate(mask_mode: MaskMode, per_trajectory: Vec<MetricValues>) -> Result<Self> {
        if per_trajectory.is_empty() {
            return Err(Error::Metric("no trajectories to aggregate".into()));
        }
        let n = per_trajectory.len() as f64;
        let field = |f: fn(&MetricValues) -> f64| {
            let mean = per_trajectory.iter().map(f).sum::<f64>() / n;
            let var =
                per_trajectory.iter().map(|m| (f(m) - mean) * (f(m) - mean)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        let (mae_m, mae_s) = field(|m| m.mae);
        let (mse_m, mse_s) = field(|m| m.mse);
        let (rmse_m, rmse_s) = field(|m| m.rmse);
        let (mre_m, mre_s) = field(|m| m.mre);
        let (r2_m, r2_s) = field(|m| m.r2);
        let r2_accuracy =
            per_trajectory.iter().filter(|m| m.r2 > 0.9).count() as f64 / n;
        Ok(Self {
            mask_mode,
            mean: MetricValues { mae: mae_m, mse: mse_m, rmse: rmse_m, mre: mre_m, r2: r2_m },
            std: MetricValues { mae: mae_s, mse: mse_s, rmse: rmse_s, mre: mre_s, r2: r2_s },
            per_trajectory,
            r2_accuracy,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_scores_zero_errors() {
        let t = vec![vec![1.0, 2.0], vec![3.0, -1.0]];
        let m = vec![vec![true, true], vec![true, true]];
        let v = metrics(&t, &t, &m).unwrap();
        assert_eq!(v.mae, 0.0);
        assert_eq!(v.mse, 0.0);
        assert_eq!(v.rmse, 0.0);
        assert_eq!(v.mre, 0.0);
        assert_eq!(v.r2, 1.0);
    }

    #[test]
    fn constant_mean_prediction_gives_zero_r2() {
        let target: Vec<Vec<f64>> = vec![vec![1.0], vec![2.0], vec![3.0]];
        let pred = vec![vec![2.0], vec![2.0], vec![2.0]];
        let mask = vec![vec![true], vec![true], vec![true]];
        let v = metrics(&target, &pred, &mask).unwrap();
        assert!((v.r2 - 0.0).abs() < 1e-15);
    }

    #[test]
    fn two_point_example_all_four_formulas() {
        let target = vec![vec![1.0], vec![2.0]];
        let pred = vec![vec![1.0], vec![3.0]];
        let mask = vec![vec![true], vec![true]];
        let v = metrics(&target, &pred, &mask).unwrap();
        assert!((v.mae - 0.5).abs() < 1e-15);
        assert!((v.mse - 0.5).abs() < 1e-15);
        assert!((v.rmse - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((v.mre - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rmse_squared_equals_mse() {
        let target = vec![vec![0.3], vec![-1.2], vec![0.7]];
        let pred = vec![vec![0.1], vec![-0.9], vec![1.0]];
        let mask = vec![vec![true], vec![true], vec![true]];
        let v = metrics(&target, &pred, &mask).unwrap();
        assert!((v.rmse * v.rmse - v.mse).abs() < 1e-15);
    }

    #[test]
    fn masked_points_are_invisible() {
        let target = vec![vec![1.0], vec![2.0], vec![5.0]];
        let pred_a = vec![vec![1.5], vec![2.0], vec![0.0]];
        let pred_b = vec![vec![1.5], vec![2.0], vec![999.0]];
        let mask = vec![vec![true], vec![true], vec![false]];
        let a = metrics(&target, &pred_a, &mask).unwrap();
        let b = metrics(&target, &pred_b, &mask).unwrap();
        assert_eq!(a.mae, b.mae);
        assert_eq!(a.mse, b.mse);
        assert_eq!(a.mre, b.mre);
        // r2 is computed unmasked by definition, so it may differ
    }

    #[test]
    fn empty_mask_is_an_error() {
        let target = vec![vec![1.0]];
        let pred = vec![vec![1.0]];
        let mask = vec![vec![false]];
        assert!(metrics(&target, &pred, &mask).is_err());
    }

    #[test]
    fn zero_variance_target_rejected_for_r2() {
        let target = vec![vec![2.0], vec![2.0]];
        let pred = vec![vec![1.0], vec![3.0]];
        let mask = vec![vec![true], vec![true]];
        assert!(metrics(&target, &pred, &mask).is_err());
    }

    #[test]
    fn r2_accuracy_counts_good_trajectories() {
        let good = MetricValues { mae: 0.0, mse: 0.0, rmse: 0.0, mre: 0.0, r2: 0.95 };
        let bad = MetricValues { mae: 1.0, mse: 1.0, rmse: 1.0, mre: 1.0, r2: 0.5 };
        let rep = MetricReport::aggregate(MaskMode::All, vec![good, bad, good]).unwrap();
        assert!((rep.r2_accuracy - 2.0 / 3.0).abs() < 1e-15);
    }
}
