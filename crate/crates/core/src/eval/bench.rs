//! Corruption-and-score benchmark harness.

use crate::error::{Error, Result};
use crate::eval::metrics::{metrics, MaskMode, MetricValues};
use crate::eval::spline::{spline_baseline, Savgol};
use crate::fim_local::{compose_windows, FimLocal, Windowing};
use crate::odesim::{corrupt, CorruptionSpec, Trajectory};
use crate::rng;
use crate::scalar::Real;
use crate::series::TimeSeries;
use serde::{Deserialize, Serialize};

/// Anything that can fill in a trajectory from sparse noisy observations.
pub trait Imputer<F: Real>: Sync {
    fn name(&self) -> String;
    /// Predict channel values at the query times given the observed points.
    fn impute(&self, series: &TimeSeries<F>, query: &[F]) -> Result<Vec<F>>;
}

/// Cubic-spline interpolation, optionally Savitzky-Golay smoothed.
pub struct SplineImputer {
    pub savgol: Option<Savgol>,
}

impl<F: Real> Imputer<F> for SplineImputer {
    fn name(&self) -> String {
        match self.savgol {
            None => "spline".into(),
            Some(s) => format!("spline+savgol({},{})", s.window, s.order),
        }
    }

    fn impute(&self, series: &TimeSeries<F>, query: &[F]) -> Result<Vec<F>> {
        let q = spline_baseline(series, self.savgol)?;
        Ok(q.eval_many(query))
    }
}

/// Predicts the mean of the observed values everywhere; the weakest
/// reasonable baseline.
pub struct MeanImputer;

impl<F: Real> Imputer<F> for MeanImputer {
    fn name(&self) -> String {
        "mean".into()
    }

    fn impute(&self, series: &TimeSeries<F>, query: &[F]) -> Result<Vec<F>> {
        let obs = series.observed();
        if obs.is_empty() {
            return Err(Error::Imputation("no observations".into()));
        }
        let mean = obs.values.iter().copied().sum::<F>() / F::of_usize(obs.len());
        Ok(vec![mean; query.len()])
    }
}

/// Windowed recognition-model imputation.
pub struct FimImputer<'m, F: Real> {
    pub model: &'m FimLocal<F>,
    pub windowing: Windowing,
}

impl<F: Real> Imputer<F> for FimImputer<'_, F> {
    fn name(&self) -> String {
        match self.windowing {
            Windowing::ByCount(m) => format!("fim(w.n.={m})"),
            Windowing::ByObservations(n) => format!("fim(o.n.={n})"),
        }
    }

    fn impute(&self, series: &TimeSeries<F>, query: &[F]) -> Result<Vec<F>> {
        let composed = compose_windows(self.model, series, self.windowing)?;
        Ok(query.iter().map(|&t| composed.x_at(t)).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    /// `(rho, gamma)` pairs; the published grid is the four combinations of
    /// `rho in {0, 0.5}` and `gamma in {0, 0.05}`.
    pub corruptions: Vec<(f64, f64)>,
    /// Corruption resamplings per cell.
    pub n_seeds: u64,
    pub base_seed: u64,
    pub mask_mode: MaskMode,
}

impl BenchConfig {
    pub fn standard(base_seed: u64) -> Self {
        Self {
            corruptions: vec![(0.0, 0.0), (0.0, 0.05), (0.5, 0.0), (0.5, 0.05)],
            n_seeds: 10,
            base_seed,
            mask_mode: MaskMode::All,
        }
    }
}

/// One benchmark cell: a system under one corruption setting and one
/// imputer, aggregated over the corruption resamplings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub system: String,
    pub rho: f64,
    pub gamma: f64,
    pub imputer: String,
    pub mask_mode: MaskMode,
    pub n_seeds: u64,
    pub failures: u64,
    pub mean: Option<MetricValues>,
    pub std: Option<MetricValues>,
}

fn aggregate_seeds(values: &[MetricValues]) -> (MetricValues, MetricValues) {
    let n = values.len() as f64;
    let field = |f: fn(&MetricValues) -> f64| {
        let mean = values.iter().map(f).sum::<f64>() / n;
        let var = values.iter().map(|m| (f(m) - mean) * (f(m) - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let (mae_m, mae_s) = field(|m| m.mae);
    let (mse_m, mse_s) = field(|m| m.mse);
    let (rmse_m, rmse_s) = field(|m| m.rmse);
    let (mre_m, mre_s) = field(|m| m.mre);
    let (r2_m, r2_s) = field(|m| m.r2);
    (
        MetricValues { mae: mae_m, mse: mse_m, rmse: rmse_m, mre: mre_m, r2: r2_m },
        MetricValues { mae: mae_s, mse: mse_s, rmse: rmse_s, mre: mre_s, r2: r2_s },
    )
}

/// Score one imputer against one clean trajectory under one corruption
/// draw.
pub fn score_once<F: Real>(
    clean: &Trajectory<F>,
    spec: &CorruptionSpec,
    imputer: &dyn Imputer<F>,
    mask_mode: MaskMode,
) -> Result<MetricValues> {
    let corrupted = corrupt(clean, spec)?;
    let l = clean.times.len();
    let d = clean.dim();
    let mut prediction = vec![vec![F::zero(); d]; l];
    for (ch, series) in corrupted.channels.iter().enumerate() {
        let pred = imputer.impute(series, &clean.times)?;
        for i in 0..l {
            prediction[i][ch] = pred[i];
        }
    }
    let target: Vec<Vec<F>> = clean.states.clone();
    let mask: Vec<Vec<bool>> = match mask_mode {
        MaskMode::All => vec![vec![true; d]; l],
        MaskMode::MissingOnly | MaskMode::GapOnly => corrupted
            .kept
            .iter()
            .map(|&k| vec![!k; d])
            .collect(),
    };
    metrics(&target, &prediction, &mask)
}

/// Full benchmark: every (trajectory, corruption, imputer) cell scored over
/// `n_seeds` corruption resamplings; imputer failures are recorded and the
/// run continues.
pub fn benchmark<F: Real>(
    trajectories: &[(String, Trajectory<F>)],
    imputers: &[&dyn Imputer<F>],
    cfg: &BenchConfig,
) -> Vec<BenchRow> {
    let mut rows = Vec::new();
    for (sys_idx, (name, clean)) in trajectories.iter().enumerate() {
        for (corr_idx, &(rho, gamma)) in cfg.corruptions.iter().enumerate() {
            for imputer in imputers {
                let mut per_seed = Vec::new();
                let mut failures = 0u64;
                for s in 0..cfg.n_seeds {
                    let spec = CorruptionSpec {
                        rho,
                        gamma,
                        seed: rng::mix(cfg.base_seed, &[sys_idx as u64, corr_idx as u64, s]),
                    };
                    // nothing is missing at rho = 0; fall back to the full
                    // mask so the cell stays well-defined
                    let mode = if rho == 0.0 && cfg.mask_mode == MaskMode::MissingOnly {
                        MaskMode::All
                    } else {
                        cfg.mask_mode
                    };
                    match score_once(clean, &spec, *imputer, mode) {
                        Ok(v) => per_seed.push(v),
                        Err(e) => {
                            log::warn!("benchmark cell failure ({name}, {rho}, {gamma}, {}): {e}", imputer.name());
                            failures += 1;
                        }
                    }
                }
                let (mean, std) = if per_seed.is_empty() {
                    (None, None)
                } else {
                    let (m, s) = aggregate_seeds(&per_seed);
                    (Some(m), Some(s))
                };
                rows.push(BenchRow {
                    system: name.clone(),
                    rho,
                    gamma,
                    imputer: imputer.name(),
                    mask_mode: cfg.mask_mode,
                    n_seeds: cfg.n_seeds,
                    failures,
                    mean,
                    std,
                });
            }
        }
    }
    rows
}
