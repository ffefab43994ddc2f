//! Hierarchical synthetic-data generator for training and test sets.
//!
//! Every record is a function `f` on the fine grid, its integrated solution
//! `x(t) = x0 + ∫ f`, an observation grid and noisy observations. Record
//! `j` is fully determined by `(base_seed, j)`, so records may be generated
//! in any order or concurrently.

pub mod chebyshev;
pub mod gp;
pub mod grid;
pub mod noise;

pub use grid::{GridScheme, ObservationGrid, L_MIN};

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::scalar::Real;
use crate::series::FineGridFunction;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    PointWise,
    TemporalGap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionFamily {
    ChebyshevRand,
    GpRbf,
    GpPeriodic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub kind: DatasetKind,
    pub n_records: u64,
    pub fine_grid_len: usize,
    pub noise_lambda: f64,
    /// Probabilities for (ChebyshevRand, GpRbf, GpPeriodic); must sum to 1.
    pub family_mix: [f64; 3],
    pub base_seed: u64,
}

impl GenerationConfig {
    pub fn pointwise(n_records: u64, base_seed: u64) -> Self {
        Self {
            kind: DatasetKind::PointWise,
            n_records,
            fine_grid_len: 128,
            noise_lambda: 0.1,
            family_mix: [0.5, 0.5, 0.0],
            base_seed,
        }
    }

    pub fn temporal(n_records: u64, base_seed: u64) -> Self {
        Self {
            kind: DatasetKind::TemporalGap,
            n_records,
            fine_grid_len: 256,
            noise_lambda: 0.05,
            family_mix: [0.0, 0.0, 1.0],
            base_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_records == 0 {
            return Err(Error::Config("n_records must be positive".into()));
        }
        if self.fine_grid_len < 2 * L_MIN {
            return Err(Error::Config(format!(
                "fine_grid_len {} too small",
                self.fine_grid_len
            )));
        }
        if self.noise_lambda < 0.0 {
            return Err(Error::Config("noise_lambda must be non-negative".into()));
        }
        let total: f64 = self.family_mix.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.family_mix.iter().any(|&p| p < 0.0) {
            return Err(Error::Config(format!(
                "family_mix must be non-negative and sum to 1 (got sum {total})"
            )));
        }
        Ok(())
    }
}

/// One synthetic training instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord<F> {
    pub index: u64,
    pub seed: u64,
    pub family: FunctionFamily,
    pub f: FineGridFunction<F>,
    pub x: FineGridFunction<F>,
    pub x0: F,
    pub grid: ObservationGrid,
    pub y: Vec<F>,
    pub sigma: F,
}

impl<F: Real> GenerationRecord<F> {
    /// Observation times on the unit interval.
    pub fn obs_times(&self) -> Vec<F> {
        let dt = self.f.dt();
        self.grid.indices.iter().map(|&i| F::of_usize(i) * dt).collect()
    }

    /// Gap interval in fine-grid time, when present.
    pub fn gap_interval(&self) -> Option<(F, F)> {
        let dt = self.f.dt();
        self.grid
            .gap
            .map(|(lo, hi)| (F::of_usize(lo) * dt, F::of_usize(hi) * dt))
    }
}

/// `x(t_i) = x0 + ∫_0^{t_i} f(s) ds` by the cumulative trapezoidal rule.
pub fn integrate_solution<F: Real>(f: &FineGridFunction<F>, x0: F) -> FineGridFunction<F> {
    let dt = f.dt();
    let half = F::of(0.5);
    let mut values = Vec::with_capacity(f.grid_len());
    values.push(x0);
    for i in 1..f.grid_len() {
        let prev = values[i - 1];
        values.push(prev + (f.values[i - 1] + f.values[i]) * half * dt);
    }
    FineGridFunction::new(values)
}

fn pick_family(mix: &[f64; 3], rng: &mut impl Rng) -> FunctionFamily {
    let u: f64 = rng.gen();
    if u < mix[0] {
        FunctionFamily::ChebyshevRand
    } else if u < mix[0] + mix[1] {
        FunctionFamily::GpRbf
    } else {
        FunctionFamily::GpPeriodic
    }
}

/// Generate record `j`. Pure in `(cfg.base_seed, j)`.
pub fn generate_record<F: Real>(cfg: &GenerationConfig, j: u64) -> Result<GenerationRecord<F>> {
    let seed = rng::mix(cfg.base_seed, &[stream::RECORD, j]);
    let mut r = rng::derive(cfg.base_seed, &[stream::RECORD, j]);
    let family = pick_family(&cfg.family_mix, &mut r);
    let f: FineGridFunction<F> = match family {
        FunctionFamily::ChebyshevRand => chebyshev::sample(cfg.fine_grid_len, &mut r),
        FunctionFamily::GpRbf => {
            let lengthscale = gp::sample_rbf_lengthscale(&mut r);
            gp::sample(&gp::Kernel::Rbf { lengthscale }, cfg.fine_grid_len, &mut r)
                .map_err(|e| Error::Generation { index: j, reason: e.to_string() })?
        }
        FunctionFamily::GpPeriodic => {
            let (lengthscale, period) = gp::sample_periodic_hypers(&mut r);
            gp::sample(
                &gp::Kernel::Periodic { lengthscale, period },
                cfg.fine_grid_len,
                &mut r,
            )
            .map_err(|e| Error::Generation { index: j, reason: e.to_string() })?
        }
    };
    if !f.all_finite() {
        return Err(Error::Generation { index: j, reason: "non-finite function sample".into() });
    }
    let x0 = F::of(Normal::new(0.0, 1.0).expect("valid normal").sample(&mut r));
    let x = integrate_solution(&f, x0);
    let grid = match cfg.kind {
        DatasetKind::PointWise => grid::sample_pointwise(cfg.fine_grid_len, &mut r),
        DatasetKind::TemporalGap => grid::sample_temporal(cfg.fine_grid_len, &mut r),
    };
    let x_at_obs: Vec<F> = grid.indices.iter().map(|&i| x.values[i]).collect();
    let (y, sigma) = noise::apply(&x_at_obs, cfg.noise_lambda, &mut r);
    Ok(GenerationRecord { index: j, seed, family, f, x, x0, grid, y, sigma })
}

/// Stream of records. Failures are yielded so the writer can log and skip
/// them without reusing the index.
pub fn generate_dataset<F: Real>(
    cfg: &GenerationConfig,
) -> impl Iterator<Item = (u64, Result<GenerationRecord<F>>)> + '_ {
    (0..cfg.n_records).map(move |j| (j, generate_record(cfg, j)))
}

/// Generate all records eagerly, logging and skipping failures.
pub fn generate_all<F: Real>(cfg: &GenerationConfig) -> Result<Vec<GenerationRecord<F>>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.n_records as usize);
    for (j, rec) in generate_dataset(cfg) {
        match rec {
            Ok(r) => out.push(r),
            Err(e) => log::warn!("skipping record {j}: {e}"),
        }
    }
    Ok(out)
}
