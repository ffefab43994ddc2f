//! Benchmark dynamical systems, a fixed-step RK4 integrator and the
//! corruption schemes used by the evaluation harness.

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::scalar::Real;
use crate::series::TimeSeries;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

type VectorField<F> = Box<dyn Fn(F, &[F]) -> Vec<F> + Send + Sync>;

pub struct DynamicalSystem<F> {
    pub name: String,
    pub dim: usize,
    pub vector_field: VectorField<F>,
    pub default_x0: Vec<F>,
    pub default_span: f64,
}

impl<F: Real> DynamicalSystem<F> {
    pub fn new(
        name: &str,
        dim: usize,
        default_x0: Vec<F>,
        default_span: f64,
        vf: impl Fn(F, &[F]) -> Vec<F> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.to_string(),
            dim,
            vector_field: Box::new(vf),
            default_x0,
            default_span,
        }
    }
}

/// Simulated trajectory on a regular output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<F> {
    pub times: Vec<F>,
    /// `states[i]` is the state vector at `times[i]`.
    pub states: Vec<Vec<F>>,
}

impl<F: Real> Trajectory<F> {
    pub fn channel(&self, d: usize) -> Vec<F> {
        self.states.iter().map(|s| s[d]).collect()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }
}

fn rk4_step<F: Real>(sys: &DynamicalSystem<F>, t: F, x: &[F], h: F) -> Vec<F> {
    let half = F::of(0.5);
    let sixth = F::one() / F::of(6.0);
    let k1 = (sys.vector_field)(t, x);
    let x2: Vec<F> = x.iter().zip(&k1).map(|(&xi, &k)| xi + half * h * k).collect();
    let k2 = (sys.vector_field)(t + half * h, &x2);
    let x3: Vec<F> = x.iter().zip(&k2).map(|(&xi, &k)| xi + half * h * k).collect();
    let k3 = (sys.vector_field)(t + half * h, &x3);
    let x4: Vec<F> = x.iter().zip(&k3).map(|(&xi, &k)| xi + h * k).collect();
    let k4 = (sys.vector_field)(t + h, &x4);
    (0..x.len())
        .map(|i| x[i] + h * sixth * (k1[i] + F::of(2.0) * (k2[i] + k3[i]) + k4[i]))
        .collect()
}

/// Classical RK4 with `substeps` internal steps between consecutive output
/// points.
pub fn rk4_simulate_with_substeps<F: Real>(
    sys: &DynamicalSystem<F>,
    x0: &[F],
    t_end: f64,
    n_points: usize,
    substeps: usize,
) -> Result<Trajectory<F>> {
    if n_points < 2 {
        return Err(Error::Config("rk4: n_points must be at least 2".into()));
    }
    if t_end <= 0.0 {
        return Err(Error::Config("rk4: span must be positive".into()));
    }
    let spacing = F::of(t_end / (n_points - 1) as f64);
    let h = spacing / F::of_usize(substeps.max(1));
    let mut times = Vec::with_capacity(n_points);
    let mut states = Vec::with_capacity(n_points);
    let mut x = x0.to_vec();
    times.push(F::zero());
    states.push(x.clone());
    for i in 1..n_points {
        let t_left = spacing * F::of_usize(i - 1);
        for s in 0..substeps.max(1) {
            let t = t_left + h * F::of_usize(s);
            x = rk4_step(sys, t, &x, h);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { t: (spacing * F::of_usize(i)).to_f64x() });
        }
        times.push(spacing * F::of_usize(i));
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

/// Default accuracy policy: 8 internal substeps per output interval.
pub fn rk4_simulate<F: Real>(
    sys: &DynamicalSystem<F>,
    x0: &[F],
    t_end: f64,
    n_points: usize,
) -> Result<Trajectory<F>> {
    rk4_simulate_with_substeps(sys, x0, t_end, n_points, 8)
}

/// Van der Pol oscillator as a first-order system in `(x, v)`.
pub fn van_der_pol<F: Real>(mu: f64) -> DynamicalSystem<F> {
    let m = F::of(mu);
    DynamicalSystem::new(
        "van_der_pol",
        2,
        vec![F::of(3.0), F::zero()],
        10.0,
        move |_t, x| vec![x[1], m * (F::one() - x[0] * x[0]) * x[1] - x[0]],
    )
}

/// Rössler attractor in its chaotic variation, including the x5 time
/// rescaling of the benchmark convention.
pub fn rossler<F: Real>() -> DynamicalSystem<F> {
    let five = F::of(5.0);
    DynamicalSystem::new(
        "rossler",
        3,
        vec![F::of(2.3), F::of(1.1), F::of(0.8)],
        10.0,
        move |_t, x| {
            vec![
                -five * (x[1] + x[2]),
                five * (F::of(0.2) * x[1] + x[0]),
                five * (F::of(0.2) + x[2] * (F::of(-5.7) + x[0])),
            ]
        },
    )
}

/// Chaotic Lorenz system. Parameters are named explicitly: the common
/// chaotic assignment is `sigma = 10`, `rho = 28`, `beta = 8/3`.
pub fn lorenz<F: Real>(sigma: f64, rho: f64, beta: f64) -> DynamicalSystem<F> {
    let (s, r, b) = (F::of(sigma), F::of(rho), F::of(beta));
    DynamicalSystem::new(
        "lorenz",
        3,
        vec![F::of(2.3), F::of(8.1), F::of(12.4)],
        10.0,
        move |_t, x| vec![s * (x[1] - x[0]), r * x[0] - x[1] - x[0] * x[2], x[0] * x[1] - b * x[2]],
    )
}

/// The three bundled benchmark systems with their default parameters.
pub fn builtin_systems<F: Real>() -> Vec<DynamicalSystem<F>> {
    vec![van_der_pol(0.5), rossler(), lorenz(10.0, 28.0, 8.0 / 3.0)]
}

pub fn builtin_system<F: Real>(name: &str) -> Option<DynamicalSystem<F>> {
    match name {
        "van_der_pol" | "vdp" => Some(van_der_pol(0.5)),
        "rossler" => Some(rossler()),
        "lorenz" => Some(lorenz(10.0, 28.0, 8.0 / 3.0)),
        _ => None,
    }
}

/// Subsample-and-noise corruption: each fine-grid point is kept with
/// probability `1 - rho` (one mask shared by all channels) and kept values
/// are scaled by `(1 + eps)`, `eps ~ N(0, gamma)` independently per entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub rho: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if self.gamma < 0.0 {
            return Err(Error::Config(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Output of [`corrupt`]: one observed series per channel plus the shared
/// keep mask over the fine grid.
#[derive(Debug, Clone)]
pub struct Corrupted<F> {
    pub channels: Vec<TimeSeries<F>>,
    pub kept: Vec<bool>,
}

pub fn corrupt<F: Real>(traj: &Trajectory<F>, spec: &CorruptionSpec) -> Result<Corrupted<F>> {
    spec.validate()?;
    let n = traj.times.len();
    let dim = traj.dim();
    let mut r = rng::derive(spec.seed, &[stream::CORRUPT]);
    let kept: Vec<bool> = (0..n).map(|_| rand::Rng::gen::<f64>(&mut r) >= spec.rho).collect();
    if kept.iter().all(|&k| !k) {
        return Err(Error::AllDropped);
    }
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut channels = Vec::with_capacity(dim);
    for d in 0..dim {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for i in 0..n {
            // noise draws are consumed for every grid point so the kept
            // subsequence does not depend on which points were dropped
            let eps = F::of(normal.sample(&mut r) * spec.gamma);
            if kept[i] {
                times.push(traj.times[i]);
                values.push(traj.states[i][d] * (F::one() + eps));
            }
        }
        channels.push(TimeSeries::new(times, values)?);
    }
    Ok(Corrupted { channels, kept })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> DynamicalSystem<f64> {
        DynamicalSystem::new("decay", 1, vec![1.0], 1.0, |_t, x| vec![-x[0]])
    }

    #[test]
    fn constant_field_stays_fixed() {
        let sys = DynamicalSystem::new("still", 1, vec![0.0], 1.0, |_t, _x| vec![0.0]);
        let traj = rk4_simulate(&sys, &[5.5], 1.0, 16).unwrap();
        assert!(traj.states.iter().all(|s| s[0] == 5.5));
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let traj = rk4_simulate(&decay(), &[1.0], 1.0, 512).unwrap();
        let end = traj.states.last().unwrap()[0];
        assert!((end - (-1.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn halving_step_gives_fourth_order() {
        // coarse substeps so the error is far above rounding noise
        let e1 = {
            let t = rk4_simulate_with_substeps(&decay(), &[1.0], 1.0, 9, 1).unwrap();
            (t.states.last().unwrap()[0] - (-1.0f64).exp()).abs()
        };
        let e2 = {
            let t = rk4_simulate_with_substeps(&decay(), &[1.0], 1.0, 9, 2).unwrap();
            (t.states.last().unwrap()[0] - (-1.0f64).exp()).abs()
        };
        let ratio = e1 / e2;
        assert!((12.0..=20.0).contains(&ratio), "error ratio {ratio}");
    }

    #[test]
    fn divergence_reports_blowup_time() {
        let sys = DynamicalSystem::new("blowup", 1, vec![1.0], 1.0, |_t, x| vec![x[0] * x[0]]);
        // dx = x^2 from x0=10 blows up before t=1
        let err = rk4_simulate(&sys, &[10.0], 1.0, 64).unwrap_err();
        match err {
            Error::Integration { t } => assert!(t > 0.0 && t <= 1.0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn vdp_mu_zero_conserves_energy() {
        let sys = van_der_pol::<f64>(0.0);
        let traj = rk4_simulate(&sys, &[1.0, 0.0], 10.0, 512).unwrap();
        for s in &traj.states {
            let e = s[0] * s[0] + s[1] * s[1];
            assert!((e - 1.0).abs() < 1e-6, "energy {e}");
        }
    }

    #[test]
    fn vdp_settles_near_limit_cycle() {
        let sys = van_der_pol::<f64>(0.5);
        let traj = rk4_simulate(&sys, &[3.0, 0.0], 10.0, 2048).unwrap();
        let tail = &traj.states[3 * 2048 / 4..];
        let max_x = tail.iter().map(|s| s[0].abs()).fold(0.0f64, f64::max);
        assert!((1.8..=2.2).contains(&max_x), "limit-cycle amplitude {max_x}");
    }

    #[test]
    fn rossler_stays_bounded() {
        let sys = rossler::<f64>();
        let traj = rk4_simulate(&sys, &[2.3, 1.1, 0.8], 10.0, 1024).unwrap();
        let max = traj
            .states
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v.abs())
            .fold(0.0f64, f64::max);
        assert!(max < 60.0, "max coordinate {max}");
    }

    #[test]
    fn identity_corruption_is_identity() {
        let sys = van_der_pol::<f64>(0.5);
        let traj = rk4_simulate(&sys, &[1.0, 0.0], 2.0, 64).unwrap();
        let c = corrupt(&traj, &CorruptionSpec { rho: 0.0, gamma: 0.0, seed: 1 }).unwrap();
        assert_eq!(c.channels.len(), 2);
        for d in 0..2 {
            assert_eq!(c.channels[d].times, traj.times);
            assert_eq!(c.channels[d].values, traj.channel(d));
        }
    }

    #[test]
    fn corruption_preserves_ordering_and_shares_mask() {
        let sys = lorenz::<f64>(10.0, 28.0, 8.0 / 3.0);
        let traj = rk4_simulate(&sys, &[2.3, 8.1, 12.4], 2.0, 256).unwrap();
        let c = corrupt(&traj, &CorruptionSpec { rho: 0.5, gamma: 0.05, seed: 3 }).unwrap();
        let kept_times: Vec<f64> = traj
            .times
            .iter()
            .zip(&c.kept)
            .filter(|(_, &k)| k)
            .map(|(&t, _)| t)
            .collect();
        for ch in &c.channels {
            assert_eq!(ch.times, kept_times);
        }
    }

    #[test]
    fn multiplicative_noise_level_matches_gamma() {
        let sys = DynamicalSystem::new("unit", 1, vec![1.0], 1.0, |_t, _x| vec![0.0]);
        let traj = rk4_simulate(&sys, &[1.0], 1.0, 512).unwrap();
        let mut devs = Vec::new();
        for seed in 0..40 {
            let c = corrupt(&traj, &CorruptionSpec { rho: 0.0, gamma: 0.05, seed }).unwrap();
            devs.extend(c.channels[0].values.iter().map(|&y| y - 1.0));
        }
        let n = devs.len() as f64;
        let var = devs.iter().map(|d| d * d).sum::<f64>() / n;
        let std = var.sqrt();
        assert!((std - 0.05).abs() / 0.05 < 0.10, "std {std}");
    }
}
