//! Finite-difference gradient verification.
//!
//! The oracle only evaluates the loss forward — a handful of times per
//! probed coordinate — and never touches the tape's backward pass, so it
//! stays independent of the implementation it checks.

use crate::autodiff::{Tape, Var};
use crate::params::{Binding, ParameterStore};
use crate::recnet::grad;
use crate::rng;
use rand::Rng;

/// Numerical policy for a finite-difference sweep.
pub struct FdConfig {
    /// Step: `h = h_scale * max(1, |theta|)`.
    pub h_scale: f64,
    /// Denominator floor for the relative error; coordinates whose
    /// gradients sit below it are compared at this absolute scale.
    pub denom_floor: f64,
    /// Skip coordinates whose forward and backward one-sided differences
    /// disagree by more than this fraction of the gradient scale: central
    /// differences are meaningless across a kink (SeLU corners, absolute
    /// values), and the disagreement detects exactly that.
    pub kink_threshold: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { h_scale: 1e-5, denom_floor: 1e-6, kink_threshold: f64::INFINITY }
    }
}

/// Worst relative error between reverse-mode and central-difference
/// gradients over `n_coords` randomly chosen parameter coordinates.
pub fn max_rel_error_cfg(
    store: &ParameterStore<f64>,
    loss_fn: impl Fn(&mut Tape<f64>, &Binding) -> Var,
    n_coords: usize,
    probe_seed: u64,
    cfg: &FdConfig,
) -> f64 {
    let (f0, grads) = grad(store, &loss_fn);
    let eval = |s: &ParameterStore<f64>| {
        let mut tape = Tape::new();
        let bind = s.bind(&mut tape, false);
        let loss = loss_fn(&mut tape, &bind);
        tape.value(loss).item()
    };
    let mut r = rng::derive(probe_seed, &[0xFD]);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let mut attempts = 0usize;
    while checked < n_coords && attempts < 4 * n_coords {
        attempts += 1;
        let slot = r.gen_range(0..store.len());
        let i = r.gen_range(0..store.get(slot).len());
        let theta = store.get(slot).data[i];
        let h = cfg.h_scale * theta.abs().max(1.0);
        let mut plus = store.clone();
        plus.get_mut(slot).data[i] = theta + h;
        let mut minus = store.clone();
        minus.get_mut(slot).data[i] = theta - h;
        let fp = eval(&plus);
        let fm = eval(&minus);
        let fd = (fp - fm) / (2.0 * h);
        let ad = grads.get(slot).data[i];
        let scale = ad.abs().max(fd.abs()).max(cfg.denom_floor);
        if cfg.kink_threshold.is_finite() {
            let d_fwd = (fp - f0) / h;
            let d_bwd = (f0 - fm) / h;
            if (d_fwd - d_bwd).abs() > cfg.kink_threshold * scale {
                continue; // non-smooth segment, central difference invalid
            }
        }
        checked += 1;
        worst = worst.max((ad - fd).abs() / scale);
    }
    assert!(
        checked >= n_coords,
        "could not find {n_coords} smooth coordinates to probe ({checked} found)"
    );
    worst
}

/// Default-policy sweep used by the unit tests of the primitives.
pub fn max_rel_error(
    store: &ParameterStore<f64>,
    loss_fn: impl Fn(&mut Tape<f64>, &Binding) -> Var,
    n_coords: usize,
    probe_seed: u64,
) -> f64 {
    max_rel_error_cfg(store, loss_fn, n_coords, probe_seed, &FdConfig::default())
}

/// Assert the reverse-mode gradients agree with central differences.
pub fn check_store_gradients(
    store: &ParameterStore<f64>,
    loss_fn: impl Fn(&mut Tape<f64>, &Binding) -> Var,
    n_coords: usize,
    tol: f64,
    probe_seed: u64,
) {
    let worst = max_rel_error(store, loss_fn, n_coords, probe_seed);
    assert!(worst < tol, "gradient mismatch: max relative error {worst} >= {tol}");
}
