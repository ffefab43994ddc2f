//! Decoupled-weight-decay adaptive-moment optimizer and learning-rate
//! schedules.

use crate::params::ParameterStore;
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant { lr: f64 },
    CosineAnneal { lr_hi: f64, lr_lo: f64, epochs: usize },
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::CosineAnneal { lr_hi, lr_lo, epochs } => {
                if epochs <= 1 {
                    return lr_hi;
                }
                let phase = epoch.min(epochs - 1) as f64 / (epochs - 1) as f64;
                lr_lo + 0.5 * (lr_hi - lr_lo) * (1.0 + (std::f64::consts::PI * phase).cos())
            }
        }
    }
}

/// AdamW: bias-corrected first/second moments with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<F: Real> {
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    pub weight_decay: F,
    pub step_count: u64,
    pub m: ParameterStore<F>,
    pub v: ParameterStore<F>,
}

impl<F: Real> AdamW<F> {
    pub fn new(params: &ParameterStore<F>, weight_decay: f64) -> Self {
        Self {
            beta1: F::of(0.9),
            beta2: F::of(0.999),
            eps: F::of(1e-8),
            weight_decay: F::of(weight_decay),
            step_count: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// Resume from checkpointed moments.
    pub fn from_state(
        m: ParameterStore<F>,
        v: ParameterStore<F>,
        step_count: u64,
        weight_decay: f64,
    ) -> Self {
        Self {
            beta1: F::of(0.9),
            beta2: F::of(0.999),
            eps: F::of(1e-8),
            weight_decay: F::of(weight_decay),
            step_count,
            m,
            v,
        }
    }

    pub fn step(&mut self, params: &mut ParameterStore<F>, grads: &ParameterStore<F>, lr: F) {
        self.step_count += 1;
        let one = F::one();
        let b1 = self.beta1;
        let b2 = self.beta2;
        let t = self.step_count as i32;
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        for slot in 0..params.len() {
            let g = grads.get(slot);
            let m = self.m.get_mut(slot);
            for (mi, &gi) in m.data.iter_mut().zip(&g.data) {
                *mi = b1 * *mi + (one - b1) * gi;
            }
            let v = self.v.get_mut(slot);
            for (vi, &gi) in v.data.iter_mut().zip(&g.data) {
                *vi = b2 * *vi + (one - b2) * gi * gi;
            }
            let m = self.m.get(slot);
            let v = self.v.get(slot);
            let p = params.get_mut(slot);
            for i in 0..p.data.len() {
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                let update = mhat / (vhat.sqrt() + self.eps) + self.weight_decay * p.data[i];
                p.data[i] = p.data[i] - lr * update;
            }
        }
    }
}

/// Scale gradients down to the given global norm when they exceed it;
/// returns the pre-clip norm.
pub fn clip_global_norm<F: Real>(grads: &mut ParameterStore<F>, max_norm: F) -> F {
    let norm = grads.global_norm();
    if norm > max_norm && norm > F::zero() {
        grads.scale_in_place(max_norm / norm);
    }
    norm
}
