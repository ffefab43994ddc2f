//! Named, shaped, ordered collection of learnable tensors.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::scalar::Real;
use crate::tensor::Tensor;
use rand::Rng;
use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct ParameterStore<F> {
    entries: Vec<(String, Tensor<F>)>,
    index: HashMap<String, usize>,
}

impl<F: Real> Default for ParameterStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParameterStore<F> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), index: HashMap::new() }
    }

    /// Register a tensor under a unique name; returns its slot index.
    pub fn insert(&mut self, name: &str, tensor: Tensor<F>) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name: {name}"
        );
        self.entries.push((name.to_string(), tensor));
        let slot = self.entries.len() - 1;
        self.index.insert(name.to_string(), slot);
        slot
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn get(&self, slot: usize) -> &Tensor<F> {
        &self.entries[slot].1
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Tensor<F> {
        &mut self.entries[slot].1
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.entries[slot].0
    }

    pub fn slot_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<F>> {
        self.slot_of(name).map(|s| self.get(s))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Concatenate all tensors into one flat vector (entry order).
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.total_count());
        for (_, t) in &self.entries {
            out.extend_from_slice(&t.data);
        }
        out
    }

    /// Inverse of [`Self::flatten`]: shapes are taken from the store
    /// itself.
    pub fn unflatten(&mut self, flat: &[F]) -> Result<()> {
        if flat.len() != self.total_count() {
            return Err(Error::Shape(format!(
                "unflatten: expected {} values, got {}",
                self.total_count(),
                flat.len()
            )));
        }
        let mut off = 0;
        for (_, t) in &mut self.entries {
            let n = t.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Zero-valued clone with identical names and shapes; used for gradient
    /// and optimizer-moment accumulators.
    pub fn zeros_like(&self) -> Self {
        let mut s = Self::new();
        for (n, t) in &self.entries {
            s.insert(n, Tensor::zeros(&t.shape));
        }
        s
    }

    pub fn add_scaled(&mut self, other: &Self, c: F) {
        debug_assert_eq!(self.len(), other.len());
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x += y * c;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    /// Global Euclidean norm over every entry.
    pub fn global_norm(&self) -> F {
        self.entries
            .iter()
            .map(|(_, t)| t.norm_sq())
            .fold(F::zero(), |a, b| a + b)
            .sqrt()
    }

    pub fn scale_in_place(&mut self, c: F) {
        for (_, t) in &mut self.entries {
            for x in &mut t.data {
                *x *= c;
            }
        }
    }

    /// Bind every parameter onto a tape. Trainable stores become gradient
    /// leaves; frozen stores are inserted as constants so gradients flow
    /// through them but are never accumulated for them.
    pub fn bind(&self, tape: &mut Tape<F>, trainable: bool) -> Binding {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Binding { vars }
    }

    /// Collect the gradients accumulated on `tape` for a binding of this
    /// store, adding them into `acc`.
    pub fn accumulate_grads(&self, tape: &Tape<F>, binding: &Binding, acc: &mut Self) {
        debug_assert_eq!(acc.len(), self.len());
        for (slot, var) in binding.vars.iter().enumerate() {
            if let Some(g) = tape.grad(*var) {
                let t = acc.get_mut(slot);
                for (x, &y) in t.data.iter_mut().zip(&g.data) {
                    *x += y;
                }
            }
        }
    }
}

/// Tape variables aligned with the slots of a [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, slot: usize) -> Var {
        self.vars[slot]
    }
}

/// Fan-in uniform initializer: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_uniform<F: Real>(
    store: &mut ParameterStore<F>,
    name: &str,
    shape: &[usize],
    fan_in: usize,
    seed: u64,
) -> usize {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut rng = rng::derive(seed, &[stream::INIT, store.len() as u64]);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| F::of(rng.gen_range(-bound..bound)))
        .collect();
    store.insert(name, Tensor::new(data, shape.to_vec()))
}

pub fn init_zeros<F: Real>(store: &mut ParameterStore<F>, name: &str, shape: &[usize]) -> usize {
    store.insert(name, Tensor::zeros(shape))
}
