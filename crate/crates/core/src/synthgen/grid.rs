//! Observation-grid sampling: point-wise and temporal missing patterns.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Minimum number of observations a grid may carry; sparser grids are
/// resampled.
pub const L_MIN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GridScheme {
    Regular { stride: usize },
    Irregular { survival_prob: f64 },
}

/// Strictly increasing fine-grid indices of the observed points, plus an
/// optional contiguous removed range for temporal patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationGrid {
    pub indices: Vec<usize>,
    pub scheme: GridScheme,
    /// Inclusive fine-grid index range of the removed observations.
    pub gap: Option<(usize, usize)>,
}

impl ObservationGrid {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn regular_indices(fine_grid_len: usize, stride: usize) -> Vec<usize> {
    (0..fine_grid_len).step_by(stride).collect()
}

/// Bernoulli survival mask, resampled until at least `L_MIN` points remain.
/// Only the mask is redrawn, so conditioned on the survival probability the
/// accepted count follows the truncated binomial law.
fn bernoulli_indices(fine_grid_len: usize, p: f64, rng: &mut impl Rng) -> Vec<usize> {
    loop {
        let idx: Vec<usize> = (0..fine_grid_len).filter(|_| rng.gen::<f64>() < p).collect();
        if idx.len() >= L_MIN {
            return idx;
        }
    }
}

/// Point-wise grids: regular strides U{1..16} and Bernoulli masks with
/// survival probability from {0.0625, 0.25, 0.5} (probabilities
/// {0.5, 0.25, 0.25}), the two schemes equally likely.
pub fn sample_pointwise(fine_grid_len: usize, rng: &mut impl Rng) -> ObservationGrid {
    if rng.gen::<bool>() {
        let stride = rng.gen_range(1..=16usize);
        let mut indices = regular_indices(fine_grid_len, stride);
        // tiny fine grids could undershoot L_MIN; widen by halving the stride
        let mut s = stride;
        while indices.len() < L_MIN && s > 1 {
            s /= 2;
            indices = regular_indices(fine_grid_len, s.max(1));
        }
        ObservationGrid { indices, scheme: GridScheme::Regular { stride }, gap: None }
    } else {
        let u: f64 = rng.gen();
        let p = if u < 0.5 {
            0.0625
        } else if u < 0.75 {
            0.25
        } else {
            0.5
        };
        ObservationGrid {
            indices: bernoulli_indices(fine_grid_len, p, rng),
            scheme: GridScheme::Irregular { survival_prob: p },
            gap: None,
        }
    }
}

/// Sizes of the four observed sets for `n` surviving observations
/// (remainder spread left to right) and the half-open range of removed
/// observation positions when the gap sits after `sets_left` sets.
pub fn temporal_partition(n: usize, gap_len: usize, sets_left: usize) -> ([usize; 4], (usize, usize)) {
    debug_assert!((1..=3).contains(&sets_left));
    let base = n / 4;
    let rem = n % 4;
    let mut counts = [base; 4];
    for c in counts.iter_mut().take(rem) {
        *c += 1;
    }
    let before: usize = counts.iter().take(sets_left).sum();
    (counts, (before, before + gap_len))
}

/// Temporal grids: a point-wise step (stride U{1..4} or Bernoulli(0.5),
/// equally likely) followed by removal of a contiguous run of 10-30
/// observations whose position is drawn among the three interior slots;
/// the remaining observations form four contiguous equal-count sets.
pub fn sample_temporal(fine_grid_len: usize, rng: &mut impl Rng) -> ObservationGrid {
    loop {
        let (scheme, observed) = if rng.gen::<bool>() {
            let stride = rng.gen_range(1..=4usize);
            (GridScheme::Regular { stride }, regular_indices(fine_grid_len, stride))
        } else {
            (
                GridScheme::Irregular { survival_prob: 0.5 },
                bernoulli_indices(fine_grid_len, 0.5, rng),
            )
        };
        let gap_len = rng.gen_range(10..=30usize);
        if observed.len() < gap_len + 4 * L_MIN {
            continue;
        }
        let sets_left = rng.gen_range(1..=3usize);
        let n = observed.len() - gap_len;
        let (_counts, (lo, hi)) = temporal_partition(n, gap_len, sets_left);
        let gap = (observed[lo], observed[hi - 1]);
        let mut indices = Vec::with_capacity(n);
        indices.extend_from_slice(&observed[..lo]);
        indices.extend_from_slice(&observed[hi..]);
        return ObservationGrid { indices, scheme, gap: Some(gap) };
    }
}
