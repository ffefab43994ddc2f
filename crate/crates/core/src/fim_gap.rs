//! Temporal-missing-pattern model: set splitting, local scale statistics,
//! gap-context estimation through set-sequence attention over frozen
//! recognition-model embeddings, and continuous stitching across the gap.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::fim_local::{
    compose_windows, normalize, ContextVector, FimLocal, NormalizationParams, Windowing,
};
use crate::params::{Binding, ParameterStore};
use crate::recnet::{Attention, DropoutCtx, Ffn, NetConfig};
use crate::scalar::Real;
use crate::series::TimeSeries;
use crate::tensor::Tensor;

/// Number of sequential sets a series is split into (one of them the gap).
pub const K_SETS: usize = 5;

/// Minimum observations per observed set for real-data inference.
pub const L_MIN_SET: usize = 2;

/// Floor for degenerate single-observation time ranges.
pub const TAU_DIFF_FLOOR: f64 = 1e-6;

/// Ordered split of a series into `K_SETS` sets, the `q`th being the gap.
#[derive(Debug, Clone, PartialEq)]
pub struct SetSplit<F> {
    pub k: usize,
    /// 1-based position of the gap among the K sets.
    pub q: usize,
    /// Inclusive observation-index ranges of the K-1 observed sets, in
    /// temporal order.
    pub observed: Vec<(usize, usize)>,
    /// Gap time interval.
    pub gap: (F, F),
}

impl<F: Real> SetSplit<F> {
    /// Number of observed sets before the gap.
    pub fn left_count(&self) -> usize {
        self.q - 1
    }

    pub fn right_count(&self) -> usize {
        self.k - self.q
    }
}

fn equal_ranges(lo: usize, count: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = count / parts;
    let rem = count % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = lo;
    for i in 0..parts {
        let c = base + usize::from(i < rem);
        out.push((start, start + c - 1));
        start += c;
    }
    out
}

/// Partition the observations around an interior gap into four contiguous
/// equal-count sets; the number of sets left of the gap follows the share
/// of observations on that side.
pub fn split_sets<F: Real>(series: &TimeSeries<F>, gap: (F, F)) -> Result<SetSplit<F>> {
    let obs = series.observed();
    let (g0, g1) = gap;
    if !(g0 < g1) {
        return Err(Error::Series("gap interval is empty or inverted".into()));
    }
    if obs.times.iter().any(|&t| t >= g0 && t <= g1) {
        return Err(Error::Series("observations lie inside the gap interval".into()));
    }
    let a = obs.times.iter().filter(|&&t| t < g0).count();
    let b = obs.len() - a;
    if a == 0 || b == 0 {
        return Err(Error::Series("gap touches a series endpoint".into()));
    }
    let n = a + b;
    if n < (K_SETS - 1) * L_MIN_SET {
        return Err(Error::Series(format!(
            "too few observations outside the gap: {n} < {}",
            (K_SETS - 1) * L_MIN_SET
        )));
    }
    // share of sets on the left, at least one per side
    let mut k_left = ((4.0 * a as f64 / n as f64).round() as usize).clamp(1, 3);
    while k_left > 1 && a < L_MIN_SET * k_left {
        k_left -= 1;
    }
    while k_left < 3 && b < L_MIN_SET * (4 - k_left) {
        k_left += 1;
    }
    if a < L_MIN_SET * k_left || b < L_MIN_SET * (4 - k_left) {
        return Err(Error::Series("observed sets would fall below the supported minimum".into()));
    }
    let mut observed = equal_ranges(0, a, k_left);
    observed.extend(equal_ranges(a, b, 4 - k_left));
    Ok(SetSplit { k: K_SETS, q: k_left + 1, observed, gap })
}

/// The nine position/local-scale statistics of one observed set:
/// `[y_min, y_max, y_range, y_first, y_last, y_diff, t_first, t_last,
/// t_diff]`, with the time range floored for single-observation sets.
pub fn scale_stats<F: Real>(values: &[F], times: &[F]) -> Result<[F; 9]> {
    if values.is_empty() {
        return Err(Error::Series("scale statistics of an empty set".into()));
    }
    let mut y_min = values[0];
    let mut y_max = values[0];
    for &y in values {
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    let y_first = values[0];
    let y_last = *values.last().unwrap();
    let t_first = times[0];
    let t_last = *times.last().unwrap();
    let t_diff = (t_last - t_first).max(F::of(TAU_DIFF_FLOOR));
    Ok([
        y_min,
        y_max,
        y_max - y_min,
        y_first,
        y_last,
        y_last - y_first,
        t_first,
        t_last,
        t_diff,
    ])
}

/// Trainable extension parameters: scale embedding, gap token, positional
/// encodings and the set-sequence attention stack.
pub struct FimGap<F: Real> {
    pub config: NetConfig,
    pub params: ParameterStore<F>,
    phi8: Ffn,
    gap_token: usize,
    psi2: Attention,
}

impl<F: Real> FimGap<F> {
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterStore::new();
        let d = config.embed_dim;
        let phi8 = Ffn::linear(&mut params, "phi8", 9, d, seed);
        let gap_token = crate::params::init_uniform(&mut params, "gap.token", &[1, d], d, seed);
        let psi2 = Attention::init(
            &mut params,
            "psi2",
            d,
            config.attn_heads,
            config.attn_layers,
            config.ffn_width,
            K_SETS,
            seed,
        );
        Ok(Self { config, params, phi8, gap_token, psi2 })
    }

    pub fn from_params(config: NetConfig, params: ParameterStore<F>) -> Result<Self> {
        let fresh = Self::init(config, 0)?;
        if fresh.params.len() != params.len() {
            return Err(Error::Weights(format!(
                "parameter count mismatch: expected {}, got {}",
                fresh.params.len(),
                params.len()
            )));
        }
        for ((en, et), (gn, gt)) in fresh.params.iter().zip(params.iter()) {
            if en != gn || et.shape != gt.shape {
                return Err(Error::Weights(format!(
                    "parameter layout mismatch: expected {en:?} {:?}, got {gn:?} {:?}",
                    et.shape, gt.shape
                )));
            }
        }
        Ok(Self { params, ..fresh })
    }

    /// Context vector for the gap set: frozen per-set embeddings fused with
    /// embedded scale statistics, a learnable token inserted at position
    /// `q`, positional encodings over the K slots, and the attention output
    /// read at the gap slot.
    pub fn gap_context_on_tape(
        &self,
        tape: &mut Tape<F>,
        bind: &Binding,
        u_sets: &[Vec<F>],
        stats: &[[F; 9]],
        q: usize,
        mut dropout: Option<DropoutCtx<'_>>,
    ) -> Var {
        debug_assert_eq!(u_sets.len(), K_SETS - 1);
        debug_assert_eq!(stats.len(), K_SETS - 1);
        let d = self.config.embed_dim;
        let mut rows: Vec<Var> = Vec::with_capacity(K_SETS);
        let mut obs_iter = u_sets.iter().zip(stats.iter());
        for slot in 1..=K_SETS {
            if slot == q {
                rows.push(bind.var(self.gap_token));
            } else {
                let (u, s) = obs_iter.next().expect("set count mismatch");
                debug_assert_eq!(u.len(), d);
                let uvar = tape.constant(Tensor::matrix(1, d, u.clone()));
                let svar = tape.constant(Tensor::matrix(1, 9, s.to_vec()));
                let semb = self.phi8.forward(tape, bind, svar, None);
                rows.push(tape.add(uvar, semb));
            }
        }
        let tokens = tape.stack_rows(&rows);
        let out = self.psi2.forward(tape, bind, tokens, 0, dropout.take());
        tape.row(out, q - 1)
    }

    /// Values-only gap context.
    pub fn gap_context(
        &self,
        u_sets: &[Vec<F>],
        stats: &[[F; 9]],
        q: usize,
    ) -> ContextVector<F> {
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape, false);
        let u = self.gap_context_on_tape(&mut tape, &bind, u_sets, stats, q, None);
        ContextVector { u: tape.value(u).data.clone() }
    }
}

/// Frozen-encoder pass over the observed sets of a split: per-set local
/// normalization, branch-net embedding and scale statistics. Inputs are in
/// the globally-normalized frame.
pub fn encode_sets<F: Real>(
    local: &FimLocal<F>,
    series_norm: &TimeSeries<F>,
    split: &SetSplit<F>,
) -> Result<(Vec<Vec<F>>, Vec<[F; 9]>)> {
    let mut u_sets = Vec::with_capacity(split.observed.len());
    let mut stats = Vec::with_capacity(split.observed.len());
    for &(lo, hi) in &split.observed {
        let values = &series_norm.values[lo..=hi];
        let times = &series_norm.times[lo..=hi];
        stats.push(scale_stats(values, times)?);
        let sub = TimeSeries::new(times.to_vec(), values.to_vec())?;
        let (subn, _) = normalize(&sub)?;
        u_sets.push(local.encode_context(&subn.values, &subn.times).u);
    }
    Ok((u_sets, stats))
}

/// Gap inference output: queryable derivative estimate along the gap, plus
/// the normalization bookkeeping to renormalize it.
pub struct GapRecognition<'m, F: Real> {
    local: &'m FimLocal<F>,
    pub u_q: ContextVector<F>,
    /// Global normalization of the full series.
    pub norm: NormalizationParams<F>,
    /// Gap interval in the globally-normalized time frame.
    pub gap_norm: (F, F),
    /// Gap interval on the original scale.
    pub gap: (F, F),
}

impl<F: Real> GapRecognition<'_, F> {
    /// Map an original-scale time inside the gap to the gap-local frame.
    pub fn local_time(&self, t: F) -> F {
        let tg = self.norm.norm_time(t);
        (tg - self.gap_norm.0) / (self.gap_norm.1 - self.gap_norm.0)
    }

    /// Derivative estimate at original-scale times inside the gap, fully
    /// renormalized (gap-local time scale, then the global frame).
    pub fn f_at_many(&self, ts: &[F]) -> Result<Vec<(F, F)>> {
        for &t in ts {
            if t < self.gap.0 - F::of(1e-12) || t > self.gap.1 + F::of(1e-12) {
                return Err(Error::Imputation(format!(
                    "query time {t} outside the gap interval"
                )));
            }
        }
        let local_ts: Vec<F> = ts.iter().map(|&t| self.local_time(t)).collect();
        let dg = self.gap_norm.1 - self.gap_norm.0;
        let two = F::of(2.0);
        // gap-local renormalization has unit value range (no observations
        // in the gap), so only the time scale enters; the global value and
        // time scales follow.
        let global_scale = self.norm.dy() / self.norm.dtau();
        Ok(self
            .local
            .query_many(&self.u_q, &local_ts)
            .into_iter()
            .map(|(m, lv)| {
                let m1 = m / dg;
                let lv1 = lv + two * (F::one() / dg).ln();
                (m1 * global_scale, lv1 + two * global_scale.ln())
            })
            .collect())
    }

    pub fn f_at(&self, t: F) -> Result<(F, F)> {
        Ok(self.f_at_many(&[t])?[0])
    }
}

/// Run the frozen-encoder + gap-attention pipeline on a series with a gap.
/// Observations inside the gap interval (if any) are dropped first.
pub fn infer_gap<'m, F: Real>(
    gap_model: &FimGap<F>,
    local: &'m FimLocal<F>,
    series: &TimeSeries<F>,
    gap: (F, F),
) -> Result<GapRecognition<'m, F>> {
    let cleaned = series.without_interval(gap.0, gap.1);
    let split = split_sets(&cleaned, gap)?;
    let (series_norm, norm) = normalize(&cleaned)?;
    let (u_sets, stats) = encode_sets(local, &series_norm, &split)?;
    let u_q = gap_model.gap_context(&u_sets, &stats, split.q);
    let gap_norm = (norm.norm_time(gap.0), norm.norm_time(gap.1));
    Ok(GapRecognition { local, u_q, norm, gap_norm, gap })
}

/// Weighted temporal interpolation across the gap: extend the left
/// trajectory forward and the right trajectory backward by integrating the
/// gap derivative, then blend with weights that pin the boundary values.
/// `f_gap` holds derivative values on a uniform grid over `[gap.0, gap.1]`;
/// returns the stitched values on that grid.
pub fn stitch<F: Real>(x_left_boundary: F, x_right_boundary: F, f_gap: &[F], gap: (F, F)) -> Vec<F> {
    let m = f_gap.len();
    debug_assert!(m >= 2);
    let (g0, g1) = gap;
    let dg = g1 - g0;
    let dt = dg / F::of_usize(m - 1);
    let half = F::of(0.5);
    // cumulative integral of the gap derivative from the left edge
    let mut cum = Vec::with_capacity(m);
    cum.push(F::zero());
    for i in 1..m {
        let prev = cum[i - 1];
        cum.push(prev + (f_gap[i - 1] + f_gap[i]) * half * dt);
    }
    let total = cum[m - 1];
    (0..m)
        .map(|i| {
            let t = F::of_usize(i) * dt;
            let x_l = x_left_boundary + cum[i];
            let x_r = x_right_boundary - (total - cum[i]);
            let w_l = (dg - t) / dg;
            let w_r = t / dg;
            w_l * x_l + w_r * x_r
        })
        .collect()
}

/// Full gap imputation over a dense grid covering the whole series span:
/// windowed composition on each side of the gap, gap-context inference
/// inside it, and the continuous stitch across the boundaries.
#[derive(Debug, Clone)]
pub struct GapImputation<F> {
    pub t: Vec<F>,
    pub x_hat: Vec<F>,
    pub f_hat: Vec<F>,
    pub f_log_var: Vec<F>,
    pub gap: (F, F),
}

pub fn impute_gap<F: Real>(
    gap_model: &FimGap<F>,
    local: &FimLocal<F>,
    series: &TimeSeries<F>,
    gap: (F, F),
    grid_len: usize,
) -> Result<GapImputation<F>> {
    let cleaned = series.without_interval(gap.0, gap.1);
    let split = split_sets(&cleaned, gap)?;
    let rec = infer_gap(gap_model, local, series, gap)?;

    let a_end = split.observed[split.left_count() - 1].1;
    let left_series = TimeSeries::new(
        cleaned.times[..=a_end].to_vec(),
        cleaned.values[..=a_end].to_vec(),
    )?;
    let right_series = TimeSeries::new(
        cleaned.times[a_end + 1..].to_vec(),
        cleaned.values[a_end + 1..].to_vec(),
    )?;
    let left = compose_windows(local, &left_series, Windowing::ByCount(split.left_count()))?;
    let right = compose_windows(local, &right_series, Windowing::ByCount(split.right_count()))?;

    // derivative along the gap on its own dense grid
    let m = (grid_len / 4).max(64);
    let (g0, g1) = gap;
    let gdt = (g1 - g0) / F::of_usize(m - 1);
    let gap_grid: Vec<F> = (0..m).map(|i| g0 + gdt * F::of_usize(i)).collect();
    let gap_f = rec.f_at_many(&gap_grid)?;
    let f_gap: Vec<F> = gap_f.iter().map(|&(f, _)| f).collect();
    let x_l0 = left.x_at(g0);
    let x_r1 = right.x_at(g1);
    let stitched = stitch(x_l0, x_r1, &f_gap, gap);
    let dg = g1 - g0;

    let span = (left.span.0, right.span.1);
    let step = (span.1 - span.0) / F::of_usize(grid_len - 1);
    let mut t = Vec::with_capacity(grid_len);
    let mut x_hat = Vec::with_capacity(grid_len);
    let mut f_hat = Vec::with_capacity(grid_len);
    let mut f_log_var = Vec::with_capacity(grid_len);
    for i in 0..grid_len {
        let ti = span.0 + step * F::of_usize(i);
        t.push(ti);
        if ti < g0 {
            x_hat.push(left.x_at(ti));
            let (f, lv) = left.f_at(ti);
            f_hat.push(f);
            f_log_var.push(lv);
        } else if ti > g1 {
            x_hat.push(right.x_at(ti));
            let (f, lv) = right.f_at(ti);
            f_hat.push(f);
            f_log_var.push(lv);
        } else {
            x_hat.push(crate::series::interp_linear(&gap_grid, &stitched, ti));
            let (f, lv) = rec.f_at(ti)?;
            // derivative of the blend: the weight-variation term shifts f
            // by the running mismatch between the two extensions
            let idx = ((ti - g0) / gdt).to_f64x().round() as usize;
            let idx = idx.min(m - 1);
            let cum: F = if idx == 0 {
                F::zero()
            } else {
                f_gap[..=idx]
                    .windows(2)
                    .map(|w| (w[0] + w[1]) * F::of(0.5) * gdt)
                    .sum()
            };
            let total: F = f_gap.windows(2).map(|w| (w[0] + w[1]) * F::of(0.5) * gdt).sum();
            let x_l = x_l0 + cum;
            let x_r = x_r1 - (total - cum);
            f_hat.push(f + (x_r - x_l) / dg);
            f_log_var.push(lv);
        }
    }
    if x_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Imputation("non-finite stitched trajectory".into()));
    }
    Ok(GapImputation { t, x_hat, f_hat, f_log_var, gap })
}
