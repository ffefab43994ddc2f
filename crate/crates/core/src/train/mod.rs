//! Training loops for the two model stages plus the reconstruction
//! fine-tuning mode.
//!
//! All randomness (shuffling, dropout) is derived statelessly from
//! `(seed, epoch, record)`, so runs are bit-reproducible, resumable from a
//! checkpointed state, and independent of the worker-thread count: batches
//! are cut into fixed-size chunks whose gradients are reduced in chunk
//! order.

pub mod loss;
pub mod optim;

pub use loss::{
    gaussian_nll, loss_gap_value, loss_local_value, prepare_gap, prepare_local, LocalLossParts,
    PreparedGap, PreparedLocal,
};
pub use optim::{clip_global_norm, AdamW, LrSchedule};

use crate::error::{Error, Result};
use crate::fim_gap::FimGap;
use crate::fim_local::{self, FimLocal, Windowing};
use crate::params::ParameterStore;
use crate::recnet::{DropoutCtx, NetConfig};
use crate::rng::{self, stream};
use crate::scalar::Real;
use crate::series::TimeSeries;
use crate::synthgen::GenerationRecord;
use crate::tensor::Tensor;
use crate::autodiff::{LincombTerm, Tape};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Records per tape; fixed so gradient reduction order does not depend on
/// the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    LocalFim,
    GapFim,
    FineTune,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub net: NetConfig,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub grad_clip: f64,
    pub threads: usize,
    /// Window count for the fine-tuning stage.
    pub finetune_windows: usize,
}

impl TrainConfig {
    /// Desk-scale point-wise stage. The published setup (lr 1e-6, batch
    /// 1024, ~500 epochs) presumes a warm 20M-parameter model; a cold desk
    /// model needs a larger rate.
    pub fn desk_local(epochs: usize, seed: u64) -> Self {
        Self {
            stage: Stage::LocalFim,
            net: NetConfig::desk(),
            schedule: LrSchedule::Constant { lr: 1e-3 },
            weight_decay: 1e-4,
            batch_size: 64,
            epochs,
            seed,
            val_fraction: 0.1,
            grad_clip: 10.0,
            threads: 1,
            finetune_windows: 4,
        }
    }

    /// Desk-scale gap stage: cosine annealing, heavier decay.
    pub fn desk_gap(epochs: usize, seed: u64) -> Self {
        Self {
            stage: Stage::GapFim,
            net: NetConfig::desk(),
            schedule: LrSchedule::CosineAnneal { lr_hi: 1e-3, lr_lo: 1e-5, epochs },
            weight_decay: 1e-3,
            batch_size: 64,
            epochs,
            seed,
            val_fraction: 0.1,
            grad_clip: 10.0,
            threads: 1,
            finetune_windows: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        match self.schedule {
            LrSchedule::Constant { lr } if lr <= 0.0 => {
                return Err(Error::Config("learning rate must be positive".into()))
            }
            LrSchedule::CosineAnneal { lr_hi, lr_lo, .. } if lr_hi <= 0.0 || lr_lo <= 0.0 => {
                return Err(Error::Config("learning rates must be positive".into()))
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss_f_nll: f64,
    pub loss_euler: f64,
    pub loss_x0: f64,
    pub total: f64,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState<F: Real> {
    pub params: ParameterStore<F>,
    pub opt_m: ParameterStore<F>,
    pub opt_v: ParameterStore<F>,
    pub opt_step: u64,
    pub epoch: usize,
}

impl<F: Real> TrainState<F> {
    pub fn fresh(params: ParameterStore<F>) -> Self {
        let opt_m = params.zeros_like();
        let opt_v = params.zeros_like();
        Self { params, opt_m, opt_v, opt_step: 0, epoch: 0 }
    }
}

#[derive(Debug)]
pub struct TrainResult<F: Real> {
    pub state: TrainState<F>,
    /// Parameters with the best validation loss seen.
    pub best: ParameterStore<F>,
    pub best_val: f64,
    pub metrics: Vec<EpochMetrics>,
    /// Epoch at which a non-finite loss aborted training, if any; the state
    /// then carries the last good parameters.
    pub aborted_at: Option<usize>,
}

/// Run `f(0..n)` possibly on several threads, returning results in index
/// order.
fn map_ordered<R: Send>(n: usize, threads: usize, f: impl Fn(usize) -> R + Sync) -> Vec<R> {
    if threads <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results = std::sync::Mutex::new((0..n).map(|_| None).collect::<Vec<Option<R>>>());
    std::thread::scope(|scope| {
        for _ in 0..threads.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("worker failed to produce a result"))
        .collect()
}

fn shuffled_indices(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut r = rng::derive(seed, &[stream::SHUFFLE, epoch as u64]);
    idx.shuffle(&mut r);
    idx
}

fn is_validation(seed: u64, record_index: u64, fraction: f64) -> bool {
    rng::unit_hash(seed, &[stream::SPLIT, record_index]) < fraction
}

struct BatchGrads<F: Real> {
    grads: ParameterStore<F>,
    parts: LocalLossParts<f64>,
    count: usize,
}

fn local_batch_grads<F: Real>(
    model: &FimLocal<F>,
    batch: &[&PreparedLocal<F>],
    cfg: &TrainConfig,
    epoch: usize,
) -> BatchGrads<F> {
    let chunks: Vec<&[&PreparedLocal<F>]> = batch.chunks(CHUNK).collect();
    let results = map_ordered(chunks.len(), cfg.threads, |ci| {
        let chunk = chunks[ci];
        let mut tape = Tape::new();
        let bind = model.params.bind(&mut tape, true);
        let mut total = None;
        let mut parts = LocalLossParts::<f64>::default();
        for prep in chunk {
            let mut dr = rng::derive(cfg.seed, &[stream::DROPOUT, epoch as u64, prep.seed]);
            let ctx = if cfg.net.dropout > 0.0 {
                Some(DropoutCtx { rng: &mut dr, p: cfg.net.dropout })
            } else {
                None
            };
            let (t, p) = loss::loss_local_on_tape(model, &mut tape, &bind, prep, ctx);
            parts.f_nll += tape.value(p[0]).item().to_f64x();
            parts.euler += tape.value(p[1]).item().to_f64x();
            parts.x0_nll += tape.value(p[2]).item().to_f64x();
            total = Some(match total {
                None => t,
                Some(acc) => tape.add(acc, t),
            });
        }
        let mut grads = model.params.zeros_like();
        if let Some(t) = total {
            tape.backward(t);
            model.params.accumulate_grads(&tape, &bind, &mut grads);
        }
        (grads, parts, chunk.len())
    });
    let mut grads = model.params.zeros_like();
    let mut parts = LocalLossParts::<f64>::default();
    let mut count = 0;
    for (g, p, c) in results {
        grads.add_scaled(&g, F::one());
        parts.f_nll += p.f_nll;
        parts.euler += p.euler;
        parts.x0_nll += p.x0_nll;
        count += c;
    }
    BatchGrads { grads, parts, count }
}

fn local_eval<F: Real>(
    model: &FimLocal<F>,
    set: &[&PreparedLocal<F>],
    threads: usize,
) -> LocalLossParts<f64> {
    let results = map_ordered(set.len(), threads, |i| {
        let p = loss_local_value(model, set[i]);
        LocalLossParts {
            f_nll: p.f_nll.to_f64x(),
            euler: p.euler.to_f64x(),
            x0_nll: p.x0_nll.to_f64x(),
        }
    });
    let n = set.len().max(1) as f64;
    let mut acc = LocalLossParts::<f64>::default();
    for p in results {
        acc.f_nll += p.f_nll;
        acc.euler += p.euler;
        acc.x0_nll += p.x0_nll;
    }
    LocalLossParts { f_nll: acc.f_nll / n, euler: acc.euler / n, x0_nll: acc.x0_nll / n }
}

fn push_metrics(
    metrics: &mut Vec<EpochMetrics>,
    epoch: usize,
    split: &str,
    parts: &LocalLossParts<f64>,
) {
    metrics.push(EpochMetrics {
        epoch,
        split: split.to_string(),
        loss_f_nll: parts.f_nll,
        loss_euler: parts.euler,
        loss_x0: parts.x0_nll,
        total: parts.f_nll + parts.euler + parts.x0_nll,
    });
}

/// Supervised training of the point-wise recognition model.
pub fn train_local<F: Real>(
    cfg: &TrainConfig,
    records: &[GenerationRecord<F>],
    resume: Option<TrainState<F>>,
    mut epoch_hook: Option<&mut dyn FnMut(&TrainState<F>, &[EpochMetrics]) -> Result<()>>,
) -> Result<(FimLocal<F>, TrainResult<F>)> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Training("empty dataset".into()));
    }
    let prepared: Vec<PreparedLocal<F>> = {
        let res: Vec<Result<PreparedLocal<F>>> =
            map_ordered(records.len(), cfg.threads, |i| prepare_local(&records[i]));
        res.into_iter().collect::<Result<_>>()?
    };
    let (train_set, val_set): (Vec<&PreparedLocal<F>>, Vec<&PreparedLocal<F>>) = prepared
        .iter()
        .partition(|p| !is_validation(cfg.seed, p.index, cfg.val_fraction));
    if train_set.is_empty() {
        return Err(Error::Training("validation split left no training records".into()));
    }

    let state = match resume {
        Some(s) => s,
        None => TrainState::fresh(FimLocal::<F>::init(cfg.net, cfg.seed)?.params),
    };
    let mut model = FimLocal::from_params(cfg.net, state.params)?;
    let mut opt = AdamW::from_state(state.opt_m, state.opt_v, state.opt_step, cfg.weight_decay);
    let start_epoch = state.epoch;

    let mut metrics = Vec::new();
    let mut best = model.params.clone();
    let mut best_val = f64::INFINITY;
    let mut aborted_at = None;

    'epochs: for epoch in start_epoch..cfg.epochs {
        let last_good = model.params.clone();
        let lr = F::of(cfg.schedule.at(epoch));
        let order = shuffled_indices(train_set.len(), cfg.seed, epoch);
        let mut train_parts = LocalLossParts::<f64>::default();
        let mut seen = 0usize;
        for batch_idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedLocal<F>> = batch_idx.iter().map(|&i| train_set[i]).collect();
            let mut bg = local_batch_grads(&model, &batch, cfg, epoch);
            let scale = F::one() / F::of_usize(bg.count);
            bg.grads.scale_in_place(scale);
            let batch_loss = (bg.parts.f_nll + bg.parts.euler + bg.parts.x0_nll) / bg.count as f64;
            if !batch_loss.is_finite() || !bg.grads.all_finite() {
                log::error!("non-finite loss at epoch {epoch}; keeping last good parameters");
                model = FimLocal::from_params(cfg.net, last_good)?;
                aborted_at = Some(epoch);
                break 'epochs;
            }
            clip_global_norm(&mut bg.grads, F::of(cfg.grad_clip));
            opt.step(&mut model.params, &bg.grads, lr);
            model = FimLocal::from_params(cfg.net, model.params)?;
            train_parts.f_nll += bg.parts.f_nll;
            train_parts.euler += bg.parts.euler;
            train_parts.x0_nll += bg.parts.x0_nll;
            seen += bg.count;
        }
        let n = seen.max(1) as f64;
        let train_mean = LocalLossParts {
            f_nll: train_parts.f_nll / n,
            euler: train_parts.euler / n,
            x0_nll: train_parts.x0_nll / n,
        };
        push_metrics(&mut metrics, epoch, "train", &train_mean);
        if !val_set.is_empty() {
            let val = local_eval(&model, &val_set, cfg.threads);
            push_metrics(&mut metrics, epoch, "val", &val);
            let total = val.f_nll + val.euler + val.x0_nll;
            if total < best_val {
                best_val = total;
                best = model.params.clone();
            }
        } else {
            best = model.params.clone();
        }
        if let Some(hook) = epoch_hook.as_deref_mut() {
            let snapshot = TrainState {
                params: model.params.clone(),
                opt_m: opt.m.clone(),
                opt_v: opt.v.clone(),
                opt_step: opt.step_count,
                epoch: epoch + 1,
            };
            hook(&snapshot, &metrics)?;
        }
    }

    let final_state = TrainState {
        params: model.params.clone(),
        opt_m: opt.m,
        opt_v: opt.v,
        opt_step: opt.step_count,
        epoch: aborted_at.unwrap_or(cfg.epochs),
    };
    let result = TrainResult { state: final_state, best, best_val, metrics, aborted_at };
    Ok((model, result))
}

/// Supervised training of the gap extension with the recognition model
/// frozen. Only `phi` parameters are ever updated; the caller can verify
/// the frozen store bitwise.
pub fn train_gap<F: Real>(
    cfg: &TrainConfig,
    records: &[GenerationRecord<F>],
    local: &FimLocal<F>,
    resume: Option<TrainState<F>>,
    mut epoch_hook: Option<&mut dyn FnMut(&TrainState<F>, &[EpochMetrics]) -> Result<()>>,
) -> Result<(FimGap<F>, TrainResult<F>)> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Training("empty dataset".into()));
    }
    let prepared: Vec<PreparedGap<F>> = {
        let res: Vec<Result<PreparedGap<F>>> =
            map_ordered(records.len(), cfg.threads, |i| prepare_gap(local, &records[i]));
        let mut out = Vec::new();
        for (j, r) in res.into_iter().enumerate() {
            match r {
                Ok(p) => out.push(p),
                Err(e) => log::warn!("skipping temporal record {j}: {e}"),
            }
        }
        out
    };
    if prepared.is_empty() {
        return Err(Error::Training("no usable temporal records".into()));
    }
    let (train_set, val_set): (Vec<&PreparedGap<F>>, Vec<&PreparedGap<F>>) = prepared
        .iter()
        .partition(|p| !is_validation(cfg.seed, p.index, cfg.val_fraction));
    if train_set.is_empty() {
        return Err(Error::Training("validation split left no training records".into()));
    }

    let state = match resume {
        Some(s) => s,
        None => TrainState::fresh(FimGap::<F>::init(cfg.net, cfg.seed)?.params),
    };
    let mut gap = FimGap::from_params(cfg.net, state.params)?;
    let mut opt = AdamW::from_state(state.opt_m, state.opt_v, state.opt_step, cfg.weight_decay);
    let start_epoch = state.epoch;

    let mut metrics = Vec::new();
    let mut best = gap.params.clone();
    let mut best_val = f64::INFINITY;
    let mut aborted_at = None;

    'epochs: for epoch in start_epoch..cfg.epochs {
        let last_good = gap.params.clone();
        let lr = F::of(cfg.schedule.at(epoch));
        let order = shuffled_indices(train_set.len(), cfg.seed, epoch);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch_idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedGap<F>> = batch_idx.iter().map(|&i| train_set[i]).collect();
            let chunks: Vec<&[&PreparedGap<F>]> = batch.chunks(CHUNK).collect();
            let results = map_ordered(chunks.len(), cfg.threads, |ci| {
                let chunk = chunks[ci];
                let mut tape = Tape::new();
                let bind_phi = gap.params.bind(&mut tape, true);
                let bind_theta = local.params.bind(&mut tape, false);
                let mut total = None;
                let mut lsum = 0.0;
                for prep in chunk {
                    let mut dr =
                        rng::derive(cfg.seed, &[stream::DROPOUT, epoch as u64, prep.seed]);
                    let ctx = if cfg.net.dropout > 0.0 {
                        Some(DropoutCtx { rng: &mut dr, p: cfg.net.dropout })
                    } else {
                        None
                    };
                    let t = loss::loss_gap_on_tape(
                        local, &gap, &mut tape, &bind_phi, &bind_theta, prep, ctx,
                    );
                    lsum += tape.value(t).item().to_f64x();
                    total = Some(match total {
                        None => t,
                        Some(acc) => tape.add(acc, t),
                    });
                }
                let mut grads = gap.params.zeros_like();
                if let Some(t) = total {
                    tape.backward(t);
                    gap.params.accumulate_grads(&tape, &bind_phi, &mut grads);
                }
                (grads, lsum, chunk.len())
            });
            let mut grads = gap.params.zeros_like();
            let mut lsum = 0.0;
            let mut count = 0usize;
            for (g, l, c) in results {
                grads.add_scaled(&g, F::one());
                lsum += l;
                count += c;
            }
            grads.scale_in_place(F::one() / F::of_usize(count));
            if !(lsum / count as f64).is_finite() || !grads.all_finite() {
                log::error!("non-finite gap loss at epoch {epoch}; keeping last good parameters");
                gap = FimGap::from_params(cfg.net, last_good)?;
                aborted_at = Some(epoch);
                break 'epochs;
            }
            clip_global_norm(&mut grads, F::of(cfg.grad_clip));
            opt.step(&mut gap.params, &grads, lr);
            gap = FimGap::from_params(cfg.net, gap.params)?;
            loss_sum += lsum;
            seen += count;
        }
        let train_mean = loss_sum / seen.max(1) as f64;
        metrics.push(EpochMetrics {
            epoch,
            split: "train".into(),
            loss_f_nll: train_mean,
            loss_euler: 0.0,
            loss_x0: 0.0,
            total: train_mean,
        });
        if !val_set.is_empty() {
            let vals = map_ordered(val_set.len(), cfg.threads, |i| {
                loss_gap_value(local, &gap, val_set[i]).to_f64x()
            });
            let val_mean = vals.iter().sum::<f64>() / vals.len() as f64;
            metrics.push(EpochMetrics {
                epoch,
                split: "val".into(),
                loss_f_nll: val_mean,
                loss_euler: 0.0,
                loss_x0: 0.0,
                total: val_mean,
            });
            if val_mean < best_val {
                best_val = val_mean;
                best = gap.params.clone();
            }
        } else {
            best = gap.params.clone();
        }
        if let Some(hook) = epoch_hook.as_deref_mut() {
            let snapshot = TrainState {
                params: gap.params.clone(),
                opt_m: opt.m.clone(),
                opt_v: opt.v.clone(),
                opt_step: opt.step_count,
                epoch: epoch + 1,
            };
            hook(&snapshot, &metrics)?;
        }
    }

    let final_state = TrainState {
        params: gap.params.clone(),
        opt_m: opt.m,
        opt_v: opt.v,
        opt_step: opt.step_count,
        epoch: aborted_at.unwrap_or(cfg.epochs),
    };
    let result = TrainResult { state: final_state, best, best_val, metrics, aborted_at };
    Ok((gap, result))
}

/// One window of the differentiable reconstruction pipeline, with the
/// interpolation/blend weights that map its dense grid onto the series'
/// observation times.
struct FinetuneWindow<F> {
    values_norm: Vec<F>,
    times_norm: Vec<F>,
    grid_norm: Vec<F>,
    dt_norm: F,
    dy: F,
    y_min: F,
    terms: Vec<LincombTerm<F>>,
}

struct FinetuneSeries<F> {
    windows: Vec<FinetuneWindow<F>>,
    targets: Vec<F>,
    seed: u64,
}

fn prepare_finetune<F: Real>(
    series: &TimeSeries<F>,
    windows: usize,
    seed: u64,
) -> Result<FinetuneSeries<F>> {
    let obs = series.observed();
    if obs.len() < 2 {
        return Err(Error::Training("series too short to fine-tune on".into()));
    }
    let ranges = fim_local::window_ranges(&obs.times, Windowing::ByCount(windows));
    let spans: Vec<(F, F)> = ranges
        .iter()
        .map(|&(lo, hi)| (obs.times[lo], obs.times[hi]))
        .collect();
    let n_obs = obs.len();
    let mut out_windows = Vec::with_capacity(ranges.len());
    for (wi, &(lo, hi)) in ranges.iter().enumerate() {
        let sub = TimeSeries::new(obs.times[lo..=hi].to_vec(), obs.values[lo..=hi].to_vec())?;
        let (subn, norm) = fim_local::normalize(&sub)?;
        let g = (4 * subn.len()).max(128);
        let dt_norm = F::one() / F::of_usize(g - 1);
        let grid_norm: Vec<F> = (0..g).map(|i| F::of_usize(i) * dt_norm).collect();
        // blend weight of this window at every observation time; zero when
        // the observation is outside the window
        let mut terms = Vec::with_capacity(n_obs);
        for &t in &obs.times {
            let (s0, s1) = spans[wi];
            if t < s0 || t > s1 {
                terms.push(LincombTerm { i0: 0, w0: F::zero(), i1: 0, w1: F::zero() });
                continue;
            }
            let mut blend = F::one();
            if wi > 0 && t <= spans[wi - 1].1 {
                // overlap with the previous window
                let den = spans[wi - 1].1 - s0;
                blend = (t - s0) / den;
            }
            if wi + 1 < spans.len() && t >= spans[wi + 1].0 {
                let den = s1 - spans[wi + 1].0;
                blend = (s1 - t) / den;
            }
            let tn = norm.norm_time(t);
            // bracketing grid indices on the window grid
            let pos = (tn / dt_norm).to_f64x().floor().max(0.0) as usize;
            let i0 = pos.min(g - 2);
            let i1 = i0 + 1;
            let w1 = (tn - grid_norm[i0]) / dt_norm;
            let w0 = F::one() - w1;
            terms.push(LincombTerm { i0, w0: blend * w0, i1, w1: blend * w1 });
        }
        out_windows.push(FinetuneWindow {
            values_norm: subn.values,
            times_norm: subn.times,
            grid_norm,
            dt_norm,
            dy: norm.dy(),
            y_min: norm.y_min,
            terms,
        });
    }
    let series_seed = rng::mix(seed, &[obs.len() as u64]);
    Ok(FinetuneSeries { windows: out_windows, targets: obs.values, seed: series_seed })
}

/// Mean absolute reconstruction error of the observed values through the
/// windowed pipeline, on the tape.
fn finetune_loss_on_tape<F: Real>(
    model: &FimLocal<F>,
    tape: &mut Tape<F>,
    bind: &crate::params::Binding,
    prep: &FinetuneSeries<F>,
    mut dropout: Option<DropoutCtx<'_>>,
) -> crate::autodiff::Var {
    let n_obs = prep.targets.len();
    let mut prediction: Option<crate::autodiff::Var> = None;
    for w in &prep.windows {
        let u = model.encode_on_tape(
            tape,
            bind,
            &w.values_norm,
            &w.times_norm,
            dropout.as_mut().map(|c| DropoutCtx { rng: c.rng, p: c.p }),
        );
        let (fmean_n, _) = model.query_on_tape(
            tape,
            bind,
            u,
            &w.grid_norm,
            dropout.as_mut().map(|c| DropoutCtx { rng: c.rng, p: c.p }),
        );
        let (x0n, _) = model.initial_on_tape(tape, bind, u, None);
        let cum = tape.cumtrapz(fmean_n, w.dt_norm);
        let g = w.grid_norm.len();
        let x0rep = tape.repeat_row(x0n, g);
        let xn = tape.add(cum, x0rep);
        let xs = tape.scale(xn, w.dy);
        let x_orig = tape.add_scalar(xs, w.y_min);
        let contrib = tape.lincomb(x_orig, w.terms.clone());
        prediction = Some(match prediction {
            None => contrib,
            Some(acc) => tape.add(acc, contrib),
        });
    }
    let pred = prediction.expect("no windows");
    let target = tape.constant(Tensor::vector(prep.targets.clone()));
    let resid = tape.sub(target, pred);
    let resid_abs = tape.abs(resid);
    let s = tape.sum_all(resid_abs);
    tape.scale(s, F::one() / F::of_usize(n_obs))
}

/// Reconstruction fine-tuning: all recognition parameters are updated at a
/// small rate to reduce the windowed reconstruction MAE on the given
/// series.
pub fn finetune_reconstruction<F: Real>(
    cfg: &TrainConfig,
    series: &[TimeSeries<F>],
    start: ParameterStore<F>,
) -> Result<(FimLocal<F>, TrainResult<F>)> {
    cfg.validate()?;
    if series.is_empty() {
        return Err(Error::Training("no series to fine-tune on".into()));
    }
    let prepared: Vec<FinetuneSeries<F>> = series
        .iter()
        .map(|s| prepare_finetune(s, cfg.finetune_windows, cfg.seed))
        .collect::<Result<_>>()?;
    let mut model = FimLocal::from_params(cfg.net, start)?;
    let mut opt = AdamW::new(&model.params, cfg.weight_decay);
    let mut metrics = Vec::new();
    let mut aborted_at = None;

    'epochs: for epoch in 0..cfg.epochs {
        let last_good = model.params.clone();
        let lr = F::of(cfg.schedule.at(epoch));
        let order = shuffled_indices(prepared.len(), cfg.seed, epoch);
        let mut loss_sum = 0.0;
        for batch_idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&FinetuneSeries<F>> = batch_idx.iter().map(|&i| &prepared[i]).collect();
            let chunks: Vec<&[&FinetuneSeries<F>]> = batch.chunks(CHUNK).collect();
            let results = map_ordered(chunks.len(), cfg.threads, |ci| {
                let chunk = chunks[ci];
                let mut tape = Tape::new();
                let bind = model.params.bind(&mut tape, true);
                let mut total = None;
                let mut lsum = 0.0;
                for prep in chunk {
                    let mut dr =
                        rng::derive(cfg.seed, &[stream::DROPOUT, epoch as u64, prep.seed]);
                    let ctx = if cfg.net.dropout > 0.0 {
                        Some(DropoutCtx { rng: &mut dr, p: cfg.net.dropout })
                    } else {
                        None
                    };
                    let t = finetune_loss_on_tape(&model, &mut tape, &bind, prep, ctx);
                    lsum += tape.value(t).item().to_f64x();
                    total = Some(match total {
                        None => t,
                        Some(acc) => tape.add(acc, t),
                    });
                }
                let mut grads = model.params.zeros_like();
                if let Some(t) = total {
                    tape.backward(t);
                    model.params.accumulate_grads(&tape, &bind, &mut grads);
                }
                (grads, lsum, chunk.len())
            });
            let mut grads = model.params.zeros_like();
            let mut lsum = 0.0;
            let mut count = 0usize;
            for (g, l, c) in results {
                grads.add_scaled(&g, F::one());
                lsum += l;
                count += c;
            }
            grads.scale_in_place(F::one() / F::of_usize(count));
            if !(lsum / count as f64).is_finite() || !grads.all_finite() {
                log::error!("non-finite fine-tune loss at epoch {epoch}");
                model = FimLocal::from_params(cfg.net, last_good)?;
                aborted_at = Some(epoch);
                break 'epochs;
            }
            clip_global_norm(&mut grads, F::of(cfg.grad_clip));
            opt.step(&mut model.params, &grads, lr);
            model = FimLocal::from_params(cfg.net, model.params)?;
            loss_sum += lsum;
        }
        let mean = loss_sum / prepared.len() as f64;
        metrics.push(EpochMetrics {
            epoch,
            split: "train".into(),
            loss_f_nll: 0.0,
            loss_euler: 0.0,
            loss_x0: 0.0,
            total: mean,
        });
    }

    let best = model.params.clone();
    let state = TrainState {
        params: model.params.clone(),
        opt_m: opt.m,
        opt_v: opt.v,
        opt_step: opt.step_count,
        epoch: aborted_at.unwrap_or(cfg.epochs),
    };
    let result = TrainResult { state, best, best_val: f64::NAN, metrics, aborted_at };
    Ok((model, result))
}

/// Windowed reconstruction MAE of a model on a series (values-only), the
/// quantity fine-tuning minimizes.
pub fn reconstruction_mae<F: Real>(
    model: &FimLocal<F>,
    series: &TimeSeries<F>,
    windows: usize,
) -> Result<f64> {
    let obs = series.observed();
    let composed = fim_local::compose_windows(model, &obs, Windowing::ByCount(windows))?;
    let mut acc = 0.0;
    for (i, &t) in obs.times.iter().enumerate() {
        acc += (composed.x_at(t) - obs.values[i]).to_f64x().abs();
    }
    Ok(acc / obs.len() as f64)
}
