//! Acceptance suite: one test per criterion, each printing a pass line
//! (run with `cargo test --test acceptance -- --nocapture` to see them).
//! Training-based criteria share fixtures built once per process.

use fim_core::eval::{savgol_smooth, CubicSpline, Savgol};
use fim_core::fim_gap::{stitch, FimGap};
use fim_core::fim_local::{compose_windows, FimLocal, Windowing};
use fim_core::odesim::{
    corrupt, rk4_simulate, rk4_simulate_with_substeps, CorruptionSpec, DynamicalSystem,
};
use fim_core::params::ParameterStore;
use fim_core::recnet::{gradcheck, Attention, BiLstm, Ffn, NetConfig, TimeEmbed};
use fim_core::rng;
use fim_core::series::TimeSeries;
use fim_core::synthgen::{
    chebyshev, generate_all, gp, grid, noise, GenerationConfig, GenerationRecord,
};
use fim_core::tensor::Tensor;
use fim_core::train::{self, train_gap, train_local, TrainConfig};
use rand::Rng;
use std::sync::OnceLock;
use std::time::Instant;

const LOCAL_EPOCHS: usize = 30;
const GAP_EPOCHS: usize = 100;

fn desk_local_config() -> TrainConfig {
    TrainConfig::desk_local(LOCAL_EPOCHS, 20250801)
}

struct LocalFixture {
    model: FimLocal<f64>,
    train_secs: f64,
    nll_init: f64,
    nll_trained: f64,
    mae_model: f64,
    mae_mean: f64,
    test_records: Vec<GenerationRecord<f64>>,
}

static LOCAL: OnceLock<LocalFixture> = OnceLock::new();

fn local_fixture() -> &'static LocalFixture {
    LOCAL.get_or_init(|| {
        // 4096 noise-free records from the default Chebyshev+GP mix
        let mut gen = GenerationConfig::pointwise(4096, 20250801);
        gen.noise_lambda = 0.0;
        let records = generate_all::<f64>(&gen).expect("generation");
        let cfg = desk_local_config();
        let started = Instant::now();
        let (model, _result) = train_local(&cfg, &records, None, None).expect("training");
        let train_secs = started.elapsed().as_secs_f64();

        let mut test_gen = GenerationConfig::pointwise(256, 555_000);
        test_gen.noise_lambda = 0.0;
        let test_records = generate_all::<f64>(&test_gen).expect("test generation");
        let init_model = FimLocal::<f64>::init(cfg.net, cfg.seed).expect("init");
        let mean_f_nll = |m: &FimLocal<f64>| -> f64 {
            test_records
                .iter()
                .map(|r| {
                    let p = train::prepare_local(r).expect("prepare");
                    train::loss_local_value(m, &p).f_nll
                })
                .sum::<f64>()
                / test_records.len() as f64
        };
        let nll_init = mean_f_nll(&init_model);
        let nll_trained = mean_f_nll(&model);

        let (mut mae_model, mut mae_mean) = (0.0, 0.0);
        let mut count = 0.0;
        for rec in &test_records {
            let series = TimeSeries::new(rec.obs_times(), rec.y.clone()).expect("series");
            let composed =
                compose_windows(&model, &series, Windowing::ByCount(1)).expect("compose");
            let naive: f64 = rec.y.iter().sum::<f64>() / rec.y.len() as f64;
            for (i, &t) in rec.f.times().iter().enumerate() {
                mae_model += (composed.x_at(t) - rec.x.values[i]).abs();
                mae_mean += (naive - rec.x.values[i]).abs();
                count += 1.0;
            }
        }
        mae_model /= count;
        mae_mean /= count;
        LocalFixture { model, train_secs, nll_init, nll_trained, mae_model, mae_mean, test_records }
    })
}

struct GapFixture {
    gap: FimGap<f64>,
    theta_unchanged: bool,
    nll_init: f64,
    nll_trained: f64,
}

static GAP: OnceLock<GapFixture> = OnceLock::new();

fn gap_fixture() -> &'static GapFixture {
    GAP.get_or_init(|| {
        let local = &local_fixture().model;
        let records = generate_all::<f64>(&GenerationConfig::temporal(4096, 909)).expect("gen");
        let cfg = TrainConfig::desk_gap(GAP_EPOCHS, 88);
        let theta_before: Vec<u64> =
            local.params.flatten().iter().map(|v| v.to_bits()).collect();
        let (gap, _result) = train_gap(&cfg, &records, local, None, None).expect("gap training");
        let theta_after: Vec<u64> =
            local.params.flatten().iter().map(|v| v.to_bits()).collect();
        let theta_unchanged = theta_before == theta_after;

        let test = generate_all::<f64>(&GenerationConfig::temporal(256, 123_321)).expect("gen");
        let init_gap = FimGap::<f64>::init(cfg.net, cfg.seed).expect("init");
        let mean_nll = |g: &FimGap<f64>| -> f64 {
            let mut acc = 0.0;
            let mut n = 0usize;
            for r in &test {
                if let Ok(p) = train::prepare_gap(local, r) {
                    acc += train::loss_gap_value(local, g, &p);
                    n += 1;
                }
            }
            acc / n as f64
        };
        GapFixture {
            nll_init: mean_nll(&init_gap),
            nll_trained: mean_nll(&gap),
            gap,
            theta_unchanged,
        }
    })
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn c01_gradient_fidelity() {
    let started = Instant::now();
    let tol = 1e-4;
    let n_coords = 50;

    // time embedding
    let mut store: ParameterStore<f64> = ParameterStore::new();
    let te = TimeEmbed::init(&mut store, "phi0", 32, 1);
    let worst_te = gradcheck::max_rel_error(
        &store,
        |tape, bind| {
            let times = tape.constant(Tensor::column(&[0.17, 0.43, 0.88]));
            let out = te.forward(tape, bind, times);
            let sq = tape.mul(out, out);
            tape.sum_all(sq)
        },
        n_coords,
        11,
    );

    // feed-forward stack
    let mut store: ParameterStore<f64> = ParameterStore::new();
    let ffn = Ffn::init(&mut store, "ffn", 6, &[24, 24], 3, 2);
    let worst_ffn = gradcheck::max_rel_error(
        &store,
        |tape, bind| {
            let x = tape.constant(Tensor::matrix(
                4,
                6,
                (0..24).map(|i| ((i * 37 % 17) as f64 - 8.0) / 10.0).collect(),
            ));
            let y = ffn.forward(tape, bind, x, None);
            let sq = tape.mul(y, y);
            tape.sum_all(sq)
        },
        n_coords,
        12,
    );

    // bidirectional recurrent encoder
    let mut store: ParameterStore<f64> = ParameterStore::new();
    let lstm = BiLstm::init(&mut store, "lstm", 4, 8, 3);
    let worst_lstm = gradcheck::max_rel_error(
        &store,
        |tape, bind| {
            let xs = tape.constant(Tensor::matrix(
                6,
                4,
                (0..24).map(|i| ((i * 29 % 13) as f64 - 6.0) / 8.0).collect(),
            ));
            let out = lstm.forward(tape, bind, xs);
            let sq = tape.mul(out, out);
            tape.sum_all(sq)
        },
        n_coords,
        13,
    );

    // self-attention stack
    let mut store: ParameterStore<f64> = ParameterStore::new();
    let attn = Attention::init(&mut store, "attn", 8, 2, 2, 16, 5, 4);
    let worst_attn = gradcheck::max_rel_error(
        &store,
        |tape, bind| {
            let x = tape.constant(Tensor::matrix(
                5,
                8,
                (0..40).map(|i| ((i * 23 % 19) as f64 - 9.0) / 12.0).collect(),
            ));
            let out = attn.forward(tape, bind, x, 0, None);
            let sq = tape.mul(out, out);
            tape.sum_all(sq)
        },
        n_coords,
        14,
    );

    // full point-wise objective at desk scale on a real record. Central
    // differences are only meaningful where the loss is differentiable, so
    // the probe avoids the two kink families: freshly initialized weights
    // put the t=0 query row exactly on every SeLU kink (zero biases and
    // sin(0) = 0 make that embedding row identically zero), so every
    // parameter is jittered to a generic point; and a steep solution ramp
    // keeps the one-step absolute residuals away from zero.
    let net = NetConfig::desk();
    let mut local = FimLocal::<f64>::init(net, 900).unwrap();
    {
        let mut jitter = rng::derive(904, &[1]);
        for (_, tensor) in local.params.iter_mut() {
            for v in &mut tensor.data {
                *v += jitter.gen_range(-0.05..0.05);
            }
        }
    }
    let local = local;
    let record = fim_core::synthgen::generate_record::<f64>(
        &GenerationConfig::pointwise(1, 901),
        0,
    )
    .unwrap();
    let mut prep = train::prepare_local(&record).unwrap();
    for (i, x) in prep.x_target.iter_mut().enumerate() {
        *x = 0.08 * i as f64;
    }
    // the loss sums ~hundreds of terms, so near-zero gradient coordinates
    // are compared at a fraction of the typical gradient magnitude
    let floor_of = |grads: &fim_core::params::ParameterStore<f64>| {
        1e-3 * (grads.global_norm() / (grads.total_count() as f64).sqrt()).max(1e-3)
    };
    let (_, gl) = fim_core::recnet::grad(&local.params, |tape, bind| {
        train::loss::loss_local_on_tape(&local, tape, bind, &prep, None).0
    });
    let fd_cfg = gradcheck::FdConfig {
        h_scale: 1e-5,
        denom_floor: floor_of(&gl),
        kink_threshold: 3e-4,
    };
    let worst_local = gradcheck::max_rel_error_cfg(
        &local.params,
        |tape, bind| {
            let (total, _) = train::loss::loss_local_on_tape(&local, tape, bind, &prep, None);
            total
        },
        n_coords,
        15,
        &fd_cfg,
    );

    // full gap objective: gradients w.r.t. the trainable extension only
    let gap = FimGap::<f64>::init(net, 902).unwrap();
    let gap_record = fim_core::synthgen::generate_record::<f64>(
        &GenerationConfig::temporal(1, 903),
        0,
    )
    .unwrap();
    let gprep = train::prepare_gap(&local, &gap_record).unwrap();
    let (_, gg) = fim_core::recnet::grad(&gap.params, |tape, bind_phi| {
        let bind_theta = local.params.bind(tape, false);
        train::loss::loss_gap_on_tape(&local, &gap, tape, bind_phi, &bind_theta, &gprep, None)
    });
    let gap_cfg = gradcheck::FdConfig {
        h_scale: 1e-5,
        denom_floor: floor_of(&gg),
        kink_threshold: 3e-4,
    };
    let worst_gap = gradcheck::max_rel_error_cfg(
        &gap.params,
        |tape, bind_phi| {
            let bind_theta = local.params.bind(tape, false);
            train::loss::loss_gap_on_tape(&local, &gap, tape, bind_phi, &bind_theta, &gprep, None)
        },
        n_coords,
        16,
        &gap_cfg,
    );

    let elapsed = started.elapsed().as_secs_f64();
    for (name, worst) in [
        ("time_embed", worst_te),
        ("ffn", worst_ffn),
        ("seq_encode", worst_lstm),
        ("attn_encode", worst_attn),
        ("loss_local", worst_local),
        ("loss_gap", worst_gap),
    ] {
        assert!(worst < tol, "[FAIL] criterion 1: {name} gradient error {worst} >= {tol}");
    }
    assert!(elapsed < 300.0, "[FAIL] criterion 1: runtime {elapsed:.1}s >= 300s");
    println!(
        "[PASS] criterion 1: gradient fidelity — worst relative errors: \
         embed {worst_te:.2e}, ffn {worst_ffn:.2e}, lstm {worst_lstm:.2e}, \
         attn {worst_attn:.2e}, local loss {worst_local:.2e}, gap loss {worst_gap:.2e} \
         ({elapsed:.1}s)"
    );
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn c02_generator_statistics() {
    let started = Instant::now();
    let n = 100_000usize;

    // degree law: empirical mass ratio and a chi-square goodness of fit
    let mut r = rng::derive(21, &[1]);
    let mut counts = [0u64; chebyshev::MAX_DEGREE];
    for _ in 0..n {
        counts[chebyshev::sample_degree(&mut r) - 1] += 1;
    }
    let ratio = counts[0] as f64 / counts[1] as f64;
    assert!(
        (ratio - 4.0).abs() <= 0.15,
        "[FAIL] criterion 2: degree ratio {ratio} outside 4.0 +/- 0.15"
    );
    let masses = chebyshev::degree_masses();
    let chi2: f64 = counts
        .iter()
        .zip(masses.iter())
        .map(|(&c, &m)| {
            let expected = m * n as f64;
            (c as f64 - expected).powi(2) / expected
        })
        .sum();
    // 0.99 quantile of chi-square with 15 degrees of freedom
    let critical = 30.578;
    assert!(chi2 < critical, "[FAIL] criterion 2: chi2 {chi2} >= {critical}");

    // folded-normal noise level: E sigma = lambda sqrt(2/pi)
    let lambda = 0.1;
    let mut r = rng::derive(22, &[1]);
    let mut acc = 0.0;
    for _ in 0..n {
        let (_, s) = noise::apply::<f64>(&[0.0], lambda, &mut r);
        acc += s;
    }
    let mean_sigma = acc / n as f64;
    let expected = lambda * (2.0 / std::f64::consts::PI).sqrt();
    assert!(
        (mean_sigma - expected).abs() / expected < 0.01,
        "[FAIL] criterion 2: E[sigma] {mean_sigma} vs {expected}"
    );

    // RBF lengthscale prior mean: (2/12 + 2/7) / 2
    let mut r = rng::derive(23, &[1]);
    let mean_ls = (0..n).map(|_| gp::sample_rbf_lengthscale(&mut r)).sum::<f64>() / n as f64;
    let expected_ls = 0.5 * (2.0 / 12.0) + 0.5 * (2.0 / 7.0);
    assert!(
        (mean_ls - expected_ls).abs() / expected_ls < 0.01,
        "[FAIL] criterion 2: lengthscale prior mean {mean_ls} vs {expected_ls}"
    );

    // grid scheme split and observation-count bounds
    let mut r = rng::derive(24, &[1]);
    let mut regular = 0u64;
    for _ in 0..n {
        let g = grid::sample_pointwise(128, &mut r);
        assert!(
            g.len() >= grid::L_MIN && g.len() <= 128,
            "[FAIL] criterion 2: grid with {} observations",
            g.len()
        );
        assert!(g.indices.windows(2).all(|w| w[1] > w[0]));
        if matches!(g.scheme, fim_core::synthgen::GridScheme::Regular { .. }) {
            regular += 1;
        }
    }
    let frac = regular as f64 / n as f64;
    assert!(
        (frac - 0.5).abs() <= 0.02,
        "[FAIL] criterion 2: regular/irregular split {frac} outside 0.5 +/- 0.02"
    );

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 600.0, "[FAIL] criterion 2: runtime {elapsed:.1}s >= 600s");
    println!(
        "[PASS] criterion 2: generator statistics — ratio {ratio:.3}, chi2 {chi2:.1}, \
         E[sigma] {mean_sigma:.5}, split {frac:.3} ({elapsed:.1}s)"
    );
}

// ---------------------------------------------------------------- criterion 3

/// Naive reference metrics: separate accumulation scheme, one value at a
/// time, no shared code with the library implementation.
fn naive_metrics(
    target: &[Vec<f64>],
    pred: &[Vec<f64>],
    mask: &[Vec<bool>],
) -> (f64, f64, f64, f64, f64) {
    let l = target.len();
    let d = target[0].len();
    let mut n = 0usize;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut tabs = 0.0;
    for i in 0..l {
        for j in 0..d {
            if mask[i][j] {
                n += 1;
                abs += (target[i][j] - pred[i][j]).abs();
                sq += (target[i][j] - pred[i][j]) * (target[i][j] - pred[i][j]);
                tabs += target[i][j].abs();
            }
        }
    }
    let mae = abs / n as f64;
    let mse = sq / n as f64;
    let rmse = mse.sqrt();
    let mre = abs / tabs;
    let mut r2_sum = 0.0;
    for j in 0..d {
        let mut mean = 0.0;
        for row in target {
            mean += row[j];
        }
        mean /= l as f64;
        let mut ss_res = 0.0;
        let mut ss_tot = 0.0;
        for i in 0..l {
            ss_res += (target[i][j] - pred[i][j]) * (target[i][j] - pred[i][j]);
            ss_tot += (target[i][j] - mean) * (target[i][j] - mean);
        }
        r2_sum += 1.0 - ss_res / ss_tot;
    }
    (mae, mse, rmse, mre, r2_sum / d as f64)
}

#[test]
fn c03_metric_oracle_equivalence() {
    let mut r = rng::derive(31, &[1]);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let l = r.gen_range(5..40usize);
        let d = r.gen_range(1..4usize);
        let mut target = vec![vec![0.0; d]; l];
        let mut pred = vec![vec![0.0; d]; l];
        let mut mask = vec![vec![false; d]; l];
        for i in 0..l {
            for j in 0..d {
                // a ramp keeps per-dimension targets non-constant
                target[i][j] = r.gen_range(-5.0..5.0) + i as f64 * 0.1;
                pred[i][j] = r.gen_range(-5.0..5.0);
                mask[i][j] = r.gen_bool(0.7);
            }
        }
        for j in 0..d {
            mask[0][j] = true;
        }
        let lib = fim_core::eval::metrics(&target, &pred, &mask).unwrap();
        let (mae, mse, rmse, mre, r2) = naive_metrics(&target, &pred, &mask);
        for (a, b) in [
            (lib.mae, mae),
            (lib.mse, mse),
            (lib.rmse, rmse),
            (lib.mre, mre),
            (lib.r2, r2),
        ] {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    assert!(worst <= 1e-12, "[FAIL] criterion 3: metric disagreement {worst}");
    println!("[PASS] criterion 3: metric oracle equivalence — worst deviation {worst:.2e}");
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn c04_composition_continuity() {
    // (a) random model: window blending leaves no boundary jump
    let random_model = FimLocal::<f64>::init(NetConfig::desk(), 40).unwrap();
    let series = TimeSeries::new(
        (0..96).map(|i| i as f64 / 95.0 * 7.0).collect(),
        (0..96).map(|i| (i as f64 * 0.21).sin() * 2.0 + 0.03 * i as f64).collect(),
    )
    .unwrap();
    let mut max_jump: f64 = 0.0;
    for model in [&random_model, &local_fixture().model] {
        for windows in [2usize, 3, 5] {
            let composed = compose_windows(model, &series, Windowing::ByCount(windows)).unwrap();
            for k in 1..composed.windows.len() {
                for t in [composed.windows[k].t_start, composed.windows[k - 1].t_end] {
                    let eps = 1e-12 * 7.0;
                    let jump = (composed.x_at(t - eps) - composed.x_at(t + eps)).abs();
                    max_jump = max_jump.max(jump);
                }
            }
        }
    }
    assert!(max_jump < 1e-9, "[FAIL] criterion 4: boundary jump {max_jump}");

    // (b) gap stitching pins the boundary values exactly
    let f: Vec<f64> = (0..65).map(|i| (i as f64 * 0.17).sin()).collect();
    let out = stitch(1.25, -0.75, &f, (0.3, 0.7));
    assert_eq!(out[0], 1.25, "[FAIL] criterion 4: left boundary not exact");
    assert_eq!(*out.last().unwrap(), -0.75, "[FAIL] criterion 4: right boundary not exact");

    // (c) reconstruction starts exactly at the initial-condition head
    let rec = random_model.infer(&series).unwrap();
    let x = rec.reconstruct(&[0.0, 0.4, 1.0]);
    let (x0, _) = rec.x0();
    assert_eq!(x[0], x0, "[FAIL] criterion 4: reconstruct(0) != x0");

    println!("[PASS] criterion 4: composition continuity — max boundary jump {max_jump:.2e}");
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn c05_renormalization_algebra() {
    let model = FimLocal::<f64>::init(NetConfig::desk(), 50).unwrap();
    let base_times: Vec<f64> = (0..40).map(|i| 0.25 + i as f64 * 0.125).collect();
    let values: Vec<f64> = (0..40).map(|i| (i as f64 * 0.31).cos() * 3.0 + 1.0).collect();
    let mut worst: f64 = 0.0;
    for &c in &[4.0f64, 3.7] {
        let s1 = TimeSeries::new(base_times.clone(), values.clone()).unwrap();
        let s2 = TimeSeries::new(base_times.iter().map(|&t| t * c).collect(), values.clone())
            .unwrap();
        let r1 = model.infer(&s1).unwrap();
        let r2 = model.infer(&s2).unwrap();
        for k in 0..=20 {
            let t = base_times[0] + (base_times[39] - base_times[0]) * k as f64 / 20.0;
            let (f1, lv1) = r1.f_at(t);
            let (f2, lv2) = r2.f_at(t * c);
            worst = worst.max((f2 - f1 / c).abs() / f1.abs().max(1e-3));
            // variance shifts by -2 log c
            worst = worst.max(((lv2 - lv1) + 2.0 * c.ln()).abs() / lv1.abs().max(1.0));
        }
    }
    assert!(worst < 1e-9, "[FAIL] criterion 5: rescaling mismatch {worst}");
    println!("[PASS] criterion 5: renormalization algebra — worst deviation {worst:.2e}");
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn c06_toy_training_proxy() {
    let fx = local_fixture();
    assert!(
        fx.train_secs < 3600.0,
        "[FAIL] criterion 6: training took {:.0}s >= 3600s",
        fx.train_secs
    );
    assert!(fx.nll_init > 0.0, "[FAIL] criterion 6: init NLL not positive");
    assert!(
        fx.nll_trained <= fx.nll_init / 5.0,
        "[FAIL] criterion 6: held-out derivative NLL {} not 5x better than init {}",
        fx.nll_trained,
        fx.nll_init
    );
    assert!(
        fx.mae_model < fx.mae_mean,
        "[FAIL] criterion 6: reconstruction MAE {} not below mean predictor {}",
        fx.mae_model,
        fx.mae_mean
    );
    println!(
        "[PASS] criterion 6: training proxy — held-out f-NLL {:.2} -> {:.2} \
         (>= 5x), MAE {:.4} < mean predictor {:.4}, {:.0}s single-threaded",
        fx.nll_init, fx.nll_trained, fx.mae_model, fx.mae_mean, fx.train_secs
    );
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn c07_gap_freezing_contract() {
    let fx = gap_fixture();
    assert!(fx.theta_unchanged, "[FAIL] criterion 7: frozen parameters changed bitwise");
    assert!(
        fx.nll_trained <= fx.nll_init / 2.0,
        "[FAIL] criterion 7: gap NLL {} not 2x better than init {}",
        fx.nll_trained,
        fx.nll_init
    );
    // the extension parameters did move
    let fresh = FimGap::<f64>::init(NetConfig::desk(), 88).unwrap();
    assert_ne!(fresh.params.flatten(), fx.gap.params.flatten());
    println!(
        "[PASS] criterion 7: gap freezing — frozen store bit-identical, held-out gap NLL \
         {:.2} -> {:.2} (>= 2x)",
        fx.nll_init, fx.nll_trained
    );
}

// ---------------------------------------------------------------- criterion 8

fn matrix_exp_2x2(a: [[f64; 2]; 2], t: f64) -> [[f64; 2]; 2] {
    // scaling and squaring with a long Taylor series
    let mut s = 0;
    let mut scale = t;
    while scale.abs() > 0.5 {
        scale /= 2.0;
        s += 1;
    }
    let at = [
        [a[0][0] * scale, a[0][1] * scale],
        [a[1][0] * scale, a[1][1] * scale],
    ];
    let mut result = [[1.0, 0.0], [0.0, 1.0]];
    let mut term = [[1.0, 0.0], [0.0, 1.0]];
    for k in 1..30 {
        let mut next = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for p in 0..2 {
                    next[i][j] += term[i][p] * at[p][j];
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                term[i][j] = next[i][j] / k as f64;
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..s {
        let mut sq = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for p in 0..2 {
                    sq[i][j] += result[i][p] * result[p][j];
                }
            }
        }
        result = sq;
    }
    result
}

#[test]
fn c08_integrator_accuracy() {
    // exponential decay against the closed form
    let decay = DynamicalSystem::new("decay", 1, vec![1.0], 1.0, |_t, x: &[f64]| vec![-x[0]]);
    let traj = rk4_simulate(&decay, &[1.0], 1.0, 512).unwrap();
    let mut worst: f64 = 0.0;
    for (i, s) in traj.states.iter().enumerate() {
        let t = traj.times[i];
        worst = worst.max((s[0] - (-t).exp()).abs());
    }
    assert!(worst < 1e-6, "[FAIL] criterion 8: decay error {worst}");

    // damped oscillator against the matrix exponential
    let a = [[0.0, 1.0], [-1.0, -0.3]];
    let sys = DynamicalSystem::new("linear", 2, vec![1.0, 0.0], 1.0, move |_t, x: &[f64]| {
        vec![
            a[0][0] * x[0] + a[0][1] * x[1],
            a[1][0] * x[0] + a[1][1] * x[1],
        ]
    });
    let traj = rk4_simulate(&sys, &[1.0, -0.5], 4.0, 512).unwrap();
    let mut worst_lin: f64 = 0.0;
    for (i, s) in traj.states.iter().enumerate() {
        let e = matrix_exp_2x2(a, traj.times[i]);
        let exact = [e[0][0] - 0.5 * e[0][1], e[1][0] - 0.5 * e[1][1]];
        worst_lin = worst_lin.max((s[0] - exact[0]).abs().max((s[1] - exact[1]).abs()));
    }
    assert!(worst_lin < 1e-6, "[FAIL] criterion 8: linear-system error {worst_lin}");

    // empirical convergence order from step halving, on coarse steps
    let err_at = |substeps: usize| {
        let t = rk4_simulate_with_substeps(&decay, &[1.0], 1.0, 5, substeps).unwrap();
        (t.states.last().unwrap()[0] - (-1.0f64).exp()).abs()
    };
    let order = (err_at(1) / err_at(2)).log2();
    assert!(
        (3.5..=4.5).contains(&order),
        "[FAIL] criterion 8: convergence order {order} outside [3.5, 4.5]"
    );
    println!(
        "[PASS] criterion 8: integrator accuracy — decay {worst:.2e}, linear {worst_lin:.2e}, \
         order {order:.2}"
    );
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn c09_corruption_protocol() {
    let sys = DynamicalSystem::new("unit", 1, vec![1.0], 1.0, |_t, _x: &[f64]| vec![0.0]);
    let clean = rk4_simulate(&sys, &[1.0], 1.0, 512).unwrap();
    let mut kept_total = 0u64;
    let n_seeds = 10_000u64;
    for seed in 0..n_seeds {
        let c = corrupt(&clean, &CorruptionSpec { rho: 0.5, gamma: 0.0, seed }).unwrap();
        kept_total += c.kept.iter().filter(|&&k| k).count() as u64;
    }
    let keep_rate = kept_total as f64 / (n_seeds * 512) as f64;
    assert!(
        (keep_rate - 0.5).abs() <= 0.01,
        "[FAIL] criterion 9: keep rate {keep_rate} outside 0.5 +/- 0.01"
    );

    // multiplicative noise level on a unit trajectory
    let mut devs: Vec<f64> = Vec::new();
    for seed in 0..100 {
        let c = corrupt(&clean, &CorruptionSpec { rho: 0.0, gamma: 0.05, seed }).unwrap();
        devs.extend(c.channels[0].values.iter().map(|&y| y - 1.0));
    }
    let std = (devs.iter().map(|d| d * d).sum::<f64>() / devs.len() as f64).sqrt();
    assert!(
        (std - 0.05).abs() / 0.05 <= 0.10,
        "[FAIL] criterion 9: noise std {std} not within 10% of 0.05"
    );

    // the default benchmark grid is the full published combination set
    let grid = fim_core::eval::BenchConfig::standard(0).corruptions;
    for combo in [(0.0, 0.0), (0.0, 0.05), (0.5, 0.0), (0.5, 0.05)] {
        assert!(grid.contains(&combo), "[FAIL] criterion 9: missing combination {combo:?}");
    }
    println!(
        "[PASS] criterion 9: corruption protocol — keep rate {keep_rate:.4}, noise std {std:.4}"
    );
}

// --------------------------------------------------------------- criterion 10

#[test]
fn c10_baseline_sanity() {
    // spline interpolates observations exactly
    let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.17).collect();
    let ys: Vec<f64> = ts.iter().map(|&t| (1.7 * t).sin() + 0.2 * t).collect();
    let sp = CubicSpline::fit(&ts, &ys).unwrap();
    let mut worst_interp: f64 = 0.0;
    for (t, y) in ts.iter().zip(&ys) {
        worst_interp = worst_interp.max((sp.eval(*t) - y).abs());
    }
    assert!(worst_interp < 1e-12, "[FAIL] criterion 10: spline misses observations");

    // cubic reproduction between knots
    let cubic = |t: f64| 1.0 - 2.0 * t + 0.5 * t * t + 0.25 * t * t * t;
    let cys: Vec<f64> = ts.iter().map(|&t| cubic(t)).collect();
    let sp = CubicSpline::fit(&ts, &cys).unwrap();
    let mut worst_cubic: f64 = 0.0;
    for k in 0..500 {
        let t = ts[0] + (ts[19] - ts[0]) * k as f64 / 499.0;
        worst_cubic = worst_cubic.max((sp.eval(t) - cubic(t)).abs());
    }
    assert!(worst_cubic < 1e-8, "[FAIL] criterion 10: cubic reproduction error {worst_cubic}");

    // Savitzky-Golay exactness on polynomials of degree <= order
    let mut worst_sg: f64 = 0.0;
    for (window, order) in [(15usize, 3usize), (8, 3), (4, 3)] {
        let poly = |t: f64| 0.3 + 1.1 * t - 0.8 * t * t + 0.15 * t * t * t;
        let pys: Vec<f64> = ts.iter().map(|&t| poly(t)).collect();
        let sm = savgol_smooth(&ts, &pys, Savgol { window, order }).unwrap();
        for (a, b) in sm.iter().zip(&pys) {
            worst_sg = worst_sg.max((a - b).abs());
        }
    }
    assert!(worst_sg < 1e-9, "[FAIL] criterion 10: savgol not exact on low-degree polynomials");
    println!(
        "[PASS] criterion 10: baseline sanity — interp {worst_interp:.2e}, cubic {worst_cubic:.2e}, \
         savgol {worst_sg:.2e}"
    );
}

// ------------------------------------------------ supporting trained checks

/// The spec ties several behaviours to a trained model; spot-check them on
/// the fixture so regressions surface here rather than in examples only.
#[test]
fn trained_model_sanity() {
    let fx = local_fixture();
    // initial-condition estimates correlate with ground truth on held-out
    // records
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rec in &fx.test_records {
        let series = TimeSeries::new(rec.obs_times(), rec.y.clone()).unwrap();
        let r = fx.model.infer(&series).unwrap();
        let (x0, _) = r.x0();
        let first_obs = rec.grid.indices[0];
        xs.push(rec.x.values[first_obs]);
        ys.push(x0);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>();
    let vx = xs.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>();
    let vy = ys.iter().map(|b| (b - my) * (b - my)).sum::<f64>();
    let r = cov / (vx * vy).sqrt();
    assert!(r > 0.8, "initial-condition correlation too weak: {r}");

    // log-variances stay finite on every held-out context
    for rec in fx.test_records.iter().take(32) {
        let series = TimeSeries::new(rec.obs_times(), rec.y.clone()).unwrap();
        let rr = fx.model.infer(&series).unwrap();
        assert!(rr.x0().1.is_finite());
        for k in 0..=16 {
            let t = k as f64 / 16.0;
            let (m, lv) = fx.model.query(&rr.u, t);
            assert!(m.is_finite() && lv.is_finite());
        }
    }
    println!("[PASS] trained-model sanity — x0 correlation {r:.3}");
}

#[test]
fn trained_model_phase_portraits() {
    let fx = local_fixture();
    // depth 1: for x(t) = t^2/2 the inferred derivative tracks t under the
    // windowed operating mode (thresholds measured at desk scale: the
    // single-window estimate flattens strong trends, more windows recover
    // the slope)
    let series = TimeSeries::new(
        (0..64).map(|i| i as f64 / 63.0).collect(),
        (0..64).map(|i| (i as f64 / 63.0).powi(2) / 2.0).collect(),
    )
    .unwrap();
    let cfg = fim_core::eval::PhaseConfig {
        windowing: Windowing::ByCount(8),
        plot_grid: 128,
        depth2_grid: 1024,
        depth2_windows: 8,
    };
    let cols = fim_core::eval::phase_portrait(&fx.model, &series, 1, &cfg).unwrap();
    let n = cols.t.len() as f64;
    let mt = cols.t.iter().sum::<f64>() / n;
    let md = cols.dx.iter().sum::<f64>() / n;
    let cov = cols.t.iter().zip(&cols.dx).map(|(a, b)| (a - mt) * (b - md)).sum::<f64>();
    let vt = cols.t.iter().map(|a| (a - mt) * (a - mt)).sum::<f64>();
    let vd = cols.dx.iter().map(|b| (b - md) * (b - md)).sum::<f64>();
    let corr = cov / (vt * vd).sqrt();
    assert!(corr > 0.75, "derivative of t^2/2 should track t, correlation {corr}");
    let composed = compose_windows(&fx.model, &series, cfg.windowing).unwrap();
    let recon_mae: f64 = series
        .times
        .iter()
        .zip(&series.values)
        .map(|(&t, &v)| (composed.x_at(t) - v).abs())
        .sum::<f64>()
        / series.len() as f64;
    assert!(recon_mae < 0.01, "windowed reconstruction of t^2/2 off: MAE {recon_mae}");

    // depth 2: the second derivative of a linear series sits near zero,
    // measured against the model's own response to a genuinely curved
    // series (its effective noise floor), both under the windowed
    // operating mode
    let linear = TimeSeries::new(
        (0..64).map(|i| i as f64 / 63.0).collect(),
        (0..64).map(|i| 0.3 + i as f64 / 63.0).collect(),
    )
    .unwrap();
    let wave = TimeSeries::new(
        (0..64).map(|i| i as f64 / 63.0).collect(),
        (0..64).map(|i| (2.0 * std::f64::consts::PI * i as f64 / 63.0).sin()).collect(),
    )
    .unwrap();
    let mean_abs_ddx = |s: &TimeSeries<f64>| {
        let cols = fim_core::eval::phase_portrait(&fx.model, s, 2, &cfg).unwrap();
        let ddx = cols.ddx.unwrap();
        ddx.iter().map(|v| v.abs()).sum::<f64>() / ddx.len() as f64
    };
    let dd_linear = mean_abs_ddx(&linear);
    let dd_wave = mean_abs_ddx(&wave);
    assert!(
        dd_linear < 0.25 * dd_wave,
        "linear |ddx| {dd_linear} not well below the curved-series level {dd_wave}"
    );
    println!(
        "[PASS] trained-model phase portraits — dx~t correlation {corr:.3} \
         (recon MAE {recon_mae:.4}), linear |ddx| {dd_linear:.3} vs curved {dd_wave:.3}"
    );
}
