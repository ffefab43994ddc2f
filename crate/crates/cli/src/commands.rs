//! Command implementations.

use crate::config::{pick, pick_opt, FileConfig};
use crate::{
    AppError, AppResult, BenchmarkArgs, GenerateArgs, ImputeArgs, PhaseArgs, SimulateArgs,
    TrainArgs,
};
use fim_core::eval::{
    BenchConfig, FimImputer, Imputer, MaskMode, MeanImputer, PhaseConfig, Savgol, SplineImputer,
};
use fim_core::fim_gap::{impute_gap, FimGap};
use fim_core::fim_local::{compose_channels, FimLocal, Windowing};
use fim_core::io::{dataset, report, seriesio, weights, write_atomic};
use fim_core::odesim::{
    builtin_system, corrupt, rk4_simulate, CorruptionSpec, Trajectory,
};
use fim_core::recnet::NetConfig;
use fim_core::series::TimeSeries;
use fim_core::synthgen::{DatasetKind, GenerationConfig};
use fim_core::train::{
    finetune_reconstruction, train_gap, train_local, LrSchedule, Stage, TrainConfig, TrainState,
};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

fn invalid(msg: impl Into<String>) -> AppError {
    AppError::Validation(msg.into())
}

fn parse_f64_list(s: &str, what: &str) -> AppResult<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| invalid(format!("bad {what} entry {p:?}")))
        })
        .collect()
}

pub fn generate(args: GenerateArgs, file: &FileConfig) -> AppResult<()> {
    let kind_str = pick(args.kind, file.generate.kind.clone(), "pointwise".into());
    let kind = match kind_str.as_str() {
        "pointwise" => DatasetKind::PointWise,
        "temporal" => DatasetKind::TemporalGap,
        other => return Err(invalid(format!("unknown dataset kind {other:?}"))),
    };
    let n = pick(args.n, file.generate.n, 4096);
    let mut cfg = match kind {
        DatasetKind::PointWise => GenerationConfig::pointwise(n, args.seed),
        DatasetKind::TemporalGap => GenerationConfig::temporal(n, args.seed),
    };
    if let Some(l) = pick_opt(args.fine_grid, file.generate.fine_grid) {
        cfg.fine_grid_len = l;
    }
    if let Some(lambda) = pick_opt(args.noise_lambda, file.generate.noise_lambda) {
        cfg.noise_lambda = lambda;
    }
    let mix_flag = match &args.family_mix {
        None => None,
        Some(s) => {
            let v = parse_f64_list(s, "family_mix")?;
            if v.len() != 3 {
                return Err(invalid("family_mix needs exactly 3 probabilities"));
            }
            Some([v[0], v[1], v[2]])
        }
    };
    let mix_file = file.generate.family_mix.as_ref().map(|v| {
        let mut m = [0.0; 3];
        for (i, &x) in v.iter().take(3).enumerate() {
            m[i] = x;
        }
        m
    });
    if let Some(m) = mix_flag.or(mix_file) {
        cfg.family_mix = m;
    }
    cfg.validate()?;
    let counts = dataset::generate_to_jsonl(&cfg, &args.out)?;
    if let Some(bin) = &args.binary {
        let records = dataset::read_jsonl::<f64>(&args.out)?;
        dataset::write_binary(bin, &records)?;
    }
    let total: u64 = counts.iter().sum();
    println!(
        "wrote {total} records to {} (chebyshev {}, gp_rbf {}, gp_periodic {})",
        args.out.display(),
        counts[0],
        counts[1],
        counts[2]
    );
    Ok(())
}

fn load_records(path: &Path) -> AppResult<Vec<fim_core::GenerationRecord64>> {
    let recs = match path.extension().and_then(|e| e.to_str()) {
        Some("fimd") => dataset::read_binary::<f64>(path)?,
        _ => dataset::read_jsonl::<f64>(path)?,
    };
    if recs.is_empty() {
        return Err(invalid(format!("dataset {} is empty", path.display())));
    }
    Ok(recs)
}

fn parse_net(name: &str) -> AppResult<NetConfig> {
    match name {
        "desk" => Ok(NetConfig::desk()),
        "paper" => Ok(NetConfig::paper()),
        other => Err(invalid(format!("unknown network preset {other:?} (desk|paper)"))),
    }
}

fn load_local_model(path: &Path) -> AppResult<FimLocal<f64>> {
    let (header, store) = weights::load_weights::<f64>(path)?;
    if header.stage != "local" {
        return Err(invalid(format!(
            "{} holds stage {:?} weights, expected \"local\"",
            path.display(),
            header.stage
        )));
    }
    Ok(FimLocal::from_params(header.config, store)?)
}

pub fn train(args: TrainArgs, file: &FileConfig, threads: usize) -> AppResult<()> {
    let stage_str = pick(args.stage.clone(), file.train.stage.clone(), "local".into());
    let stage = match stage_str.as_str() {
        "local" => Stage::LocalFim,
        "gap" => Stage::GapFim,
        "finetune" => Stage::FineTune,
        other => return Err(invalid(format!("unknown stage {other:?} (local|gap|finetune)"))),
    };
    let epochs = pick(args.epochs, file.train.epochs, 2000);
    let schedule = match (&args.lr_cosine, pick_opt(args.lr, file.train.lr)) {
        (Some(s), _) => {
            let v = parse_f64_list(s, "lr_cosine")?;
            if v.len() != 2 {
                return Err(invalid("--lr-cosine needs \"hi,lo\""));
            }
            LrSchedule::CosineAnneal { lr_hi: v[0], lr_lo: v[1], epochs }
        }
        (None, Some(lr)) => LrSchedule::Constant { lr },
        (None, None) => match (file.train.lr_cosine, stage) {
            (Some((hi, lo)), _) => LrSchedule::CosineAnneal { lr_hi: hi, lr_lo: lo, epochs },
            (None, Stage::GapFim) => {
                LrSchedule::CosineAnneal { lr_hi: 1e-3, lr_lo: 1e-5, epochs }
            }
            (None, Stage::FineTune) => LrSchedule::Constant { lr: 1e-6 },
            (None, Stage::LocalFim) => LrSchedule::Constant { lr: 1e-3 },
        },
    };
    let weight_decay = pick(
        args.weight_decay,
        file.train.weight_decay,
        match stage {
            Stage::GapFim => 1e-3,
            _ => 1e-4,
        },
    );
    let base_net = match pick_opt(args.net.clone(), file.train.net.clone()) {
        Some(name) => Some(parse_net(&name)?),
        None => None,
    };

    // frozen/base weights for gap and finetune stages
    let needs_base = matches!(stage, Stage::GapFim | Stage::FineTune);
    if needs_base && args.weights.is_none() {
        return Err(invalid(format!("--stage {stage_str} requires --weights")));
    }
    let base_model = match &args.weights {
        Some(p) => Some(load_local_model(p)?),
        None => None,
    };

    let net = match (&base_model, base_net) {
        (Some(m), _) => m.config,
        (None, Some(n)) => n,
        (None, None) => NetConfig::desk(),
    };

    let mut cfg = TrainConfig {
        stage,
        net,
        schedule,
        weight_decay,
        batch_size: pick(args.batch, file.train.batch, 64),
        epochs,
        seed: args.seed,
        val_fraction: pick(args.val_fraction, file.train.val_fraction, 0.1),
        grad_clip: pick(None, file.train.grad_clip, 10.0),
        threads,
        finetune_windows: pick(args.windows, file.train.windows, 4),
    };
    cfg.validate()?;

    let resume: Option<TrainState<f64>> = match &args.resume {
        None => None,
        Some(p) => {
            let (header, state) = weights::load_checkpoint::<f64>(p)?;
            cfg.net = header.config;
            Some(state)
        }
    };

    let ck_every = pick(args.checkpoint_every, file.train.checkpoint_every, 0);
    let ck_dir = args.checkpoint_dir.clone();
    let stage_tag = stage_str.clone();
    let net_echo = cfg.net;
    let dir = ck_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    if ck_every > 0 {
        std::fs::create_dir_all(&dir).map_err(|e| AppError::Runtime(e.to_string()))?;
    }
    let mut ck_hook = move |state: &TrainState<f64>,
                            _m: &[fim_core::train::EpochMetrics]|
          -> fim_core::Result<()> {
        if state.epoch % ck_every.max(1) == 0 {
            let path = dir.join(format!("checkpoint_epoch{}.fimw", state.epoch));
            weights::save_checkpoint(&path, state, net_echo, &stage_tag)?;
        }
        Ok(())
    };
    let mut hook_box: Option<&mut dyn FnMut(
        &TrainState<f64>,
        &[fim_core::train::EpochMetrics],
    ) -> fim_core::Result<()>> = if ck_every > 0 { Some(&mut ck_hook) } else { None };

    let mut extra = serde_json::Map::new();
    extra.insert("seed".into(), serde_json::json!(args.seed));
    extra.insert("epochs".into(), serde_json::json!(epochs));

    let (final_params, best_params, metrics, aborted) = match stage {
        Stage::LocalFim => {
            let data_path =
                args.data.as_ref().ok_or_else(|| invalid("--stage local requires --data"))?;
            let records = load_records(data_path)?;
            if records.iter().any(|r| r.grid.gap.is_some()) {
                return Err(invalid("local stage expects a point-wise dataset (found gaps)"));
            }
            let (model, result) = train_local(&cfg, &records, resume, hook_box.take())?;
            (model.params, result.best, result.metrics, result.aborted_at)
        }
        Stage::GapFim => {
            let data_path =
                args.data.as_ref().ok_or_else(|| invalid("--stage gap requires --data"))?;
            let records = load_records(data_path)?;
            if records.iter().any(|r| r.grid.gap.is_none()) {
                return Err(invalid("gap stage expects a temporal dataset (records with gaps)"));
            }
            let local = base_model.as_ref().expect("checked above");
            let (gap, result) = train_gap(&cfg, &records, local, resume, hook_box.take())?;
            (gap.params, result.best, result.metrics, result.aborted_at)
        }
        Stage::FineTune => {
            let series_path = args
                .series
                .as_ref()
                .ok_or_else(|| invalid("--stage finetune requires --series"))?;
            let fmt = seriesio::SeriesFormat::from_path(series_path);
            let series: Vec<TimeSeries<f64>> = seriesio::ingest_series(series_path, fmt)?;
            let local = base_model.expect("checked above");
            let (model, result) = finetune_reconstruction(&cfg, &series, local.params)?;
            (model.params, result.best, result.metrics, result.aborted_at)
        }
    };

    let out_stage = match stage {
        Stage::GapFim => "gap",
        _ => "local",
    };
    weights::save_weights(&args.out, &final_params, cfg.net, out_stage, "f32", extra.clone())?;
    if let Some(dir) = &ck_dir {
        std::fs::create_dir_all(dir).ok();
        weights::save_weights(
            &dir.join("best.fimw"),
            &best_params,
            cfg.net,
            out_stage,
            "f32",
            extra,
        )?;
    }
    if let Some(log) = &args.log {
        report::write_metrics_csv(log, &metrics)?;
    }
    if let Some(epoch) = aborted {
        return Err(AppError::Runtime(format!(
            "training aborted at epoch {epoch} on a non-finite loss; last good weights written to {}",
            args.out.display()
        )));
    }
    let last = metrics.last().map(|m| m.total).unwrap_or(f64::NAN);
    println!(
        "trained stage {stage_str} for {epochs} epochs; final loss {last:.6}; weights at {}",
        args.out.display()
    );
    Ok(())
}

fn parse_windowing(
    windows: Option<usize>,
    window_obs: Option<usize>,
    default: Windowing,
) -> AppResult<Windowing> {
    match (windows, window_obs) {
        (Some(_), Some(_)) => Err(invalid("--windows and --window-obs are mutually exclusive")),
        (Some(m), None) => Ok(Windowing::ByCount(m.max(1))),
        (None, Some(n)) => Ok(Windowing::ByObservations(n.max(2))),
        (None, None) => Ok(default),
    }
}

pub fn impute(args: ImputeArgs, file: &FileConfig) -> AppResult<()> {
    let mode = pick(args.mode.clone(), file.impute.mode.clone(), "pointwise".into());
    // gap mode also accepts a self-contained request file:
    // {series: {t, channels[, mask]}, gap: [lo, hi][, channels]}
    let is_request = mode == "gap"
        && args.input.extension().and_then(|e| e.to_str()) == Some("json");
    let (channels, request_gap): (Vec<TimeSeries<f64>>, Option<(f64, f64)>) = if is_request {
        let (ch, gap) = seriesio::ingest_gap_request(&args.input)?;
        (ch, Some(gap))
    } else {
        let fmt = seriesio::SeriesFormat::from_path(&args.input);
        (seriesio::ingest_series(&args.input, fmt)?, None)
    };
    if channels.is_empty() {
        return Err(invalid("input contains no channels"));
    }
    let model = load_local_model(&args.weights)?;
    let grid_len = pick(args.grid, file.impute.grid, 512).max(8);
    let windowing = parse_windowing(
        args.windows.or(file.impute.windows),
        args.window_obs.or(file.impute.window_obs),
        Windowing::ByCount(1),
    )?;

    let mut out = seriesio::ImputationOutput { mode: mode.clone(), channels: Vec::new() };
    match mode.as_str() {
        "pointwise" => {
            let results = compose_channels(&model, &channels, windowing);
            for (ci, res) in results.into_iter().enumerate() {
                match res {
                    Ok(composed) => {
                        let t = composed.grid(grid_len);
                        let (x, f, lv) = composed.sample(&t);
                        let norm = fim_core::fim_local::normalize(&channels[ci].observed())
                            .map(|(_, n)| n)
                            .ok();
                        out.channels.push(seriesio::ChannelOutput {
                            channel: ci,
                            t,
                            x_hat: x,
                            f_hat: f,
                            f_log_var: lv,
                            norm,
                            gap: None,
                            error: None,
                        });
                    }
                    Err(e) => out.channels.push(seriesio::ChannelOutput {
                        channel: ci,
                        t: Vec::new(),
                        x_hat: Vec::new(),
                        f_hat: Vec::new(),
                        f_log_var: Vec::new(),
                        norm: None,
                        gap: None,
                        error: Some(e.to_string()),
                    }),
                }
            }
        }
        "gap" => {
            let gv: Vec<f64> = match (&args.gap, request_gap) {
                (Some(gap_str), _) => parse_f64_list(gap_str, "gap")?,
                (None, Some((lo, hi))) => vec![lo, hi],
                (None, None) => {
                    return Err(invalid("gap mode requires --gap lo,hi or a request file"))
                }
            };
            if gv.len() != 2 || gv[0] >= gv[1] {
                return Err(invalid("--gap must be \"lo,hi\" with lo < hi"));
            }
            let gap_path = args
                .gap_weights
                .as_ref()
                .ok_or_else(|| invalid("gap mode requires --gap-weights"))?;
            let (gheader, gstore) = weights::load_weights::<f64>(gap_path)?;
            if gheader.stage != "gap" {
                return Err(invalid(format!(
                    "{} holds stage {:?} weights, expected \"gap\"",
                    gap_path.display(),
                    gheader.stage
                )));
            }
            let gap_model = FimGap::from_params(gheader.config, gstore)?;
            for (ci, ch) in channels.iter().enumerate() {
                match impute_gap(&gap_model, &model, ch, (gv[0], gv[1]), grid_len) {
                    Ok(imp) => {
                        let norm = fim_core::fim_local::normalize(
                            &ch.observed().without_interval(gv[0], gv[1]),
                        )
                        .map(|(_, n)| n)
                        .ok();
                        out.channels.push(seriesio::ChannelOutput {
                            channel: ci,
                            t: imp.t,
                            x_hat: imp.x_hat,
                            f_hat: imp.f_hat,
                            f_log_var: imp.f_log_var,
                            norm,
                            gap: Some(imp.gap),
                            error: None,
                        });
                    }
                    Err(e) => out.channels.push(seriesio::ChannelOutput {
                        channel: ci,
                        t: Vec::new(),
                        x_hat: Vec::new(),
                        f_hat: Vec::new(),
                        f_log_var: Vec::new(),
                        norm: None,
                        gap: Some((gv[0], gv[1])),
                        error: Some(e.to_string()),
                    }),
                }
            }
        }
        other => return Err(invalid(format!("unknown impute mode {other:?} (pointwise|gap)"))),
    }
    seriesio::write_imputation_json(&args.out, &out)?;
    if let Some(csv) = &args.csv {
        seriesio::write_imputation_csv(csv, &out)?;
    }
    let ok = out.channels.iter().filter(|c| c.error.is_none()).count();
    println!("imputed {ok}/{} channels into {}", out.channels.len(), args.out.display());
    Ok(())
}

fn build_system(name: &str, mu: Option<f64>) -> AppResult<fim_core::odesim::DynamicalSystem<f64>> {
    if name == "van_der_pol" || name == "vdp" {
        return Ok(fim_core::odesim::van_der_pol(mu.unwrap_or(0.5)));
    }
    builtin_system::<f64>(name)
        .ok_or_else(|| invalid(format!("unknown system {name:?} (van_der_pol|rossler|lorenz)")))
}

pub fn simulate(args: SimulateArgs, file: &FileConfig) -> AppResult<()> {
    let name = pick(args.system.clone(), file.simulate.system.clone(), "van_der_pol".into());
    let sys = build_system(&name, args.mu.or(file.simulate.mu))?;
    let x0 = match &args.x0 {
        None => sys.default_x0.clone(),
        Some(s) => parse_f64_list(s, "x0")?,
    };
    if x0.len() != sys.dim {
        return Err(invalid(format!("system {name} needs {} initial values", sys.dim)));
    }
    let t_end = pick(args.t, file.simulate.t, sys.default_span);
    let points = pick(args.points, file.simulate.points, 512);
    let traj = rk4_simulate(&sys, &x0, t_end, points)?;
    let rho = args.rho.or(file.simulate.rho);
    let gamma = args.gamma.or(file.simulate.gamma);
    if rho.is_some() || gamma.is_some() {
        let seed = args
            .seed
            .ok_or_else(|| invalid("corrupted simulation requires --seed"))?;
        let spec = CorruptionSpec { rho: rho.unwrap_or(0.0), gamma: gamma.unwrap_or(0.0), seed };
        let corrupted = corrupt(&traj, &spec)?;
        // export the full grid with mask columns marking kept points
        seriesio::export_trajectory_csv(&args.out, &traj, Some(&corrupted.kept))?;
    } else {
        seriesio::export_trajectory_csv(&args.out, &traj, None)?;
    }
    println!("simulated {name} ({points} points over T={t_end}) into {}", args.out.display());
    Ok(())
}

enum ImputerSpec {
    Spline(Option<Savgol>),
    Mean,
    Fim { path: PathBuf, windowing: Windowing },
}

fn parse_imputer_specs(s: &str) -> AppResult<Vec<ImputerSpec>> {
    let mut out = Vec::new();
    for item in s.split(',') {
        let item = item.trim();
        if item == "spline" {
            out.push(ImputerSpec::Spline(None));
        } else if item == "mean" {
            out.push(ImputerSpec::Mean);
        } else if let Some(rest) = item.strip_prefix("savgol:") {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 2 {
                return Err(invalid(format!("bad savgol spec {item:?}, want savgol:W:O")));
            }
            let window = parts[0].parse().map_err(|_| invalid("bad savgol window"))?;
            let order = parts[1].parse().map_err(|_| invalid("bad savgol order"))?;
            let sg = Savgol { window, order };
            sg.validate()?;
            out.push(ImputerSpec::Spline(Some(sg)));
        } else if let Some(rest) = item.strip_prefix("fim:") {
            let mut parts = rest.split(':');
            let path = PathBuf::from(
                parts.next().ok_or_else(|| invalid("fim imputer needs a weights path"))?,
            );
            let windowing = match parts.next() {
                None => Windowing::ByCount(16),
                Some(w) => {
                    if let Some(m) = w.strip_prefix("wn=") {
                        Windowing::ByCount(m.parse().map_err(|_| invalid("bad wn="))?)
                    } else if let Some(n) = w.strip_prefix("on=") {
                        Windowing::ByObservations(n.parse().map_err(|_| invalid("bad on="))?)
                    } else {
                        return Err(invalid(format!("bad fim windowing {w:?}")));
                    }
                }
            };
            out.push(ImputerSpec::Fim { path, windowing });
        } else {
            return Err(invalid(format!(
                "unknown imputer {item:?} (spline|savgol:W:O|mean|fim:PATH[:wn=M|:on=N])"
            )));
        }
    }
    if out.is_empty() {
        return Err(invalid("no imputers given"));
    }
    Ok(out)
}

fn load_trajectory_csv(path: &Path) -> AppResult<(String, Trajectory<f64>)> {
    let channels: Vec<TimeSeries<f64>> = seriesio::ingest_csv(path)?;
    if channels.is_empty() {
        return Err(invalid(format!("{} has no channels", path.display())));
    }
    // mask columns from `simulate --rho ...` exports are named m1.. and are
    // ingested as ordinary channels; drop anything that is exactly 0/1 when
    // a corresponding value channel exists
    let d = channels.len();
    let value_channels = if d % 2 == 0
        && channels[d / 2..]
            .iter()
            .all(|c| c.values.iter().all(|&v| v == 0.0 || v == 1.0))
    {
        &channels[..d / 2]
    } else {
        &channels[..]
    };
    for ch in value_channels {
        if ch.mask.as_ref().is_some_and(|m| m.iter().any(|&b| !b)) {
            return Err(invalid(format!(
                "{}: benchmark targets must be complete trajectories (missing cells found)",
                path.display()
            )));
        }
    }
    let times = value_channels[0].times.clone();
    let states: Vec<Vec<f64>> = (0..times.len())
        .map(|i| value_channels.iter().map(|c| c.values[i]).collect())
        .collect();
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok((name, Trajectory { times, states }))
}

pub fn benchmark(args: BenchmarkArgs, file: &FileConfig) -> AppResult<()> {
    let points = pick(args.points, file.benchmark.points, 512);
    let mut trajectories: Vec<(String, Trajectory<f64>)> = Vec::new();
    let system_list: Vec<String> = match (&args.systems, &file.benchmark.systems) {
        (Some(s), _) => s
            .split(',')
            .map(|x| x.trim().to_string())
            .filter(|x| !x.is_empty())
            .collect(),
        (None, Some(v)) => v.clone(),
        (None, None) if args.input.is_empty() => {
            vec!["van_der_pol".into(), "rossler".into(), "lorenz".into()]
        }
        _ => Vec::new(),
    };
    for name in &system_list {
        let sys = build_system(name, None)?;
        let traj = rk4_simulate(&sys, &sys.default_x0.clone(), sys.default_span, points)?;
        trajectories.push((sys.name.clone(), traj));
    }
    for path in &args.input {
        trajectories.push(load_trajectory_csv(path)?);
    }
    if trajectories.is_empty() {
        return Err(invalid("nothing to benchmark: no systems and no inputs"));
    }

    let spec_str = match (&args.imputers, &file.benchmark.imputers) {
        (Some(s), _) => s.clone(),
        (None, Some(v)) => v.join(","),
        (None, None) => "spline,savgol:15:3,mean".into(),
    };
    let specs = parse_imputer_specs(&spec_str)?;
    // models are loaded into an arena so the imputers can borrow them
    let mut models: Vec<FimLocal<f64>> = Vec::new();
    for spec in &specs {
        if let ImputerSpec::Fim { path, .. } = spec {
            models.push(load_local_model(path)?);
        }
    }
    let mut imputers: Vec<Box<dyn Imputer<f64>>> = Vec::new();
    let mut model_idx = 0;
    for spec in &specs {
        match spec {
            ImputerSpec::Spline(sg) => imputers.push(Box::new(SplineImputer { savgol: *sg })),
            ImputerSpec::Mean => imputers.push(Box::new(MeanImputer)),
            ImputerSpec::Fim { windowing, .. } => {
                imputers.push(Box::new(FimImputer { model: &models[model_idx], windowing: *windowing }));
                model_idx += 1;
            }
        }
    }
    let imputer_refs: Vec<&dyn Imputer<f64>> = imputers.iter().map(|b| b.as_ref()).collect();

    let rho_grid = match &args.rho_grid {
        Some(s) => parse_f64_list(s, "rho_grid")?,
        None => file.benchmark.rho_grid.clone().unwrap_or_else(|| vec![0.0, 0.5]),
    };
    let gamma_grid = match &args.gamma_grid {
        Some(s) => parse_f64_list(s, "gamma_grid")?,
        None => file.benchmark.gamma_grid.clone().unwrap_or_else(|| vec![0.0, 0.05]),
    };
    let mut corruptions = Vec::new();
    for &rho in &rho_grid {
        for &gamma in &gamma_grid {
            corruptions.push((rho, gamma));
        }
    }
    let mask_mode = match pick(
        args.mask_mode.clone(),
        file.benchmark.mask_mode.clone(),
        "all".into(),
    )
    .as_str()
    {
        "all" => MaskMode::All,
        "missing" => MaskMode::MissingOnly,
        other => return Err(invalid(format!("unknown mask mode {other:?} (all|missing)"))),
    };
    let cfg = BenchConfig {
        corruptions,
        n_seeds: pick(args.seeds, file.benchmark.seeds, 10),
        base_seed: args.seed,
        mask_mode,
    };
    let rows = fim_core::eval::benchmark(&trajectories, &imputer_refs, &cfg);
    report::write_bench_csv(&args.out, &rows)?;
    if let Some(json) = &args.json {
        report::write_bench_json(json, &rows)?;
    }
    if let Some(dir) = &args.svg_dir {
        std::fs::create_dir_all(dir).map_err(|e| AppError::Runtime(e.to_string()))?;
        write_benchmark_svgs(dir, &trajectories, &imputer_refs, &cfg)?;
    }
    println!("benchmark wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}

fn write_benchmark_svgs(
    dir: &Path,
    trajectories: &[(String, Trajectory<f64>)],
    imputers: &[&dyn Imputer<f64>],
    cfg: &BenchConfig,
) -> AppResult<()> {
    let &(rho, gamma) = cfg.corruptions.last().expect("non-empty grid");
    for (sys_idx, (name, clean)) in trajectories.iter().enumerate() {
        let spec = CorruptionSpec {
            rho,
            gamma,
            seed: fim_core::rng::mix(cfg.base_seed, &[sys_idx as u64, (cfg.corruptions.len() - 1) as u64, 0]),
        };
        let corrupted = match corrupt(clean, &spec) {
            Ok(c) => c,
            Err(_) => continue,
        };
        let truth = clean.channel(0);
        let mut curves: Vec<(String, Vec<f64>, Vec<f64>)> =
            vec![("truth(x1)".to_string(), clean.times.clone(), truth)];
        for imp in imputers {
            if let Ok(pred) = imp.impute(&corrupted.channels[0], &clean.times) {
                curves.push((imp.name(), clean.times.clone(), pred));
            }
        }
        let curve_refs: Vec<(&str, &[f64], &[f64])> =
            curves.iter().map(|(n, x, y)| (n.as_str(), x.as_slice(), y.as_slice())).collect();
        fim_core::eval::svg::write_line_plot(
            &dir.join(format!("{name}.svg")),
            &format!("{name} (rho={rho}, gamma={gamma})"),
            &curve_refs,
        )?;
    }
    Ok(())
}

pub fn phase(args: PhaseArgs, file: &FileConfig) -> AppResult<()> {
    let model = load_local_model(&args.weights)?;
    let series: TimeSeries<f64> = match (&args.input, &args.system) {
        (Some(path), None) => {
            let fmt = seriesio::SeriesFormat::from_path(path);
            let mut channels: Vec<TimeSeries<f64>> = seriesio::ingest_series(path, fmt)?;
            if channels.is_empty() {
                return Err(invalid("input has no channels"));
            }
            channels.remove(0).observed()
        }
        (None, Some(name)) => {
            let sys = build_system(name, None)?;
            let traj = rk4_simulate(&sys, &sys.default_x0.clone(), sys.default_span, 512)?;
            let rho = args.rho.unwrap_or(0.0);
            let gamma = args.gamma.unwrap_or(0.0);
            if rho > 0.0 || gamma > 0.0 {
                let seed =
                    args.seed.ok_or_else(|| invalid("corrupted input requires --seed"))?;
                let corrupted = corrupt(&traj, &CorruptionSpec { rho, gamma, seed })?;
                corrupted.channels[0].clone()
            } else {
                TimeSeries::new(traj.times.clone(), traj.channel(0))?
            }
        }
        _ => return Err(invalid("give exactly one of --input or --system")),
    };
    let depth = pick(args.depth, file.phase.depth, 1);
    if !(1..=2).contains(&depth) {
        return Err(invalid("--depth must be 1 or 2"));
    }
    let cfg = PhaseConfig {
        windowing: Windowing::ByCount(pick(args.windows, file.phase.windows, 4).max(1)),
        plot_grid: pick(args.grid, file.phase.grid, 2048).max(16),
        depth2_grid: pick(args.depth2_grid, file.phase.depth2_grid, 8192).max(64),
        depth2_windows: pick(args.depth2_windows, file.phase.depth2_windows, 64).max(1),
    };
    let cols = fim_core::eval::phase_portrait(&model, &series, depth, &cfg)?;
    let mut out = String::from(if cols.ddx.is_some() { "t,x,dx,ddx\n" } else { "t,x,dx\n" });
    for i in 0..cols.t.len() {
        match &cols.ddx {
            Some(ddx) => {
                let _ = writeln!(out, "{},{},{},{}", cols.t[i], cols.x[i], cols.dx[i], ddx[i]);
            }
            None => {
                let _ = writeln!(out, "{},{},{}", cols.t[i], cols.x[i], cols.dx[i]);
            }
        }
    }
    write_atomic(&args.out, out.as_bytes())?;
    println!("phase portrait ({} points, depth {depth}) at {}", cols.t.len(), args.out.display());
    Ok(())
}
