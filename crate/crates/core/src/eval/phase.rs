//! Phase-portrait data extraction: state/derivative columns from a single
//! observed coordinate, with an optional second application of the model to
//! estimate the second derivative.

use crate::error::Result;
use crate::fim_local::{compose_windows, FimLocal, Windowing};
use crate::scalar::Real;
use crate::series::TimeSeries;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct PhaseColumns<F> {
    pub t: Vec<F>,
    pub x: Vec<F>,
    pub dx: Vec<F>,
    /// Present at depth 2 only.
    pub ddx: Option<Vec<F>>,
}

#[derive(Debug, Clone, Copy)]
pub struct PhaseConfig {
    pub windowing: Windowing,
    /// Plotting-grid length of the emitted columns.
    pub plot_grid: usize,
    /// Dense grid on which the inferred derivative is discretized before
    /// the second application.
    pub depth2_grid: usize,
    /// Window count for the second application.
    pub depth2_windows: usize,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            windowing: Windowing::ByCount(4),
            plot_grid: 2048,
            depth2_grid: 8192,
            depth2_windows: 64,
        }
    }
}

/// Depth 1 emits `(x, dx)` on the plotting grid; depth 2 discretizes the
/// inferred derivative on a dense grid, re-applies the model to it and
/// emits `(x, dx, ddx)`.
pub fn phase_portrait<F: Real>(
    model: &FimLocal<F>,
    series: &TimeSeries<F>,
    depth: u8,
    cfg: &PhaseConfig,
) -> Result<PhaseColumns<F>> {
    let composed = compose_windows(model, series, cfg.windowing)?;
    let t = composed.grid(cfg.plot_grid);
    let (x, dx, _) = composed.sample(&t);
    if depth < 2 {
        return Ok(PhaseColumns { t, x, dx, ddx: None });
    }
    let dense_t = composed.grid(cfg.depth2_grid);
    let (_, dense_f, _) = composed.sample(&dense_t);
    let derivative_series = TimeSeries::new(dense_t, dense_f)?;
    let second = compose_windows(model, &derivative_series, Windowing::ByCount(cfg.depth2_windows))?;
    let ddx = t.iter().map(|&ti| second.f_at(ti).0).collect();
    Ok(PhaseColumns { t, x, dx, ddx: Some(ddx) })
}
