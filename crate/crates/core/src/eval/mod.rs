//! Evaluation: metrics, classical baselines, the corruption benchmark
//! harness and phase-portrait extraction.

pub mod bench;
pub mod metrics;
pub mod phase;
pub mod spline;
pub mod svg;

pub use bench::{benchmark, BenchConfig, BenchRow, FimImputer, Imputer, MeanImputer, SplineImputer};
pub use metrics::{metrics, metrics_1d, MaskMode, MetricReport, MetricValues};
pub use phase::{phase_portrait, PhaseColumns, PhaseConfig};
pub use spline::{savgol_smooth, spline_baseline, CubicSpline, Savgol};
