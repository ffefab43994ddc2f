//! Zero-shot imputation of ODE-governed time series.
//!
//! The toolkit covers the full desk-scale pipeline: sampling synthetic
//! training data from hierarchical function priors, a differentiable
//! recognition model that infers initial conditions and time derivatives
//! from noisy observations, supervised training, windowed composition for
//! series of any length and dimensionality, temporal-gap imputation, and a
//! corruption-and-score benchmark harness with classical baselines.
//!
//! All numeric code is generic over the scalar type via [`scalar::Real`]
//! (`f32` or `f64`); concrete `f64` aliases live at the crate root.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod fim_gap;
pub mod fim_local;
pub mod io;
pub mod odesim;
pub mod params;
pub mod recnet;
pub mod rng;
pub mod scalar;
pub mod series;
pub mod synthgen;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;

/// Concrete `f64` aliases for the main domain types.
pub type Tensor64 = tensor::Tensor<f64>;
pub type ParameterStore64 = params::ParameterStore<f64>;
pub type TimeSeries64 = series::TimeSeries<f64>;
pub type FineGridFunction64 = series::FineGridFunction<f64>;
pub type GenerationRecord64 = synthgen::GenerationRecord<f64>;
pub type FimLocal64 = fim_local::FimLocal<f64>;
pub type FimGap64 = fim_gap::FimGap<f64>;
