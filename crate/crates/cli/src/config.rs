//! Declarative run configuration: a TOML tree whose values sit below
//! command-line flags in precedence (flags > file > built-in defaults).
//! Unknown keys are rejected.

use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub threads: Option<usize>,
    #[serde(default)]
    pub generate: GenerateSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub impute: ImputeSection,
    #[serde(default)]
    pub benchmark: BenchmarkSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default, rename = "phase-portrait")]
    pub phase: PhaseSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub kind: Option<String>,
    pub n: Option<u64>,
    pub fine_grid: Option<usize>,
    pub noise_lambda: Option<f64>,
    pub family_mix: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub stage: Option<String>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub lr_cosine: Option<(f64, f64)>,
    pub weight_decay: Option<f64>,
    pub val_fraction: Option<f64>,
    pub grad_clip: Option<f64>,
    pub net: Option<String>,
    pub windows: Option<usize>,
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImputeSection {
    pub mode: Option<String>,
    pub windows: Option<usize>,
    pub window_obs: Option<usize>,
    pub grid: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub systems: Option<Vec<String>>,
    pub imputers: Option<Vec<String>>,
    pub rho_grid: Option<Vec<f64>>,
    pub gamma_grid: Option<Vec<f64>>,
    pub seeds: Option<u64>,
    pub points: Option<usize>,
    pub mask_mode: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub system: Option<String>,
    pub t: Option<f64>,
    pub points: Option<usize>,
    pub mu: Option<f64>,
    pub rho: Option<f64>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSection {
    pub depth: Option<u8>,
    pub windows: Option<usize>,
    pub grid: Option<usize>,
    pub depth2_grid: Option<usize>,
    pub depth2_windows: Option<usize>,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig, String> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
            toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", p.display()))
        }
    }
}

/// flags > file > default
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn pick_opt<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}
