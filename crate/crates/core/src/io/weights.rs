//! Weight files: a JSON header (names, shapes, dtype, config echo) followed
//! by the concatenated little-endian float payload.

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::recnet::NetConfig;
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::train::TrainState;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"FIMW";
pub const WEIGHTS_VERSION: u8 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightHeader {
    pub dtype: String,
    pub stage: String,
    pub config: NetConfig,
    pub params: Vec<(String, Vec<usize>)>,
    #[serde(default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// Serialize a parameter store. `dtype` is `"f32"` (default interchange
/// format) or `"f64"` (used by exact-resume checkpoints).
pub fn save_weights<F: Real>(
    path: &Path,
    store: &ParameterStore<F>,
    config: NetConfig,
    stage: &str,
    dtype: &str,
    extra: serde_json::Map<String, serde_json::Value>,
) -> Result<()> {
    if dtype != "f32" && dtype != "f64" {
        return Err(Error::Weights(format!("unsupported dtype {dtype}")));
    }
    let header = WeightHeader {
        dtype: dtype.to_string(),
        stage: stage.to_string(),
        config,
        params: store.iter().map(|(n, t)| (n.to_string(), t.shape.clone())).collect(),
        extra,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.push(WEIGHTS_VERSION);
    buf.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    for (_, t) in store.iter() {
        for &v in &t.data {
            if dtype == "f32" {
                buf.extend_from_slice(&(v.to_f64x() as f32).to_le_bytes());
            } else {
                buf.extend_from_slice(&v.to_f64x().to_le_bytes());
            }
        }
    }
    super::write_atomic(path, &buf)
}

pub fn load_weights<F: Real>(path: &Path) -> Result<(WeightHeader, ParameterStore<F>)> {
    let mut file = std::fs::File::open(path)?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)?;
    if buf.len() < 9 || &buf[0..4] != WEIGHTS_MAGIC {
        return Err(Error::Weights(format!("{}: not a FIMW file", path.display())));
    }
    if buf[4] != WEIGHTS_VERSION {
        return Err(Error::Weights(format!("unsupported FIMW version {}", buf[4])));
    }
    let hlen = u32::from_le_bytes(buf[5..9].try_into().unwrap()) as usize;
    if buf.len() < 9 + hlen {
        return Err(Error::Weights("truncated header".into()));
    }
    let header: WeightHeader = serde_json::from_slice(&buf[9..9 + hlen])?;
    let word = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::Weights(format!("unsupported dtype {other}"))),
    };
    let mut pos = 9 + hlen;
    let mut store = ParameterStore::new();
    for (name, shape) in &header.params {
        let n: usize = shape.iter().product();
        if pos + n * word > buf.len() {
            return Err(Error::Weights(format!("truncated payload at {name}")));
        }
        let mut data = Vec::with_capacity(n);
        for k in 0..n {
            let off = pos + k * word;
            let v = if word == 4 {
                f32::from_le_bytes(buf[off..off + 4].try_into().unwrap()) as f64
            } else {
                f64::from_le_bytes(buf[off..off + 8].try_into().unwrap())
            };
            data.push(F::of(v));
        }
        pos += n * word;
        store.insert(name, Tensor::new(data, shape.clone()));
    }
    if pos != buf.len() {
        return Err(Error::Weights("trailing bytes after payload".into()));
    }
    Ok((header, store))
}

/// Exact-resume checkpoint: f64 weights plus optimizer moments, all in one
/// store with `opt.m.` / `opt.v.` prefixes.
pub fn save_checkpoint<F: Real>(
    path: &Path,
    state: &TrainState<F>,
    config: NetConfig,
    stage: &str,
) -> Result<()> {
    let mut combined = ParameterStore::new();
    for (n, t) in state.params.iter() {
        combined.insert(n, t.clone());
    }
    for (n, t) in state.opt_m.iter() {
        combined.insert(&format!("opt.m.{n}"), t.clone());
    }
    for (n, t) in state.opt_v.iter() {
        combined.insert(&format!("opt.v.{n}"), t.clone());
    }
    let mut extra = serde_json::Map::new();
    extra.insert("epoch".into(), serde_json::json!(state.epoch));
    extra.insert("opt_step".into(), serde_json::json!(state.opt_step));
    extra.insert("checkpoint".into(), serde_json::json!(true));
    save_weights(path, &combined, config, stage, "f64", extra)
}

pub fn load_checkpoint<F: Real>(path: &Path) -> Result<(WeightHeader, TrainState<F>)> {
    let (header, combined) = load_weights::<F>(path)?;
    let mut params = ParameterStore::new();
    let mut opt_m = ParameterStore::new();
    let mut opt_v = ParameterStore::new();
    for (n, t) in combined.iter() {
        if let Some(rest) = n.strip_prefix("opt.m.") {
            opt_m.insert(rest, t.clone());
        } else if let Some(rest) = n.strip_prefix("opt.v.") {
            opt_v.insert(rest, t.clone());
        } else {
            params.insert(n, t.clone());
        }
    }
    let epoch = header.extra.get("epoch").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
    let opt_step = header.extra.get("opt_step").and_then(|v| v.as_u64()).unwrap_or(0);
    if opt_m.len() != params.len() || opt_v.len() != params.len() {
        return Err(Error::Weights("checkpoint is missing optimizer moments".into()));
    }
    Ok((header, TrainState { params, opt_m, opt_v, opt_step, epoch }))
}
