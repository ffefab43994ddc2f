//! Ingestion and export of external time series (CSV and JSON-lines) and
//! trajectory/imputation output files.

use crate::error::{Error, Result};
use crate::fim_local::NormalizationParams;
use crate::odesim::Trajectory;
use crate::scalar::Real;
use crate::series::TimeSeries;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesFormat {
    Csv,
    Jsonl,
}

impl SeriesFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => SeriesFormat::Jsonl,
            _ => SeriesFormat::Csv,
        }
    }
}

/// One multichannel series block in the JSONL format.
#[derive(Debug, Serialize, Deserialize)]
struct SeriesLine {
    t: Vec<f64>,
    channels: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<Vec<Vec<bool>>>,
}

fn validate_times(times: &[f64], location: &str) -> Result<()> {
    for (i, w) in times.windows(2).enumerate() {
        if w[1] == w[0] {
            return Err(Error::Parse {
                location: format!("{location}, row {}", i + 2),
                reason: format!("duplicate timestamp {}", w[0]),
            });
        }
        if w[1] < w[0] {
            return Err(Error::Parse {
                location: format!("{location}, row {}", i + 2),
                reason: format!("times not increasing: {} after {}", w[1], w[0]),
            });
        }
    }
    Ok(())
}

/// Parse a CSV with a time column followed by one or more value columns.
/// Empty cells and `NaN` become mask zeros.
pub fn ingest_csv<F: Real>(path: &Path) -> Result<Vec<TimeSeries<F>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse { location: path.display().to_string(), reason: e.to_string() })?;
    let n_cols = reader.headers().map(|h| h.len()).unwrap_or(0);
    if n_cols < 2 {
        return Err(Error::Parse {
            location: path.display().to_string(),
            reason: "need a time column and at least one value column".into(),
        });
    }
    let n_ch = n_cols - 1;
    let mut times: Vec<f64> = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n_ch];
    let mut masks: Vec<Vec<bool>> = vec![Vec::new(); n_ch];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            location: format!("{}, row {}", path.display(), row_idx + 2),
            reason: e.to_string(),
        })?;
        let t: f64 = record
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::Parse {
                location: format!("{}, row {}", path.display(), row_idx + 2),
                reason: format!("bad time value {:?}", record.get(0)),
            })?;
        times.push(t);
        for ch in 0..n_ch {
            let cell = record.get(ch + 1).unwrap_or("");
            if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                values[ch].push(0.0);
                masks[ch].push(false);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    location: format!("{}, row {}", path.display(), row_idx + 2),
                    reason: format!("bad value {cell:?} in column {}", ch + 2),
                })?;
                values[ch].push(v);
                masks[ch].push(v.is_finite());
            }
        }
    }
    validate_times(&times, &path.display().to_string())?;
    let tf: Vec<F> = times.iter().map(|&t| F::of(t)).collect();
    (0..n_ch)
        .map(|ch| {
            TimeSeries::with_mask(
                tf.clone(),
                values[ch].iter().map(|&v| F::of(v)).collect(),
                Some(masks[ch].clone()),
            )
        })
        .collect()
}

/// Parse JSON-lines series blocks; channels of every block are returned in
/// file order.
pub fn ingest_jsonl<F: Real>(path: &Path) -> Result<Vec<TimeSeries<F>>> {
    let content = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let block: SeriesLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            location: format!("{}:{}", path.display(), i + 1),
            reason: e.to_string(),
        })?;
        validate_times(&block.t, &format!("{}:{}", path.display(), i + 1))?;
        let tf: Vec<F> = block.t.iter().map(|&t| F::of(t)).collect();
        for (ch, vals) in block.channels.iter().enumerate() {
            if vals.len() != tf.len() {
                return Err(Error::Parse {
                    location: format!("{}:{}", path.display(), i + 1),
                    reason: format!("channel {ch} length mismatch"),
                });
            }
            let mask = block.mask.as_ref().map(|m| m[ch].clone());
            out.push(TimeSeries::with_mask(
                tf.clone(),
                vals.iter().map(|&v| F::of(v)).collect(),
                mask,
            )?);
        }
    }
    Ok(out)
}

pub fn ingest_series<F: Real>(path: &Path, format: SeriesFormat) -> Result<Vec<TimeSeries<F>>> {
    match format {
        SeriesFormat::Csv => ingest_csv(path),
        SeriesFormat::Jsonl => ingest_jsonl(path),
    }
}

/// Export channels sharing a time base as a CSV (`t, x1..xD`); missing
/// points become empty cells.
pub fn export_series_csv<F: Real>(path: &Path, channels: &[TimeSeries<F>]) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::Series("nothing to export".into()));
    }
    let times = &channels[0].times;
    let mut out = String::from("t");
    for i in 0..channels.len() {
        let _ = write!(out, ",x{}", i + 1);
    }
    out.push('\n');
    for (row, &t) in times.iter().enumerate() {
        let _ = write!(out, "{}", t.to_f64x());
        for ch in channels {
            let present = ch.mask.as_ref().map_or(true, |m| m[row]);
            if present {
                let _ = write!(out, ",{}", ch.values[row].to_f64x());
            } else {
                out.push(',');
            }
        }
        out.push('\n');
    }
    super::write_atomic(path, out.as_bytes())
}

/// Trajectory export: `t, x1..xD` plus 0/1 mask columns when provided.
pub fn export_trajectory_csv<F: Real>(
    path: &Path,
    traj: &Trajectory<F>,
    kept: Option<&[bool]>,
) -> Result<()> {
    let d = traj.dim();
    let mut out = String::from("t");
    for i in 0..d {
        let _ = write!(out, ",x{}", i + 1);
    }
    if kept.is_some() {
        for i in 0..d {
            let _ = write!(out, ",m{}", i + 1);
        }
    }
    out.push('\n');
    for (i, &t) in traj.times.iter().enumerate() {
        let _ = write!(out, "{}", t.to_f64x());
        for v in &traj.states[i] {
            let _ = write!(out, ",{}", v.to_f64x());
        }
        if let Some(k) = kept {
            for _ in 0..d {
                let _ = write!(out, ",{}", u8::from(k[i]));
            }
        }
        out.push('\n');
    }
    super::write_atomic(path, out.as_bytes())
}

/// Self-contained gap-imputation request: a multichannel series, the gap
/// interval, and optionally the subset of channels to impute.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapRequest {
    pub series: GapRequestSeries,
    pub gap: (f64, f64),
    #[serde(default)]
    pub channels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapRequestSeries {
    pub t: Vec<f64>,
    pub channels: Vec<Vec<f64>>,
    #[serde(default)]
    pub mask: Option<Vec<Vec<bool>>>,
}

/// Parse a gap-imputation request file; returns the selected channel
/// series and the gap interval.
pub fn ingest_gap_request<F: Real>(path: &Path) -> Result<(Vec<TimeSeries<F>>, (f64, f64))> {
    let text = std::fs::read_to_string(path)?;
    let req: GapRequest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        location: path.display().to_string(),
        reason: e.to_string(),
    })?;
    validate_times(&req.series.t, &path.display().to_string())?;
    if req.gap.0 >= req.gap.1 {
        return Err(Error::Parse {
            location: path.display().to_string(),
            reason: "gap interval must satisfy lo < hi".into(),
        });
    }
    let tf: Vec<F> = req.series.t.iter().map(|&t| F::of(t)).collect();
    let selected: Vec<usize> = match &req.channels {
        None => (0..req.series.channels.len()).collect(),
        Some(idx) => idx.clone(),
    };
    let mut out = Vec::with_capacity(selected.len());
    for &ch in &selected {
        let vals = req.series.channels.get(ch).ok_or_else(|| Error::Parse {
            location: path.display().to_string(),
            reason: format!("channel index {ch} out of range"),
        })?;
        if vals.len() != tf.len() {
            return Err(Error::Parse {
                location: path.display().to_string(),
                reason: format!("channel {ch} length mismatch"),
            });
        }
        let mask = req.series.mask.as_ref().map(|m| m[ch].clone());
        out.push(TimeSeries::with_mask(
            tf.clone(),
            vals.iter().map(|&v| F::of(v)).collect(),
            mask,
        )?);
    }
    Ok((out, req.gap))
}

/// Per-channel imputation output block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelOutput {
    pub channel: usize,
    pub t: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub f_hat: Vec<f64>,
    pub f_log_var: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormalizationParams<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImputationOutput {
    pub mode: String,
    pub channels: Vec<ChannelOutput>,
}

pub fn write_imputation_json(path: &Path, output: &ImputationOutput) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(output)?;
    bytes.push(b'\n');
    super::write_atomic(path, &bytes)
}

/// CSV flattening of the same values: `channel, t, x_hat, f_hat, f_log_var`.
pub fn write_imputation_csv(path: &Path, output: &ImputationOutput) -> Result<()> {
    let mut out = String::from("channel,t,x_hat,f_hat,f_log_var\n");
    for ch in &output.channels {
        for i in 0..ch.t.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                ch.channel, ch.t[i], ch.x_hat[i], ch.f_hat[i], ch.f_log_var[i]
            );
        }
    }
    super::write_atomic(path, out.as_bytes())
}
