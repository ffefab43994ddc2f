//! Dataset persistence: JSON-lines (one record per line, reals as 64-bit
//! decimal text) and a packed little-endian binary variant for bulk
//! training.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::series::FineGridFunction;
use crate::synthgen::{FunctionFamily, GenerationRecord, GridScheme, ObservationGrid};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const BINARY_MAGIC: &[u8; 4] = b"FIMD";
pub const BINARY_VERSION: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    seed: u64,
    family: FunctionFamily,
    sigma: f64,
    fine_grid_len: usize,
    f: Vec<f64>,
    x: Vec<f64>,
    obs_idx: Vec<usize>,
    y: Vec<f64>,
    gap: Option<(usize, usize)>,
}

impl RecordLine {
    fn from_record<F: Real>(r: &GenerationRecord<F>) -> Self {
        Self {
            seed: r.seed,
            family: r.family,
            sigma: r.sigma.to_f64x(),
            fine_grid_len: r.f.grid_len(),
            f: r.f.values.iter().map(|v| v.to_f64x()).collect(),
            x: r.x.values.iter().map(|v| v.to_f64x()).collect(),
            obs_idx: r.grid.indices.clone(),
            y: r.y.iter().map(|v| v.to_f64x()).collect(),
            gap: r.grid.gap,
        }
    }

    /// Rebuild a record. The sampling scheme is not stored in the file;
    /// it is inferred (exact for arithmetic progressions) since training
    /// never consumes it.
    fn into_record<F: Real>(self, index: u64) -> Result<GenerationRecord<F>> {
        if self.f.len() != self.fine_grid_len || self.x.len() != self.fine_grid_len {
            return Err(Error::Parse {
                location: format!("record {index}"),
                reason: "fine-grid arrays disagree with fine_grid_len".into(),
            });
        }
        if self.obs_idx.len() != self.y.len() {
            return Err(Error::Parse {
                location: format!("record {index}"),
                reason: "obs_idx and y lengths differ".into(),
            });
        }
        let scheme = infer_scheme(&self.obs_idx, self.fine_grid_len);
        let x0 = F::of(self.x[0]);
        Ok(GenerationRecord {
            index,
            seed: self.seed,
            family: self.family,
            f: FineGridFunction::new(self.f.into_iter().map(F::of).collect()),
            x: FineGridFunction::new(self.x.into_iter().map(F::of).collect()),
            x0,
            grid: ObservationGrid { indices: self.obs_idx, scheme, gap: self.gap },
            y: self.y.into_iter().map(F::of).collect(),
            sigma: F::of(self.sigma),
        })
    }
}

fn infer_scheme(indices: &[usize], fine_grid_len: usize) -> GridScheme {
    if indices.len() >= 2 {
        let stride = indices[1] - indices[0];
        if stride > 0 && indices.windows(2).all(|w| w[1] - w[0] == stride) {
            return GridScheme::Regular { stride };
        }
    }
    GridScheme::Irregular { survival_prob: indices.len() as f64 / fine_grid_len as f64 }
}

/// Write records as JSON-lines via a temporary file.
pub fn write_jsonl<F: Real>(path: &Path, records: &[GenerationRecord<F>]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, &RecordLine::from_record(r))?;
        buf.push(b'\n');
    }
    super::write_atomic(path, &buf)
}

pub fn read_jsonl<F: Real>(path: &Path) -> Result<Vec<GenerationRecord<F>>> {
    let f = std::fs::File::open(path)?;
    let reader = BufReader::new(f);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            location: format!("{}:{}", path.display(), i + 1),
            reason: e.to_string(),
        })?;
        out.push(parsed.into_record(i as u64)?);
    }
    Ok(out)
}

fn put_f32s(buf: &mut Vec<u8>, vals: impl Iterator<Item = f64>, len: usize) {
    buf.extend_from_slice(&(len as u32).to_le_bytes());
    for v in vals {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Packed binary export: 32-bit floats, length-prefixed arrays.
pub fn write_binary<F: Real>(path: &Path, records: &[GenerationRecord<F>]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(BINARY_MAGIC);
    buf.push(BINARY_VERSION);
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        buf.extend_from_slice(&r.seed.to_le_bytes());
        buf.push(match r.family {
            FunctionFamily::ChebyshevRand => 0,
            FunctionFamily::GpRbf => 1,
            FunctionFamily::GpPeriodic => 2,
        });
        buf.extend_from_slice(&(r.sigma.to_f64x() as f32).to_le_bytes());
        buf.extend_from_slice(&(r.f.grid_len() as u32).to_le_bytes());
        match r.grid.gap {
            None => buf.push(0),
            Some((lo, hi)) => {
                buf.push(1);
                buf.extend_from_slice(&(lo as u32).to_le_bytes());
                buf.extend_from_slice(&(hi as u32).to_le_bytes());
            }
        }
        put_f32s(&mut buf, r.f.values.iter().map(|v| v.to_f64x()), r.f.grid_len());
        put_f32s(&mut buf, r.x.values.iter().map(|v| v.to_f64x()), r.x.grid_len());
        buf.extend_from_slice(&(r.grid.indices.len() as u32).to_le_bytes());
        for &i in &r.grid.indices {
            buf.extend_from_slice(&(i as u32).to_le_bytes());
        }
        put_f32s(&mut buf, r.y.iter().map(|v| v.to_f64x()), r.y.len());
    }
    super::write_atomic(path, &buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse {
                location: format!("{}@{}", self.path, self.pos),
                reason: "unexpected end of file".into(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32_array(&mut self) -> Result<Vec<f32>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.f32()).collect()
    }
}

pub fn read_binary<F: Real>(path: &Path) -> Result<Vec<GenerationRecord<F>>> {
    let mut file = std::fs::File::open(path)?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0, path: path.display().to_string() };
    if c.take(4)? != BINARY_MAGIC {
        return Err(Error::Parse {
            location: path.display().to_string(),
            reason: "bad magic, not a FIMD file".into(),
        });
    }
    let version = c.u8()?;
    if version != BINARY_VERSION {
        return Err(Error::Parse {
            location: path.display().to_string(),
            reason: format!("unsupported FIMD version {version}"),
        });
    }
    let count = c.u64()?;
    let mut out = Vec::with_capacity(count as usize);
    for index in 0..count {
        let seed = c.u64()?;
        let family = match c.u8()? {
            0 => FunctionFamily::ChebyshevRand,
            1 => FunctionFamily::GpRbf,
            2 => FunctionFamily::GpPeriodic,
            other => {
                return Err(Error::Parse {
                    location: format!("record {index}"),
                    reason: format!("unknown family tag {other}"),
                })
            }
        };
        let sigma = c.f32()? as f64;
        let grid_len = c.u32()? as usize;
        let gap = match c.u8()? {
            0 => None,
            1 => Some((c.u32()? as usize, c.u32()? as usize)),
            other => {
                return Err(Error::Parse {
                    location: format!("record {index}"),
                    reason: format!("bad gap flag {other}"),
                })
            }
        };
        let f: Vec<F> = c.f32_array()?.into_iter().map(|v| F::of(v as f64)).collect();
        let x: Vec<F> = c.f32_array()?.into_iter().map(|v| F::of(v as f64)).collect();
        let n_idx = c.u32()? as usize;
        let indices: Result<Vec<usize>> = (0..n_idx).map(|_| Ok(c.u32()? as usize)).collect();
        let indices = indices?;
        let y: Vec<F> = c.f32_array()?.into_iter().map(|v| F::of(v as f64)).collect();
        if f.len() != grid_len || x.len() != grid_len {
            return Err(Error::Parse {
                location: format!("record {index}"),
                reason: "array length disagrees with fine_grid_len".into(),
            });
        }
        let x0 = x[0];
        let scheme = infer_scheme(&indices, grid_len);
        out.push(GenerationRecord {
            index,
            seed,
            family,
            f: FineGridFunction::new(f),
            x: FineGridFunction::new(x),
            x0,
            grid: ObservationGrid { indices, scheme, gap },
            y,
            sigma: F::of(sigma),
        });
    }
    Ok(out)
}

/// Stream records to a JSONL file as they are generated, skipping and
/// logging failures without reusing indices. Returns per-family counts.
pub fn generate_to_jsonl(
    cfg: &crate::synthgen::GenerationConfig,
    path: &Path,
) -> Result<[u64; 3]> {
    cfg.validate()?;
    let tmp = path.with_extension("jsonl.tmp");
    let mut counts = [0u64; 3];
    {
        let f = std::fs::File::create(&tmp)?;
        let mut w = BufWriter::new(f);
        for (j, rec) in crate::synthgen::generate_dataset::<f64>(cfg) {
            match rec {
                Ok(r) => {
                    counts[match r.family {
                        FunctionFamily::ChebyshevRand => 0,
                        FunctionFamily::GpRbf => 1,
                        FunctionFamily::GpPeriodic => 2,
                    }] += 1;
                    serde_json::to_writer(&mut w, &RecordLine::from_record(&r))?;
                    w.write_all(b"\n")?;
                }
                Err(e) => log::warn!("skipping record {j}: {e}"),
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_all, GenerationConfig};

    fn tmpdir() -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!(
            "fim-ds-{}-{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn jsonl_round_trip_preserves_values() {
        let dir = tmpdir();
        let path = dir.join("ds.jsonl");
        let records = generate_all::<f64>(&GenerationConfig::pointwise(6, 42)).unwrap();
        write_jsonl(&path, &records).unwrap();
        let loaded = read_jsonl::<f64>(&path).unwrap();
        assert_eq!(loaded.len(), records.len());
        for (a, b) in records.iter().zip(&loaded) {
            assert_eq!(a.seed, b.seed);
            assert_eq!(a.family, b.family);
            assert_eq!(a.f.values, b.f.values);
            assert_eq!(a.x.values, b.x.values);
            assert_eq!(a.grid.indices, b.grid.indices);
            assert_eq!(a.y, b.y);
            assert_eq!(a.sigma, b.sigma);
            assert_eq!(a.grid.gap, b.grid.gap);
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn binary_round_trip_at_f32_precision() {
        let dir = tmpdir();
        let path = dir.join("ds.fimd");
        let records = generate_all::<f64>(&GenerationConfig::temporal(4, 43)).unwrap();
        write_binary(&path, &records).unwrap();
        let loaded = read_binary::<f64>(&path).unwrap();
        assert_eq!(loaded.len(), records.len());
        for (a, b) in records.iter().zip(&loaded) {
            assert_eq!(a.seed, b.seed);
            assert_eq!(a.grid.gap, b.grid.gap);
            for (x, y) in a.f.values.iter().zip(&b.f.values) {
                assert!((x - y).abs() <= x.abs().max(1.0) * 1e-6);
            }
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tmpdir();
        let path = dir.join("bad.fimd");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(read_binary::<f64>(&path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
