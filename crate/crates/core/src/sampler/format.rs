//! PSD1 binary dataset files (little-endian) and their JSON sidecars.
//!
//! ```text
//! magic "PDESURD1" | version u32 = 1 | task u32 | d u32 | n u32 | count u64
//! low f64 | high f64 | seed u64 | solver tol f64
//! count x (n^d f64 inputs, f64 target)
//! whitening flag u8 [, n^d f64 means, n^d f64 stds]
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, LabelSettings, SamplingSpec, Task, WhitenStats};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::nlse::HomotopyOptions;

pub const MAGIC: &[u8; 8] = b"PDESURD1";
pub const VERSION: u32 = 1;

pub fn to_bytes(ds: &Dataset) -> Vec<u8> {
    let dim = ds.input_dim();
    let mut out = Vec::with_capacity(64 + ds.len() * (dim + 1) * 8 + 1 + 2 * dim * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&ds.spec.task.code().to_le_bytes());
    out.extend_from_slice(&(ds.spec.grid.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.spec.grid.n() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    out.extend_from_slice(&ds.spec.low.to_le_bytes());
    out.extend_from_slice(&ds.spec.high.to_le_bytes());
    out.extend_from_slice(&ds.spec.seed.to_le_bytes());
    out.extend_from_slice(&ds.settings.tol.to_le_bytes());
    for k in 0..ds.len() {
        for v in ds.input(k) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&ds.targets[k].to_le_bytes());
    }
    match &ds.whitening {
        Some(w) => {
            out.push(1);
            for v in w.mean.iter().chain(&w.std) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        None => out.push(0),
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Dataset> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("bad magic, not a PSD1 dataset".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let task = Task::from_code(r.u32()?)?;
    let d = r.u32()? as usize;
    let n = r.u32()? as usize;
    let grid = GridSpec::new(d, n).map_err(|e| Error::Format(e.to_string()))?;
    let count = usize::try_from(r.u64()?).map_err(|_| Error::Format("count overflows".into()))?;
    let low = r.f64()?;
    let high = r.f64()?;
    let seed = r.u64()?;
    let tol = r.f64()?;

    let dim = grid.len();
    let mut inputs = Vec::with_capacity(count.saturating_mul(dim).min(buf.len() / 8));
    let mut targets = Vec::with_capacity(count.min(buf.len() / 8));
    for _ in 0..count {
        inputs.extend(r.f64s(dim)?);
        targets.push(r.f64()?);
    }
    let whitening = match r.take(1) {
        Err(_) | Ok([0]) => None,
        Ok([1]) => Some(WhitenStats {
            mean: r.f64s(dim)?,
            std: r.f64s(dim)?,
        }),
        Ok(flag) => return Err(Error::Format(format!("bad whitening flag {}", flag[0]))),
    };
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(Dataset {
        spec: SamplingSpec {
            task,
            grid,
            low,
            high,
            count,
            seed,
        },
        settings: LabelSettings {
            tol,
            homotopy: HomotopyOptions {
                tol,
                ..HomotopyOptions::default()
            },
        },
        inputs,
        targets,
        whitening,
    })
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    fs::write(path, to_bytes(ds))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    from_bytes(&fs::read(path)?)
}

/// Human-readable metadata written next to a PSD1 file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub spec: SamplingSpec,
    pub settings: LabelSettings,
    pub xi: String,
    pub target_mean: f64,
    pub target_std: f64,
    pub whitened: bool,
    pub generator: String,
}

impl Sidecar {
    pub fn describe(ds: &Dataset) -> Self {
        let (target_mean, target_std) = crate::analysis::mean_std(&ds.targets);
        Self {
            format: "PDESURD1 v1".into(),
            spec: ds.spec,
            settings: ds.settings,
            xi: "e_1".into(),
            target_mean,
            target_std,
            whitened: ds.whitening.is_some(),
            generator: concat!("pde-surrogate ", env!("CARGO_PKG_VERSION")).into(),
        }
    }
}

pub fn write_sidecar(path: &Path, ds: &Dataset) -> Result<()> {
    let json = serde_json::to_string_pretty(&Sidecar::describe(ds))?;
    fs::write(path, json + "\n")?;
    Ok(())
}
