//! Random coefficient fields, labelled datasets and input whitening.
//!
//! The random stream of sample `k` is a ChaCha8 stream keyed by
//! `(seed, k)`, so a dataset is bit-identical whatever the worker count or
//! the order in which samples are labelled.

mod format;

pub use format::{read_dataset, write_dataset, write_sidecar, Sidecar, MAGIC as DATASET_MAGIC};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elliptic;
use crate::error::{Error, Result};
use crate::grid::{Direction, Field, GridSpec};
use crate::nlse::{self, HomotopyOptions};

/// Quantity used as the regression target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Discrete effective conductance along `e_1`.
    EllipticConductance,
    /// NLSE ground-state energy at `sigma`.
    NlseGroundState,
    /// Nodal harmonic mean, the closed-form 1D effective conductance.
    HarmonicMean1d,
}

impl Task {
    pub fn code(self) -> u32 {
        match self {
            Task::EllipticConductance => 1,
            Task::NlseGroundState => 2,
            Task::HarmonicMean1d => 3,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(Task::EllipticConductance),
            2 => Ok(Task::NlseGroundState),
            3 => Ok(Task::HarmonicMean1d),
            other => Err(Error::Format(format!("unknown task code {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub task: Task,
    pub grid: GridSpec,
    pub low: f64,
    pub high: f64,
    pub count: usize,
    pub seed: u64,
}

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.low <= self.high) || !self.low.is_finite() || !self.high.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "need low <= high, got [{}, {}]",
                self.low, self.high
            )));
        }
        if self.task != Task::NlseGroundState && self.low <= 0.0 {
            return Err(Error::InvalidConfig("conductivities must be positive".into()));
        }
        if self.task == Task::HarmonicMean1d && self.grid.dim() != 1 {
            return Err(Error::InvalidConfig("harmonic-mean labels need d = 1".into()));
        }
        if self.count == 0 {
            return Err(Error::InvalidConfig("count must be positive".into()));
        }
        Ok(())
    }
}

/// Solver settings used to label a dataset; recorded alongside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelSettings {
    pub tol: f64,
    pub homotopy: HomotopyOptions,
}

impl Default for LabelSettings {
    fn default() -> Self {
        Self {
            tol: elliptic::DEFAULT_TOL,
            homotopy: HomotopyOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitenStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SamplingSpec,
    pub settings: LabelSettings,
    /// `count` rows of `n^d` values, row-major multi-index order.
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub whitening: Option<WhitenStats>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.spec.grid.len()
    }

    pub fn input(&self, k: usize) -> &[f64] {
        let d = self.input_dim();
        &self.inputs[k * d..(k + 1) * d]
    }

    pub fn field(&self, k: usize) -> Field {
        Field::from_vec_unchecked(self.spec.grid, self.input(k).to_vec())
    }
}

/// Sample `index` of `spec`: i.i.d. `U[low, high)` entries.
pub fn sample_field(spec: &SamplingSpec, index: usize) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let width = spec.high - spec.low;
    let values = (0..spec.grid.len())
        .map(|_| {
            if width == 0.0 {
                spec.low
            } else {
                spec.low + width * rng.gen::<f64>()
            }
        })
        .collect();
    Field::from_vec_unchecked(spec.grid, values)
}

/// Label one coefficient field with the solver selected by `task`.
pub fn label(task: Task, a: &Field, settings: &LabelSettings) -> Result<f64> {
    match task {
        Task::EllipticConductance => {
            let xi = Direction::axis(a.grid().dim(), 0);
            elliptic::effective_conductance(a, &xi, settings.tol)
        }
        Task::NlseGroundState => Ok(nlse::ground_state_homotopy(a, &settings.homotopy)?.e0),
        Task::HarmonicMean1d => elliptic::harmonic_mean_1d(a),
    }
}

/// Sample and label `spec.count` fields on `workers` threads. Output order is
/// index order; any failed sample aborts with the full list of failures.
pub fn generate_dataset(spec: &SamplingSpec, settings: &LabelSettings, workers: usize) -> Result<Dataset> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Vec<(Field, Result<f64>)> = pool.install(|| {
        (0..spec.count)
            .into_par_iter()
            .map(|k| {
                let a = sample_field(spec, k);
                let y = label(spec.task, &a, settings);
                (a, y)
            })
            .collect()
    });

    let mut inputs = Vec::with_capacity(spec.count * spec.grid.len());
    let mut targets = Vec::with_capacity(spec.count);
    let mut failed = Vec::new();
    let mut first = None;
    for (k, (a, y)) in results.into_iter().enumerate() {
        match y {
            Ok(t) if t.is_finite() => targets.push(t),
            Ok(t) => {
                failed.push(k);
                first.get_or_insert_with(|| format!("sample {k}: non-finite target {t}"));
            }
            Err(e) => {
                failed.push(k);
                first.get_or_insert_with(|| format!("sample {k}: {e}"));
            }
        }
        inputs.extend_from_slice(a.values());
    }
    if !failed.is_empty() {
        return Err(Error::SampleFailures {
            indices: failed,
            first: first.unwrap_or_default(),
        });
    }
    Ok(Dataset {
        spec: *spec,
        settings: *settings,
        inputs,
        targets,
        whitening: None,
    })
}

/// Per-dimension mean and population standard deviation of `inputs`
/// (`count` rows of `dim` values).
pub fn compute_whiten_stats(inputs: &[f64], dim: usize) -> Result<WhitenStats> {
    if dim == 0 || inputs.len() % dim != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} values do not form rows of {dim}",
            inputs.len()
        )));
    }
    let count = inputs.len() / dim;
    if count < 2 {
        return Err(Error::InvalidConfig("whitening needs at least two samples".into()));
    }
    let mut mean = vec![0.0; dim];
    for row in inputs.chunks_exact(dim) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = vec![0.0; dim];
    for row in inputs.chunks_exact(dim) {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let mut std = Vec::with_capacity(dim);
    for (i, v) in var.into_iter().enumerate() {
        let s = (v / count as f64).sqrt();
        if !(s > 0.0) {
            return Err(Error::ZeroVariance(i));
        }
        std.push(s);
    }
    Ok(WhitenStats { mean, std })
}

/// `(x - mean) / std` per dimension, for one row or a stack of rows.
pub fn apply_whitening(inputs: &[f64], stats: &WhitenStats) -> Result<Vec<f64>> {
    let dim = stats.mean.len();
    if inputs.len() % dim != 0 {
        return Err(Error::ShapeMismatch(format!(
            "input length {} is not a multiple of {dim}",
            inputs.len()
        )));
    }
    Ok(inputs
        .chunks_exact(dim)
        .flat_map(|row| {
            row.iter()
                .zip(&stats.mean)
                .zip(&stats.std)
                .map(|((x, m), s)| (x - m) / s)
        })
        .collect())
}

pub fn apply_whitening_field(field: &Field, stats: &WhitenStats) -> Result<Field> {
    Ok(Field::from_vec_unchecked(
        *field.grid(),
        apply_whitening(field.values(), stats)?,
    ))
}

pub fn unwhiten(inputs: &[f64], stats: &WhitenStats) -> Result<Vec<f64>> {
    let dim = stats.mean.len();
    if inputs.len() % dim != 0 {
        return Err(Error::ShapeMismatch("input length not a multiple of dimension".into()));
    }
    Ok(inputs
        .chunks_exact(dim)
        .flat_map(|row| {
            row.iter()
                .zip(&stats.mean)
                .zip(&stats.std)
                .map(|((x, m), s)| x * s + m)
        })
        .collect())
}
