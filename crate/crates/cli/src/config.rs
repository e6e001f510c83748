//! Declarative run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use pde_surrogate::nn::{self, NetworkSpec};
use pde_surrogate::sampler::{LabelSettings, SamplingSpec, Task};
use pde_surrogate::theory::VerifySettings;
use pde_surrogate::train::TrainConfig;
use pde_surrogate::GridSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One run of the pipeline. Sections are optional; each subcommand
/// requires its own. Relative paths resolve against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub dim: usize,
    pub n: usize,
    pub low: f64,
    pub high: f64,
    /// Base seed. Dataset split `k` uses `seed + k`; training and
    /// verification use `seed` directly.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub labels: LabelSettings,
    pub generate: Option<GenerateSection>,
    pub train: Option<TrainSection>,
    pub eval: Option<EvalSection>,
    pub verify: Option<VerifySection>,
    pub fit_reciprocal: Option<FitSection>,
    #[serde(skip)]
    hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub splits: Vec<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub output: PathBuf,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    SingleConv { alpha: usize },
    ThreeStage1d { width: usize, stage_depth: usize },
    Custom { spec: NetworkSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub train_data: PathBuf,
    pub validation_data: PathBuf,
    pub architecture: Architecture,
    #[serde(default)]
    pub optimizer: TrainConfig,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub predictions: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default)]
    pub settings: VerifySettings,
    pub report: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    #[serde(default = "default_fit_low")]
    pub low: f64,
    #[serde(default = "default_fit_high")]
    pub high: f64,
    #[serde(default = "default_fit_points")]
    pub points: usize,
}

fn default_fit_low() -> f64 {
    0.3
}

fn default_fit_high() -> f64 {
    1.5
}

fn default_fit_points() -> usize {
    200
}

impl RunConfig {
    /// Parse `path`, apply the seed override and resolve relative paths.
    /// Sections are validated when a subcommand asks for them.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.hash = hex::encode(Sha256::digest(serde_json::to_vec(&cfg)?));
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.propagate_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(g) = &mut self.generate {
            g.splits.iter_mut().for_each(|s| fix(&mut s.output));
        }
        if let Some(t) = &mut self.train {
            for p in [&mut t.train_data, &mut t.validation_data, &mut t.checkpoint, &mut t.metrics] {
                fix(p);
            }
        }
        if let Some(e) = &mut self.eval {
            for p in [&mut e.checkpoint, &mut e.dataset, &mut e.predictions] {
                fix(p);
            }
        }
        if let Some(v) = &mut self.verify {
            fix(&mut v.report);
        }
        if let Some(f) = &mut self.fit_reciprocal {
            fix(&mut f.checkpoint);
            fix(&mut f.curve);
        }
    }

    fn propagate_seed(&mut self) {
        if let Some(t) = &mut self.train {
            t.optimizer.seed = self.seed;
        }
        if let Some(v) = &mut self.verify {
            v.settings.seed = self.seed;
            v.settings.dim = self.dim;
            v.settings.n = self.n;
            v.settings.low = self.low;
            v.settings.high = self.high;
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        Ok(GridSpec::new(self.dim, self.n)?)
    }

    pub fn sampling_spec(&self, split: usize, count: usize) -> Result<SamplingSpec> {
        Ok(SamplingSpec {
            task: self.task,
            grid: self.grid()?,
            low: self.low,
            high: self.high,
            count,
            seed: self.seed.wrapping_add(split as u64),
        })
    }

    pub fn network_spec(&self, arch: &Architecture) -> Result<NetworkSpec> {
        Ok(match arch {
            Architecture::SingleConv { alpha } => nn::build_single_conv_arch(self.n, self.dim, *alpha)?,
            Architecture::ThreeStage1d { width, stage_depth } => {
                ensure!(self.dim == 1, "three_stage_1d needs dim = 1");
                nn::build_1d_three_stage_arch(self.n, *width, *stage_depth)?
            }
            Architecture::Custom { spec } => spec.clone(),
        })
    }

    fn validate(&self) -> Result<()> {
        self.grid()?;
        ensure!(
            self.low.is_finite() && self.high.is_finite() && self.low <= self.high,
            "need finite low <= high"
        );
        Ok(())
    }

    pub fn generate_section(&self) -> Result<&GenerateSection> {
        let g = self.generate.as_ref().context("config has no generate section")?;
        ensure!(!g.splits.is_empty(), "generate.splits is empty");
        for (k, s) in g.splits.iter().enumerate() {
            self.sampling_spec(k, s.count)?.validate()?;
            writable(&s.output)?;
        }
        Ok(g)
    }

    pub fn train_section(&self) -> Result<&TrainSection> {
        let t = self.train.as_ref().context("config has no train section")?;
        t.optimizer.validate()?;
        nn::Network::new(&self.network_spec(&t.architecture)?)?;
        readable(&t.train_data)?;
        readable(&t.validation_data)?;
        writable(&t.checkpoint)?;
        writable(&t.metrics)?;
        Ok(t)
    }

    pub fn eval_section(&self) -> Result<&EvalSection> {
        let e = self.eval.as_ref().context("config has no eval section")?;
        readable(&e.checkpoint)?;
        readable(&e.dataset)?;
        writable(&e.predictions)?;
        Ok(e)
    }

    pub fn verify_section(&self) -> Result<&VerifySection> {
        let v = self.verify.as_ref().context("config has no verify section")?;
        let s = &v.settings;
        ensure!(s.trials > 0 && !s.steps.is_empty(), "verify needs trials and steps");
        ensure!(
            s.dt_fraction > 0.0 && s.dt_fraction <= 1.0,
            "verify dt_fraction must lie in (0, 1]"
        );
        for &c in &s.c_values {
            ensure!((0.0..0.5).contains(&c), "verify c = {c} outside [0, 1/2)");
        }
        writable(&v.report)?;
        Ok(v)
    }

    pub fn fit_section(&self) -> Result<&FitSection> {
        let f = self.fit_reciprocal.as_ref().context("config has no fit_reciprocal section")?;
        ensure!(
            f.low > 0.0 && f.low < f.high && f.points >= 2,
            "fit_reciprocal needs 0 < low < high and points >= 2"
        );
        readable(&f.checkpoint)?;
        writable(&f.curve)?;
        Ok(f)
    }

    /// SHA-256 of the canonical JSON form as written (seed override
    /// applied, paths unresolved), hex encoded.
    pub fn hash(&self) -> &str {
        &self.hash
    }
}

fn readable(p: &Path) -> Result<()> {
    if !p.is_file() {
        bail!("input file {} does not exist", p.display());
    }
    Ok(())
}

fn writable(p: &Path) -> Result<()> {
    match p.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            bail!("output directory {} does not exist", dir.display())
        }
        _ => Ok(()),
    }
}
