//! Minibatch MSE training with NAdam and a plateau learning-rate rule.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Network, NetworkSpec};
use crate::sampler::{self, Dataset, WhitenStats};

/// Samples per gradient chunk. Chunks are reduced in index order, so the
/// summation order does not depend on the thread count.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_drop_factor: f64,
    pub plateau_patience: usize,
    /// Whiten inputs with per-dimension training statistics.
    pub whiten: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 100,
            epochs: 100,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_drop_factor: 0.5,
            plateau_patience: 20,
            whiten: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(50..=200).contains(&self.batch_size) {
            return bad(format!("batch_size must lie in [50, 200], got {}", self.batch_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor <= 1.0) {
            return bad(format!("lr_drop_factor must lie in (0, 1], got {}", self.lr_drop_factor));
        }
        if self.epochs == 0 || self.plateau_patience == 0 {
            return bad("epochs and plateau_patience must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub train_relerr: Vec<f64>,
    pub val_relerr: Vec<f64>,
    pub learning_rate: Vec<f64>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.train_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_loss.is_empty()
    }

    /// `epoch,train_loss,train_relerr,val_relerr,lr`, epochs counted from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_relerr,val_relerr,lr\n");
        for e in 0..self.len() {
            writeln!(
                out,
                "{},{:e},{:e},{:e},{:e}",
                e + 1,
                self.train_loss[e],
                self.train_relerr[e],
                self.val_relerr[e],
                self.learning_rate[e]
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    /// Parameters of the epoch with the lowest validation error.
    pub params: Vec<f64>,
    pub history: TrainHistory,
    /// Zero-based index of the selected epoch.
    pub best_epoch: usize,
    pub whitening: Option<WhitenStats>,
}

impl TrainedModel {
    pub fn best_val_relerr(&self) -> f64 {
        self.history.val_relerr[self.best_epoch]
    }

    pub fn best_train_relerr(&self) -> f64 {
        self.history.train_relerr[self.best_epoch]
    }
}

/// Weights `N(0, 2 / fan_in)`, biases zero.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<Vec<f64>> {
    let net = Network::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![0.0; net.param_count()];
    for (fan_in, weights, _) in net.parameter_blocks() {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for p in &mut params[weights] {
            *p = normal.sample(&mut rng);
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NadamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl NadamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One NAdam update at step `t >= 1` with learning rate `lr`.
pub fn nadam_step(params: &mut [f64], grads: &[f64], state: &mut NadamState, t: u64, lr: f64, config: &TrainConfig) {
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * (b1 * m_hat + (1.0 - b1) * g / c1) / (v_hat.sqrt() + config.eps);
    }
}

/// Mean of squared differences.
pub fn mse_loss(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / preds.len() as f64)
}

/// `sqrt(sum (p - t)^2 / sum t^2)` over the whole split.
pub fn relative_error(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let den: f64 = targets.iter().map(|t| t * t).sum();
    if den == 0.0 {
        return Err(Error::ZeroTargetNorm);
    }
    let num: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((num / den).sqrt())
}

/// Network outputs for rows of already-prepared inputs, in row order.
pub fn predict_rows(net: &Network, params: &[f64], inputs: &[f64]) -> Result<Vec<f64>> {
    let dim = net.input_len();
    if inputs.len() % dim != 0 {
        return Err(Error::ShapeMismatch(format!("{} values do not form rows of {dim}", inputs.len())));
    }
    inputs.par_chunks(dim).map(|x| net.forward(params, x)).collect()
}

/// Predictions for raw coefficient rows, whitening them first when stats are
/// given.
pub fn predict(spec: &NetworkSpec, params: &[f64], whitening: Option<&WhitenStats>, inputs: &[f64]) -> Result<Vec<f64>> {
    let net = Network::new(spec)?;
    match whitening {
        Some(w) => predict_rows(&net, params, &sampler::apply_whitening(inputs, w)?),
        None => predict_rows(&net, params, inputs),
    }
}

/// Sum of squared errors over `batch` and the gradient of the batch MSE.
fn batch_gradient(net: &Network, params: &[f64], inputs: &[f64], targets: &[f64], batch: &[usize]) -> Result<(f64, Vec<f64>)> {
    let dim = net.input_len();
    let scale = 2.0 / batch.len() as f64;
    let partials: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; params.len()];
            let mut sse = 0.0;
            for &k in chunk {
                let trace = net.forward_trace(params, &inputs[k * dim..(k + 1) * dim])?;
                let r = trace.output()[0] - targets[k];
                sse += r * r;
                net.backward(params, &trace, &[scale * r], &mut grad, false)?;
            }
            Ok((sse, grad))
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; params.len()];
    let mut sse = 0.0;
    for (s, g) in partials {
        sse += s;
        total.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((sse, total))
}

fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

fn check_compatible(train: &Dataset, val: &Dataset, net: &Network) -> Result<()> {
    if train.spec.grid != val.spec.grid {
        return Err(Error::GridMismatch(format!(
            "train grid {:?} vs validation grid {:?}",
            train.spec.grid, val.spec.grid
        )));
    }
    if net.input_len() != train.input_dim() || net.output_shape().len() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "network maps {} inputs to {} outputs; dataset rows have {} values",
            net.input_len(),
            net.output_shape().len(),
            train.input_dim()
        )));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidConfig("empty training or validation split".into()));
    }
    Ok(())
}

/// Train from `init_params(spec, config.seed)`.
pub fn train(train: &Dataset, val: &Dataset, spec: &NetworkSpec, config: &TrainConfig) -> Result<TrainedModel> {
    train_from(train, val, spec, config, init_params(spec, config.seed)?)
}

/// Train from the given initial parameters. Whitening statistics come from
/// the training split (its stored stats if present) and are applied to both
/// splits.
pub fn train_from(
    train: &Dataset,
    val: &Dataset,
    spec: &NetworkSpec,
    config: &TrainConfig,
    mut params: Vec<f64>,
) -> Result<TrainedModel> {
    config.validate()?;
    let net = Network::new(spec)?;
    check_compatible(train, val, &net)?;
    if params.len() != net.param_count() {
        return Err(Error::ShapeMismatch("initial parameter count".into()));
    }
    let whitening = if config.whiten {
        Some(match &train.whitening {
            Some(w) => w.clone(),
            None => sampler::compute_whiten_stats(&train.inputs, train.input_dim())?,
        })
    } else {
        None
    };
    let prepare = |ds: &Dataset| match &whitening {
        Some(w) => sampler::apply_whitening(&ds.inputs, w),
        None => Ok(ds.inputs.clone()),
    };
    let xs_train = prepare(train)?;
    let xs_val = prepare(val)?;

    let mut state = NadamState::new(params.len());
    let mut history = TrainHistory::default();
    let mut lr = config.learning_rate;
    let mut t = 0u64;
    let mut best = (f64::INFINITY, 0, params.clone());
    let mut best_train = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..config.epochs {
        let order = epoch_order(train.len(), config.seed, epoch);
        for batch in order.chunks(config.batch_size) {
            let (_, grad) = batch_gradient(&net, &params, &xs_train, &train.targets, batch)?;
            t += 1;
            nadam_step(&mut params, &grad, &mut state, t, lr, config);
        }
        let p_train = predict_rows(&net, &params, &xs_train)?;
        let p_val = predict_rows(&net, &params, &xs_val)?;
        let train_rel = relative_error(&p_train, &train.targets)?;
        let val_rel = relative_error(&p_val, &val.targets)?;
        if !(train_rel.is_finite() && val_rel.is_finite()) {
            return Err(Error::NotConverged {
                solver: "training",
                iterations: epoch + 1,
                residual: train_rel,
            });
        }
        history.train_loss.push(mse_loss(&p_train, &train.targets)?);
        history.train_relerr.push(train_rel);
        history.val_relerr.push(val_rel);
        history.learning_rate.push(lr);
        if val_rel < best.0 {
            best = (val_rel, epoch, params.clone());
        }
        if train_rel < best_train {
            best_train = train_rel;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.plateau_patience {
                lr *= config.lr_drop_factor;
                stale = 0;
            }
        }
    }
    Ok(TrainedModel {
        params: best.2,
        history,
        best_epoch: best.1,
        whitening,
    })
}
