//! Small statistics and curve-fitting helpers used by reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{extract_stage1_response, NetworkSpec};
use crate::sampler::WhitenStats;

/// Sample mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Least-squares line `y = slope x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::ShapeMismatch("need at least two paired points".into()));
    }
    let (mx, _) = mean_std(xs);
    let (my, _) = mean_std(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::ShapeMismatch("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Fit of `y ~ beta1 / x + beta2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReciprocalFit {
    pub beta1: f64,
    pub beta2: f64,
    pub r_squared: f64,
}

pub fn fit_reciprocal(xs: &[f64], ys: &[f64]) -> Result<ReciprocalFit> {
    if xs.iter().any(|&x| x == 0.0) {
        return Err(Error::InvalidConfig("reciprocal fit needs x != 0".into()));
    }
    let inv: Vec<f64> = xs.iter().map(|x| 1.0 / x).collect();
    let (beta1, beta2) = linear_fit(&inv, ys)?;
    let (my, _) = mean_std(ys);
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = inv
        .iter()
        .zip(ys)
        .map(|(u, y)| (y - beta1 * u - beta2).powi(2))
        .sum();
    // A constant response is fitted exactly by beta2 alone.
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(ReciprocalFit {
        beta1,
        beta2,
        r_squared,
    })
}

/// `points` equally spaced values in `[low, high]`, endpoints included.
pub fn linspace(low: f64, high: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![low],
        _ => (0..points)
            .map(|i| low + (high - low) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Stage-1 response of a three-stage 1D network on raw coefficient values
/// `xs`. With whitening, each value is standardized by the stats averaged
/// over grid positions before entering the network.
pub fn stage1_response(spec: &NetworkSpec, params: &[f64], whitening: Option<&WhitenStats>, xs: &[f64]) -> Result<Vec<f64>> {
    match whitening {
        None => extract_stage1_response(spec, params, xs),
        Some(w) => {
            let (mean, _) = mean_std(&w.mean);
            let (std, _) = mean_std(&w.std);
            let zs: Vec<f64> = xs.iter().map(|x| (x - mean) / std).collect();
            extract_stage1_response(spec, params, &zs)
        }
    }
}

/// [`fit_reciprocal`] of the stage-1 response over `points` values in `[low, high]`.
pub fn fit_stage1_reciprocal(
    spec: &NetworkSpec,
    params: &[f64],
    whitening: Option<&WhitenStats>,
    low: f64,
    high: f64,
    points: usize,
) -> Result<(Vec<f64>, Vec<f64>, ReciprocalFit)> {
    let xs = linspace(low, high, points);
    let ys = stage1_response(spec, params, whitening, &xs)?;
    let fit = fit_reciprocal(&xs, &ys)?;
    Ok((xs, ys, fit))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_reciprocal() {
        let xs: Vec<f64> = (0..200).map(|i| 0.3 + 1.2 * i as f64 / 199.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 / x + 1.0).collect();
        let fit = fit_reciprocal(&xs, &ys).unwrap();
        assert!((fit.beta1 - 2.0).abs() < 1e-8);
        assert!((fit.beta2 - 1.0).abs() < 1e-8);
        assert!((fit.r_squared - 1.0).abs() < 1e-8);
    }

    #[test]
    fn constant_response() {
        let xs: Vec<f64> = (0..50).map(|i| 0.3 + 0.02 * i as f64).collect();
        let fit = fit_reciprocal(&xs, &vec![0.25; 50]).unwrap();
        assert!(fit.beta1.abs() < 1e-12);
        assert!((fit.beta2 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[0.0, 2.0]);
        assert_eq!((m, s), (1.0, 1.0));
    }
}
