//! Numerical checks of the noisy gradient-descent argument behind the
//! representability of `A_eff` by a deep network.
//!
//! The iteration runs on `E(v) / h^d = v^T L_a v / 2 - v^T b_a + a^T 1 / 2`,
//! whose Hessian is `L_a` itself, so the spectral constants of `L_a` and
//! the step bound [`max_step`] apply without rescaling. Energies reported in
//! a [`Trajectory`] are the grid energy `E` (including `h^d`).

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::elliptic::{self, check_positive};
use crate::error::{Error, Result};
use crate::grid::{self, Direction, Field, GridSpec};
use crate::linalg::{self, CgOptions};
use crate::sampler::{self, SamplingSpec, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// `||eps|| = c ||grad||` exactly.
    WorstCaseScaled,
    /// `||eps||` uniform in `[0, c ||grad||]`.
    UniformScaled,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisyGdConfig {
    pub c: f64,
    pub dt: f64,
    pub steps: usize,
    pub noise_mode: NoiseMode,
}

impl NoisyGdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.c) {
            return Err(Error::InvalidNoiseLevel(self.c));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `v^0 = 0, v^1, ..., v^M`.
    pub iterates: Vec<Field>,
    /// Grid energy `E(v^m)`.
    pub energies: Vec<f64>,
    /// `||L_a v^m - b_a||`, the gradient of `E / h^d`.
    pub grad_norms: Vec<f64>,
    /// `(E(v^{m+1}) - E(v^m)) / h^d`, evaluated by exact quadratic expansion.
    pub increments: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralConstants {
    /// `||L_a||_2`.
    pub lambda_a: f64,
    /// Smallest nonzero eigenvalue of `L_a`.
    pub mu_a: f64,
    /// `(1 + c^2 / (1 - c)) lambda_a`.
    pub lambda_a_prime: f64,
}

const SUBSPACE_BLOCK: usize = 6;

/// Largest eigenvalue of the symmetric map `apply` on the mean-zero
/// subspace by blocked power iteration with Rayleigh-Ritz extraction.
/// Converged when the top Ritz pair has `||A x - theta x|| <= tol theta`.
fn top_eigenvalue<A>(apply: A, dim: usize, tol: f64, max_iter: usize, seed: u64, solver: &'static str) -> Result<f64>
where
    A: Fn(&[f64], &mut [f64]) -> Result<()>,
{
    let block = SUBSPACE_BLOCK.min(dim - 1).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = DMatrix::<f64>::from_fn(dim, block, |_, _| rng.sample(StandardNormal));
    let project = |m: &mut DMatrix<f64>| {
        for mut col in m.column_iter_mut() {
            let mean = col.sum() / dim as f64;
            col.add_scalar_mut(-mean);
        }
    };
    project(&mut q);
    q = q.qr().q();
    let mut z = DMatrix::<f64>::zeros(dim, block);
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        for j in 0..block {
            let x: Vec<f64> = q.column(j).iter().copied().collect();
            let mut y = vec![0.0; dim];
            apply(&x, &mut y)?;
            z.set_column(j, &nalgebra::DVector::from_vec(y));
        }
        project(&mut z);
        let h = q.transpose() * &z;
        let h = (&h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(h);
        let (k, theta) = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let y = eig.eigenvectors.column(k);
        let r = &z * y - (&q * y) * theta;
        residual = r.norm();
        if theta > 0.0 && residual <= tol * theta {
            return Ok(theta);
        }
        q = z.clone().qr().q();
        if it == max_iter {
            break;
        }
    }
    Err(Error::NotConverged {
        solver,
        iterations: max_iter,
        residual,
    })
}

/// `lambda_a` by power iteration on `L_a`, `mu_a` by inverse iteration on
/// the mean-zero subspace (CG inner solves), both at relative tolerance 1e-8.
pub fn spectral_constants(a: &Field, c: f64) -> Result<SpectralConstants> {
    check_positive(a)?;
    if !(0.0..1.0).contains(&c) {
        return Err(Error::InvalidNoiseLevel(c));
    }
    let g = *a.grid();
    let dim = g.len();
    if dim < 2 {
        return Err(Error::InvalidGrid("need at least two grid points".into()));
    }
    let tol = 1e-8;
    let max_iter = 100_000;
    let lambda_a = top_eigenvalue(
        |x, y| {
            grid::apply_la_into(&g, a.values(), x, y);
            Ok(())
        },
        dim,
        tol,
        max_iter,
        0x5eed,
        "power iteration",
    )?;
    let cg = CgOptions {
        tol: 1e-13,
        max_iter: 20 * dim,
        project_mean: true,
    };
    let inv = top_eigenvalue(
        |x, y| {
            y.iter_mut().for_each(|v| *v = 0.0);
            let out = linalg::conjugate_gradient(|p, q| grid::apply_la_into(&g, a.values(), p, q), x, y, cg);
            if out.residual_norm > 1e-9 * linalg::norm2(x) {
                return Err(Error::NotConverged {
                    solver: "inverse iteration inner solve",
                    iterations: out.iterations,
                    residual: out.residual_norm,
                });
            }
            Ok(())
        },
        dim,
        tol,
        max_iter,
        0x5eed + 1,
        "inverse iteration",
    )?;
    Ok(SpectralConstants {
        lambda_a,
        mu_a: 1.0 / inv,
        lambda_a_prime: (1.0 + c * c / (1.0 - c)) * lambda_a,
    })
}

/// `delta = (1 - 1/(2(1-c))) 2 / lambda'` with `lambda' = (1 + c^2/(1-c)) lambda_a`.
pub fn max_step(c: f64, lambda_a: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&c) {
        return Err(Error::InvalidNoiseLevel(c));
    }
    if !(lambda_a > 0.0) {
        return Err(Error::InvalidConfig(format!("lambda_a must be positive, got {lambda_a}")));
    }
    let lambda_prime = (1.0 + c * c / (1.0 - c)) * lambda_a;
    Ok((1.0 - 1.0 / (2.0 * (1.0 - c))) * 2.0 / lambda_prime)
}

fn mean_zero_noise<R: Rng>(rng: &mut R, dim: usize, norm: f64) -> Vec<f64> {
    if norm == 0.0 {
        return vec![0.0; dim];
    }
    let mut z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    linalg::remove_mean(&mut z);
    let s = norm / linalg::norm2(&z);
    z.iter_mut().for_each(|v| *v *= s);
    z
}

/// `v^{m+1} = v^m - dt (L_a v^m - b_a) + dt eps^{m+1}` from `v^0 = 0`,
/// with `xi = e_1`.
pub fn noisy_gd<R: Rng>(a: &Field, config: &NoisyGdConfig, rng: &mut R) -> Result<Trajectory> {
    config.validate()?;
    check_positive(a)?;
    let g = *a.grid();
    let hd = g.cell_volume();
    let b = grid::assemble_ba(a, &Direction::axis(g.dim(), 0))?;
    let b = b.values();
    let dim = g.len();
    let half_a_sum = 0.5 * a.sum();

    let mut v = vec![0.0; dim];
    let mut lv = vec![0.0; dim];
    let mut ldelta = vec![0.0; dim];
    let scaled_energy = |v: &[f64], lv: &[f64]| 0.5 * linalg::dot(v, lv) - linalg::dot(v, b) + half_a_sum;

    let mut out = Trajectory {
        iterates: Vec::with_capacity(config.steps + 1),
        energies: Vec::with_capacity(config.steps + 1),
        grad_norms: Vec::with_capacity(config.steps + 1),
        increments: Vec::with_capacity(config.steps),
    };
    for m in 0..=config.steps {
        let grad: Vec<f64> = lv.iter().zip(b).map(|(x, y)| x - y).collect();
        let gnorm = linalg::norm2(&grad);
        out.iterates.push(Field::from_vec_unchecked(g, v.clone()));
        out.energies.push(hd * scaled_energy(&v, &lv));
        out.grad_norms.push(gnorm);
        if m == config.steps {
            break;
        }
        let noise_norm = match config.noise_mode {
            NoiseMode::Zero => 0.0,
            NoiseMode::WorstCaseScaled => config.c * gnorm,
            NoiseMode::UniformScaled => config.c * gnorm * rng.gen::<f64>(),
        };
        let eps = mean_zero_noise(rng, dim, noise_norm);
        let delta: Vec<f64> = grad.iter().zip(&eps).map(|(gr, e)| config.dt * (e - gr)).collect();
        grid::apply_la_into(&g, a.values(), &delta, &mut ldelta);
        out.increments
            .push(linalg::dot(&grad, &delta) + 0.5 * linalg::dot(&delta, &ldelta));
        v.iter_mut().zip(&delta).for_each(|(x, d)| *x += d);
        lv.iter_mut().zip(&ldelta).for_each(|(x, d)| *x += d);
    }
    Ok(out)
}

/// Number of steps violating `increment <= -(dt/2) ||grad||^2 + slack`.
pub fn descent_violations(traj: &Trajectory, dt: f64, slack: f64) -> usize {
    traj.increments
        .iter()
        .zip(&traj.grad_norms)
        .filter(|(&inc, &g)| inc > -0.5 * dt * g * g + slack)
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub steps: Vec<usize>,
    /// `E(v^M) - E(u*)` for each entry of `steps`.
    pub gaps: Vec<f64>,
    /// Log-log slope of gap against M over the positive gaps above roundoff.
    pub slope: f64,
    /// `max_M M gap(M)`, so `gap(M) <= c_fit / M` on every sampled M.
    pub c_fit: f64,
    /// The theorem's constant
    /// `[1/(mu dt) + (2c/dt)(c dt + 2(1 + 2/mu))] (E(v^0) - E(u*))`.
    pub c_theorem: f64,
    pub e0: f64,
    pub e_star: f64,
    pub delta: f64,
    pub spectral: SpectralConstants,
    pub descent_violations: usize,
    /// `max_m |1^T v^m|`.
    pub max_mean_drift: f64,
    /// `(dt/2) sum_m ||grad E(v^m)||^2` in the units of `E / h^d`.
    pub grad_sum: f64,
    /// Whether `(E(v^0) - E(u*)) / h^d >= (mu_a / 2) ||v^0 - u*||^2`.
    pub strong_convexity_holds: bool,
    pub gaps_nonincreasing: bool,
}

impl ConvergenceReport {
    pub fn grad_sum_bound_holds(&self, cell_volume: f64) -> bool {
        self.grad_sum <= (self.e0 - self.e_star) / cell_volume * (1.0 + 1e-12)
    }
}

pub const LEMMA_SLACK: f64 = 1e-12;

/// Run one trajectory to `max(steps)` at `dt = dt_fraction * max_step(c, lambda_a)`
/// and compare against the cell-problem minimizer solved to 1e-12.
pub fn verify_convergence_rate<R: Rng>(
    a: &Field,
    c: f64,
    dt_fraction: f64,
    noise_mode: NoiseMode,
    steps: &[usize],
    rng: &mut R,
) -> Result<ConvergenceReport> {
    if steps.is_empty() || steps.contains(&0) {
        return Err(Error::InvalidConfig("need positive step counts".into()));
    }
    if !(dt_fraction > 0.0 && dt_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("dt_fraction must lie in (0, 1], got {dt_fraction}")));
    }
    let spectral = spectral_constants(a, c.min(0.999))?;
    let delta = max_step(c, spectral.lambda_a)?;
    let dt = dt_fraction * delta;
    let m_max = *steps.iter().max().unwrap();
    let traj = noisy_gd(
        a,
        &NoisyGdConfig {
            c,
            dt,
            steps: m_max,
            noise_mode,
        },
        rng,
    )?;

    let g = *a.grid();
    let hd = g.cell_volume();
    let xi = Direction::axis(g.dim(), 0);
    let cell = elliptic::solve_cell_problem(a, &xi, 1e-12, 100 * g.len())?;
    let u_star = cell.u.values();
    let e_star = 0.5 * cell.a_eff;
    let e0 = traj.energies[0];

    // E(v) - E(u*) = h^d (v - u*)^T L_a (v - u*) / 2 for the quadratic energy.
    let mut le = vec![0.0; g.len()];
    let gap_at = |m: usize, le: &mut Vec<f64>| {
        let e: Vec<f64> = traj.iterates[m].values().iter().zip(u_star).map(|(x, y)| x - y).collect();
        grid::apply_la_into(&g, a.values(), &e, le);
        0.5 * hd * linalg::dot(&e, le)
    };
    let mut sorted = steps.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let gaps: Vec<f64> = sorted.iter().map(|&m| gap_at(m, &mut le)).collect();
    let gap0 = gap_at(0, &mut le);

    let c_fit = sorted.iter().zip(&gaps).map(|(&m, &gp)| m as f64 * gp).fold(0.0, f64::max);
    let mu = spectral.mu_a;
    let c_theorem = (1.0 / (mu * dt) + (2.0 * c / dt) * (c * dt + 2.0 * (1.0 + 2.0 / mu))) * (e0 - e_star);

    let floor = 1e-13 * e0.abs().max(1.0);
    let (lx, ly): (Vec<f64>, Vec<f64>) = sorted
        .iter()
        .zip(&gaps)
        .filter(|(_, &gp)| gp > floor)
        .map(|(&m, &gp)| ((m as f64).ln(), gp.ln()))
        .unzip();
    let slope = if lx.len() >= 2 {
        analysis::linear_fit(&lx, &ly)?.0
    } else {
        f64::NEG_INFINITY
    };
    let nonincreasing_slack = LEMMA_SLACK * hd;
    let gaps_nonincreasing = gaps.windows(2).all(|w| w[1] <= w[0] + nonincreasing_slack);

    let max_mean_drift = traj.iterates.iter().map(|v| v.sum().abs()).fold(0.0, f64::max);
    let grad_sum = 0.5 * dt * traj.grad_norms[..m_max].iter().map(|g| g * g).sum::<f64>();
    let dist2 = linalg::dot(u_star, u_star);
    let strong_convexity_holds = gap0 / hd >= 0.5 * mu * dist2 * (1.0 - 1e-9);

    Ok(ConvergenceReport {
        steps: sorted,
        gaps,
        slope,
        c_fit,
        c_theorem,
        e0,
        e_star,
        delta,
        spectral,
        descent_violations: descent_violations(&traj, dt, LEMMA_SLACK),
        max_mean_drift,
        grad_sum,
        strong_convexity_holds,
        gaps_nonincreasing,
    })
}

/// A sweep of independent trials, one random field and noise stream per
/// trial index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifySettings {
    pub dim: usize,
    pub n: usize,
    pub low: f64,
    pub high: f64,
    pub c_values: Vec<f64>,
    pub dt_fraction: f64,
    pub trials: usize,
    pub steps: Vec<usize>,
    pub noise_mode: NoiseMode,
    pub seed: u64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            dim: 2,
            n: 8,
            low: 0.3,
            high: 3.0,
            c_values: vec![0.0, 0.2, 0.4],
            dt_fraction: 0.9,
            trials: 50,
            steps: (4..=12).map(|k| 1usize << k).collect(),
            noise_mode: NoiseMode::WorstCaseScaled,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub n: usize,
    pub c: f64,
    pub report: ConvergenceReport,
}

impl TrialSummary {
    pub fn dt(&self, dt_fraction: f64) -> f64 {
        dt_fraction * self.report.delta
    }
}

pub fn run_trials(settings: &VerifySettings) -> Result<Vec<TrialSummary>> {
    let grid = GridSpec::new(settings.dim, settings.n)?;
    let spec = SamplingSpec {
        task: Task::EllipticConductance,
        grid,
        low: settings.low,
        high: settings.high,
        count: settings.trials.max(1),
        seed: settings.seed,
    };
    spec.validate()?;
    let jobs: Vec<(usize, f64)> = settings
        .c_values
        .iter()
        .flat_map(|&c| (0..settings.trials).map(move |t| (t, c)))
        .collect();
    jobs.par_iter()
        .map(|&(trial, c)| {
            let a = sampler::sample_field(&spec, trial);
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ c.to_bits());
            rng.set_stream(trial as u64);
            let report = verify_convergence_rate(&a, c, settings.dt_fraction, settings.noise_mode, &settings.steps, &mut rng)?;
            Ok(TrialSummary {
                trial,
                n: settings.n,
                c,
                report,
            })
        })
        .collect()
}

/// `trial,n,c,dt,delta,steps,descent_violations,gap_M...` with one gap
/// column per sampled M.
pub fn report_csv(rows: &[TrialSummary], dt_fraction: f64) -> String {
    let mut out = String::from("trial,n,c,dt,delta,steps,descent_violations,c_fit,c_theorem,slope");
    if let Some(first) = rows.first() {
        for m in &first.report.steps {
            write!(out, ",gap_{m}").unwrap();
        }
    }
    out.push('\n');
    for r in rows {
        write!(
            out,
            "{},{},{},{:e},{:e},{},{},{:e},{:e},{}",
            r.trial,
            r.n,
            r.c,
            r.dt(dt_fraction),
            r.report.delta,
            r.report.steps.last().copied().unwrap_or(0),
            r.report.descent_violations,
            r.report.c_fit,
            r.report.c_theorem,
            r.report.slope
        )
        .unwrap();
        for gp in &r.report.gaps {
            write!(out, ",{gp:e}").unwrap();
        }
        out.push('\n');
    }
    out
}
