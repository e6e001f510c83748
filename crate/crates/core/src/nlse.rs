//! Ground state of the discrete defocusing NLSE
//!
//! ```text
//! (L u)_i + a_i u_i + s u_i^3 = E u_i,    h^d sum_i u_i^2 = 1
//! ```
//!
//! computed by shifted inverse iteration at `s = 0` followed by Newton
//! continuation in `s` up to `sigma`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::elliptic::check_positive;
use crate::error::{Error, Result};
use crate::grid::{self, Field, GridSpec, Side};
use crate::linalg::{self, CgOptions};

/// Largest bordered system (`n^d + 1` unknowns) solved by dense LU; larger
/// ones use block elimination with CG.
pub const DENSE_BORDERED_LIMIT: usize = 1025;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlseState {
    /// Normalized so that `h^d sum u_i^2 = 1`, sign fixed so `sum u_i > 0`.
    pub u: Field,
    pub e0: f64,
    /// Nonlinearity strength this state solves for.
    pub s: f64,
    /// `sqrt(||F_1||^2 + F_2^2)` of the bordered residual.
    pub residual_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomotopyOptions {
    pub sigma: f64,
    pub step: f64,
    pub tol: f64,
    pub max_newton: usize,
    pub max_inverse_iter: usize,
}

impl Default for HomotopyOptions {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            step: 0.4,
            tol: 1e-10,
            max_newton: 50,
            max_inverse_iter: 10_000,
        }
    }
}

/// Which linear solver handles the bordered Newton system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BorderedSolver {
    Auto,
    DenseLu,
    BlockElimination,
}

fn normalize(grid: &GridSpec, u: &mut [f64]) {
    let scale = (grid.cell_volume() * linalg::dot(u, u)).sqrt();
    let sign = if u.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    u.iter_mut().for_each(|v| *v *= sign / scale);
}

/// `out = (L + diag(a) + s diag(u^2)) v`.
fn apply_hamiltonian(grid: &GridSpec, a: &[f64], s: f64, u: &[f64], v: &[f64], out: &mut [f64]) {
    grid::apply_laplacian_into(grid, v, out);
    for i in 0..v.len() {
        out[i] += (a[i] + s * u[i] * u[i]) * v[i];
    }
}

/// Pointwise residual `(L u)_i + a_i u_i + s u_i^3 - E u_i`.
pub fn nlse_residual(state: &NlseState, a: &Field, s: f64) -> Result<Field> {
    if state.u.grid() != a.grid() {
        return Err(Error::GridMismatch("state and potential grids differ".into()));
    }
    let g = *a.grid();
    let u = state.u.values();
    let mut r = vec![0.0; g.len()];
    apply_hamiltonian(&g, a.values(), s, u, u, &mut r);
    for (ri, ui) in r.iter_mut().zip(u) {
        *ri -= state.e0 * ui;
    }
    Ok(Field::from_vec_unchecked(g, r))
}

fn bordered_residual(grid: &GridSpec, a: &[f64], s: f64, u: &[f64], e: f64) -> (Vec<f64>, f64) {
    let mut f1 = vec![0.0; u.len()];
    apply_hamiltonian(grid, a, s, u, u, &mut f1);
    for (fi, ui) in f1.iter_mut().zip(u) {
        *fi -= e * ui;
    }
    let f2 = grid.cell_volume() * linalg::dot(u, u) - 1.0;
    (f1, f2)
}

/// `E = h^d (u^T L u + sum a_i u_i^2 + s sum u_i^4)`, exact for any solution.
pub fn rayleigh_energy(u: &Field, a: &Field, s: f64) -> f64 {
    let g = *u.grid();
    let mut hu = vec![0.0; g.len()];
    apply_hamiltonian(&g, a.values(), s, u.values(), u.values(), &mut hu);
    g.cell_volume() * linalg::dot(u.values(), &hu)
}

/// Smallest eigenpair of `L + diag(a)` by inverse iteration shifted to
/// `min(a) - 1`, with CG inner solves.
pub fn linear_ground_state(a: &Field, tol: f64) -> Result<NlseState> {
    linear_ground_state_with(a, tol, HomotopyOptions::default().max_inverse_iter)
}

pub fn linear_ground_state_with(a: &Field, tol: f64, max_iter: usize) -> Result<NlseState> {
    check_positive(a)?;
    let g = *a.grid();
    let av = a.values();
    let shift = a.min() - 1.0;
    let shifted = |x: &[f64], y: &mut [f64]| {
        grid::apply_laplacian_into(&g, x, y);
        for i in 0..x.len() {
            y[i] += (av[i] - shift) * x[i];
        }
    };

    let mut u = vec![1.0; g.len()];
    normalize(&g, &mut u);
    let mut hu = vec![0.0; g.len()];
    let mut residual = f64::INFINITY;
    for it in 0..=max_iter {
        apply_hamiltonian(&g, av, 0.0, &u, &u, &mut hu);
        let e = linalg::dot(&u, &hu) / linalg::dot(&u, &u);
        residual = hu
            .iter()
            .zip(&u)
            .map(|(h, x)| (h - e * x).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= tol {
            return Ok(NlseState {
                u: Field::from_vec_unchecked(g, u),
                e0: e,
                s: 0.0,
                residual_norm: residual,
            });
        }
        if it == max_iter {
            break;
        }
        let mut y = u.clone();
        linalg::conjugate_gradient(
            shifted,
            &u,
            &mut y,
            CgOptions {
                tol: 1e-15,
                max_iter: 10 * g.len(),
                project_mean: false,
            },
        );
        normalize(&g, &mut y);
        u = y;
    }
    Err(Error::NotConverged {
        solver: "inverse iteration",
        iterations: max_iter,
        residual,
    })
}

/// Newton correction of a warm start onto the branch at strength `s`.
pub fn newton_correct(
    state: &NlseState,
    a: &Field,
    s: f64,
    tol: f64,
    max_iter: usize,
) -> Result<NlseState> {
    newton_correct_traced(state, a, s, tol, max_iter, BorderedSolver::Auto).map(|(st, _)| st)
}

/// As [`newton_correct`], also returning the residual norm before each
/// iteration (the last entry is the accepted residual).
pub fn newton_correct_traced(
    state: &NlseState,
    a: &Field,
    s: f64,
    tol: f64,
    max_iter: usize,
    solver: BorderedSolver,
) -> Result<(NlseState, Vec<f64>)> {
    if state.u.grid() != a.grid() {
        return Err(Error::GridMismatch("state and potential grids differ".into()));
    }
    let g = *a.grid();
    let av = a.values();
    let mut u = state.u.values().to_vec();
    let mut e = state.e0;
    let mut trace = Vec::new();
    let dense = match solver {
        BorderedSolver::Auto => g.len() + 1 <= DENSE_BORDERED_LIMIT,
        BorderedSolver::DenseLu => true,
        BorderedSolver::BlockElimination => false,
    };

    for it in 0..=max_iter {
        let (f1, f2) = bordered_residual(&g, av, s, &u, e);
        let res = (linalg::dot(&f1, &f1) + f2 * f2).sqrt();
        trace.push(res);
        if !res.is_finite() {
            return Err(Error::SingularJacobian);
        }
        if res <= tol {
            normalize_sign(&mut u);
            return Ok((
                NlseState {
                    u: Field::from_vec_unchecked(g, u),
                    e0: e,
                    s,
                    residual_norm: res,
                },
                trace,
            ));
        }
        if it == max_iter {
            return Err(Error::NotConverged {
                solver: "Newton",
                iterations: max_iter,
                residual: res,
            });
        }
        let (du, de) = if dense {
            solve_bordered_dense(&g, av, s, &u, e, &f1, f2)?
        } else {
            solve_bordered_block(&g, av, s, &u, e, &f1, f2)?
        };
        u.iter_mut().zip(&du).for_each(|(x, d)| *x += d);
        e += de;
    }
    unreachable!("loop returns on its last iteration")
}

fn normalize_sign(u: &mut [f64]) {
    if u.iter().sum::<f64>() < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Solve `[[K, -u], [2 h^d u^T, 0]] [du; dE] = -[F_1; F_2]` with
/// `K = L + diag(a) + 3 s diag(u^2) - E I`, by dense LU.
fn solve_bordered_dense(
    g: &GridSpec,
    a: &[f64],
    s: f64,
    u: &[f64],
    e: f64,
    f1: &[f64],
    f2: f64,
) -> Result<(Vec<f64>, f64)> {
    let len = g.len();
    let inv_h2 = (g.n() * g.n()) as f64;
    let mut jac = DMatrix::<f64>::zeros(len + 1, len + 1);
    for i in 0..len {
        jac[(i, i)] = 2.0 * g.dim() as f64 * inv_h2 + a[i] + 3.0 * s * u[i] * u[i] - e;
        for k in 0..g.dim() {
            for side in [Side::Plus, Side::Minus] {
                jac[(i, g.neighbor(i, k, side))] -= inv_h2;
            }
        }
        jac[(i, len)] = -u[i];
        jac[(len, i)] = 2.0 * g.cell_volume() * u[i];
    }
    let rhs = DVector::from_iterator(len + 1, f1.iter().map(|v| -v).chain(std::iter::once(-f2)));
    let sol = jac.lu().solve(&rhs).ok_or(Error::SingularJacobian)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularJacobian);
    }
    Ok((sol.rows(0, len).iter().copied().collect(), sol[len]))
}

/// Same system by Schur complement on the `E` component. `K` is SPD near the
/// ground-state branch; CG breakdown is reported as a singular Jacobian.
fn solve_bordered_block(
    g: &GridSpec,
    a: &[f64],
    s: f64,
    u: &[f64],
    e: f64,
    f1: &[f64],
    f2: f64,
) -> Result<(Vec<f64>, f64)> {
    let len = g.len();
    let k_apply = |x: &[f64], y: &mut [f64]| {
        grid::apply_laplacian_into(g, x, y);
        for i in 0..len {
            y[i] += (a[i] + 3.0 * s * u[i] * u[i] - e) * x[i];
        }
    };
    let opts = CgOptions {
        tol: 1e-14,
        max_iter: 20 * len,
        project_mean: false,
    };
    let mut p = vec![0.0; len];
    let mut q = vec![0.0; len];
    let op = linalg::conjugate_gradient(k_apply, f1, &mut p, opts);
    let oq = linalg::conjugate_gradient(k_apply, u, &mut q, opts);
    if !op.converged || !oq.converged {
        return Err(Error::SingularJacobian);
    }
    let vol2 = 2.0 * g.cell_volume();
    let denom = vol2 * linalg::dot(u, &q);
    if denom.abs() < f64::EPSILON {
        return Err(Error::SingularJacobian);
    }
    // K du - u dE = -F1  =>  du = -p + dE q;  2h^d u^T du = -F2.
    let de = (-f2 + vol2 * linalg::dot(u, &p)) / denom;
    let du = p.iter().zip(&q).map(|(pi, qi)| -pi + de * qi).collect();
    Ok((du, de))
}

/// Every accepted stage `s = 0, step, ..., sigma` of the continuation.
pub fn ground_state_path(a: &Field, opts: &HomotopyOptions) -> Result<Vec<NlseState>> {
    if !(opts.sigma >= 0.0) || !(opts.step > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "need sigma >= 0 and step > 0, got sigma={} step={}",
            opts.sigma, opts.step
        )));
    }
    let stages = (opts.sigma / opts.step).round() as usize;
    if (stages as f64 * opts.step - opts.sigma).abs() > 1e-9 * opts.sigma.max(1.0) {
        return Err(Error::InvalidConfig(format!(
            "step {} does not divide sigma {}",
            opts.step, opts.sigma
        )));
    }
    let mut state = linear_ground_state_with(a, opts.tol, opts.max_inverse_iter).map_err(|e| {
        Error::HomotopyFailed {
            s: 0.0,
            source: Box::new(e),
        }
    })?;
    let mut path = Vec::with_capacity(stages + 1);
    path.push(state.clone());
    for j in 1..=stages {
        let s = j as f64 * opts.sigma / stages as f64;
        state = newton_correct(&state, a, s, opts.tol, opts.max_newton).map_err(|e| {
            Error::HomotopyFailed {
                s,
                source: Box::new(e),
            }
        })?;
        path.push(state.clone());
    }
    Ok(path)
}

/// Ground state at `s = sigma`, warm-starting each stage from the previous.
pub fn ground_state_homotopy(a: &Field, opts: &HomotopyOptions) -> Result<NlseState> {
    Ok(ground_state_path(a, opts)?.pop().expect("path holds the s = 0 stage"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(g: GridSpec, lo: f64, hi: f64, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::new(g, (0..g.len()).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn constant_potential_linear_state() {
        let g = GridSpec::new(2, 8).unwrap();
        let st = linear_ground_state(&Field::constant(g, 3.5), 1e-10).unwrap();
        assert!((st.e0 - 3.5).abs() < 1e-12);
        assert!(st.u.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn constant_potential_newton_is_immediate() {
        let g = GridSpec::new(2, 8).unwrap();
        let a = Field::constant(g, 2.0);
        let warm = NlseState {
            u: Field::constant(g, 1.0),
            e0: 2.0 + 1.2,
            s: 1.2,
            residual_norm: 0.0,
        };
        let (st, trace) =
            newton_correct_traced(&warm, &a, 1.2, 1e-10, 50, BorderedSolver::Auto).unwrap();
        assert!(trace.len() <= 2);
        assert!((st.e0 - 3.2).abs() < 1e-12);
    }

    #[test]
    fn constant_branch_homotopy() {
        let g = GridSpec::new(1, 8).unwrap();
        let st = ground_state_homotopy(&Field::constant(g, 4.0), &HomotopyOptions::default()).unwrap();
        assert!((st.e0 - 6.0).abs() < 1e-10);
        assert_eq!(st.s, 2.0);
    }

    #[test]
    fn eigenvalue_rayleigh_bounds() {
        let g = GridSpec::new(2, 8).unwrap();
        let a = random_field(g, 1.0, 16.0, 3);
        let st = linear_ground_state(&a, 1e-10).unwrap();
        assert!(st.e0 >= a.min());
        // Rayleigh quotient of the constant vector bounds E from above.
        assert!(st.e0 <= a.mean() + 1e-12);
    }

    #[test]
    fn stages_satisfy_invariants() {
        let g = GridSpec::new(2, 8).unwrap();
        let a = random_field(g, 1.0, 16.0, 8);
        let path = ground_state_path(&a, &HomotopyOptions::default()).unwrap();
        assert_eq!(path.len(), 6);
        let mut prev = f64::NEG_INFINITY;
        for st in &path {
            let norm = g.cell_volume() * linalg::dot(st.u.values(), st.u.values());
            assert!((norm - 1.0).abs() < 1e-10);
            assert!(st.u.min() > 0.0);
            assert!(st.residual_norm <= 1e-10);
            let rq = rayleigh_energy(&st.u, &a, st.s);
            assert!((rq - st.e0).abs() < 1e-8);
            assert!(st.e0 >= prev);
            prev = st.e0;
        }
    }

    #[test]
    fn dense_and_block_solvers_agree() {
        let g = GridSpec::new(2, 6).unwrap();
        let a = random_field(g, 1.0, 16.0, 21);
        let lin = linear_ground_state(&a, 1e-10).unwrap();
        let (d, _) =
            newton_correct_traced(&lin, &a, 0.4, 1e-10, 50, BorderedSolver::DenseLu).unwrap();
        let (b, _) =
            newton_correct_traced(&lin, &a, 0.4, 1e-10, 50, BorderedSolver::BlockElimination)
                .unwrap();
        assert!((d.e0 - b.e0).abs() < 1e-10);
    }

    #[test]
    fn step_must_divide_sigma() {
        let g = GridSpec::new(1, 4).unwrap();
        let opts = HomotopyOptions {
            step: 0.3,
            ..Default::default()
        };
        assert!(matches!(
            ground_state_homotopy(&Field::constant(g, 1.0), &opts),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn shift_invariant_energy() {
        let g = GridSpec::new(2, 8).unwrap();
        let a = random_field(g, 1.0, 16.0, 2);
        let e = ground_state_homotopy(&a, &HomotopyOptions::default()).unwrap().e0;
        let es = ground_state_homotopy(&a.shifted(&[3, 6]), &HomotopyOptions::default())
            .unwrap()
            .e0;
        assert!((e - es).abs() <= 1e-8 * e);
    }
}
