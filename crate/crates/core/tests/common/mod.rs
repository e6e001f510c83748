//! Dense reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use pde_surrogate::{Field, GridSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_field(g: GridSpec, lo: f64, hi: f64, seed: u64) -> Field {
    let mut r = rng(seed);
    Field::new(g, (0..g.len()).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

pub fn random_vec(len: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..len).map(|_| r.gen_range(-1.0..1.0)).collect()
}

/// Every directed edge `(i, i + e_k)` of the periodic grid with its axis.
pub fn edges(g: &GridSpec) -> Vec<(usize, usize, usize)> {
    let n = g.n();
    let mut out = Vec::new();
    for i in 0..g.len() {
        let idx = g.multi_index(i);
        for k in 0..g.dim() {
            let mut j = idx.clone();
            j[k] = (j[k] + 1) % n;
            out.push((i, g.flat_index(&j), k));
        }
    }
    out
}

fn edge_coeff(a: &Field, i: usize, j: usize) -> f64 {
    0.5 * (a.values()[i] + a.values()[j])
}

/// `L_a` assembled edge by edge from the quadratic part of the energy.
pub fn dense_la(a: &Field) -> DMatrix<f64> {
    let g = *a.grid();
    let inv_h2 = (g.n() * g.n()) as f64;
    let mut m = DMatrix::zeros(g.len(), g.len());
    for (i, j, _) in edges(&g) {
        let w = edge_coeff(a, i, j) * inv_h2;
        m[(i, i)] += w;
        m[(j, j)] += w;
        m[(i, j)] -= w;
        m[(j, i)] -= w;
    }
    m
}

/// `b_a` from the linear part of the edge energy.
pub fn dense_ba(a: &Field, xi: &[f64]) -> DVector<f64> {
    let g = *a.grid();
    let inv_h = g.n() as f64;
    let mut b = DVector::zeros(g.len());
    for (i, j, k) in edges(&g) {
        let c = edge_coeff(a, i, j) * xi[k] * inv_h;
        b[i] += c;
        b[j] -= c;
    }
    b
}

pub fn dense_laplacian(g: &GridSpec) -> DMatrix<f64> {
    dense_la(&Field::constant(*g, 1.0))
}

/// `(h^d / 2) sum_edges a_e ((u_j - u_i)/h + xi_k)^2`.
pub fn edge_energy(u: &[f64], a: &Field, xi: &[f64]) -> f64 {
    let g = *a.grid();
    let n = g.n() as f64;
    let s: f64 = edges(&g)
        .into_iter()
        .map(|(i, j, k)| {
            let t = (u[j] - u[i]) * n + xi[k];
            edge_coeff(a, i, j) * t * t
        })
        .sum();
    0.5 * g.cell_volume() * s
}

/// Minimum-norm solution of a singular symmetric system.
pub fn pinv_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let cutoff = 1e-10 * eig.eigenvalues.amax();
    let mut x = DVector::zeros(b.len());
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > cutoff {
            let v = eig.eigenvectors.column(k);
            x += v * (v.dot(b) / lam);
        }
    }
    x
}

pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Smallest eigenvalue of `L + diag(a)`.
pub fn dense_linear_ground_energy(a: &Field) -> f64 {
    let mut m = dense_laplacian(a.grid());
    for (i, &v) in a.values().iter().enumerate() {
        m[(i, i)] += v;
    }
    sorted_eigenvalues(&m)[0]
}

/// Minimize `h^d (u^T L u + u^T diag(a) u + (s/2) sum u^4)` over
/// `h^d ||u||^2 = 1` by projected gradient steps; returns
/// `E_0 = h^d (u^T L u + sum a u^2 + s sum u^4)` at the minimizer.
pub fn projected_gradient_ground_energy(a: &Field, s: f64) -> f64 {
    let g = *a.grid();
    let lap = dense_laplacian(&g);
    let hd = g.cell_volume();
    let av = DVector::from_column_slice(a.values());
    let mut u = DVector::from_element(g.len(), 1.0);
    let step = 1.0 / (sorted_eigenvalues(&lap).last().unwrap() + a.max() + 3.0 * s * 4.0);
    let mut e = f64::NAN;
    for _ in 0..200_000 {
        let cubic = u.map(|x| s * x * x * x);
        let hu = &lap * &u + av.component_mul(&u) + cubic;
        e = hd * u.dot(&hu);
        let grad = &hu - &u * e;
        if grad.norm() < 1e-12 {
            break;
        }
        u -= grad * step;
        u /= (hd * u.dot(&u)).sqrt();
    }
    e
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + step;
            let fp = f(&y);
            y[i] = x[i] - step;
            let fm = f(&y);
            y[i] = x[i];
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

/// `max_i |x_i - y_i| / max(max_i |y_i|, floor)`.
pub fn rel_max_err(x: &[f64], y: &[f64], floor: f64) -> f64 {
    let scale = y.iter().fold(floor, |m, v| m.max(v.abs()));
    x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max) / scale
}
