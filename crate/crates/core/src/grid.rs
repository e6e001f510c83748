//! Periodic finite-difference grids and the stencil operators shared by both
//! PDE problems.
//!
//! Fields are stored row-major over the multi-index `(i_1, ..., i_d)`, last
//! axis fastest. All operators are matrix-free.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform periodic grid on `[0, 1)^d` with `n` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    n: usize,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidGrid("dimension must be at least 1".into()));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need n >= 2, got {n}")));
        }
        let fits = u32::try_from(dim)
            .ok()
            .and_then(|d| n.checked_pow(d))
            .is_some();
        if !fits {
            return Err(Error::InvalidGrid(format!("{n}^{dim} points overflow usize")));
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Grid spacing `h = 1/n`.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Cell volume `h^d`, the quadrature weight of one grid point.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    /// Number of grid points `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.n; self.dim]
    }

    /// Row-major stride of `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dim);
        index.iter().fold(0, |acc, &i| acc * self.n + i % self.n)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        for slot in out.iter_mut().rev() {
            *slot = flat % self.n;
            flat /= self.n;
        }
        out
    }

    /// Flat index of the periodic neighbour `flat +/- e_axis`.
    #[inline]
    pub fn neighbor(&self, flat: usize, axis: usize, side: Side) -> usize {
        let stride = self.stride(axis);
        let coord = (flat / stride) % self.n;
        match side {
            Side::Plus if coord == self.n - 1 => flat - (self.n - 1) * stride,
            Side::Plus => flat + stride,
            Side::Minus if coord == 0 => flat + (self.n - 1) * stride,
            Side::Minus => flat - stride,
        }
    }

    fn check(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "d={} n={} vs d={} n={}",
                self.dim, self.n, other.dim, other.n
            )));
        }
        Ok(())
    }
}

/// Which half-grid neighbour of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

/// Shift a multi-index by `delta` with periodic wrap-around.
pub fn periodic_shift(index: &[usize], delta: &[isize], grid: &GridSpec) -> Vec<usize> {
    let n = grid.n() as isize;
    index
        .iter()
        .zip(delta)
        .map(|(&i, &d)| (i as isize + d).rem_euclid(n) as usize)
        .collect()
}

/// Real values on every grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value at index {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub(crate) fn from_vec_unchecked(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.values[self.grid.flat_index(index)]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Cyclic translate: `out[i] = self[i + delta]`.
    pub fn shifted(&self, delta: &[isize]) -> Field {
        let values = (0..self.grid.len())
            .map(|flat| {
                let src = periodic_shift(&self.grid.multi_index(flat), delta, &self.grid);
                self.values[self.grid.flat_index(&src)]
            })
            .collect();
        Field::from_vec_unchecked(self.grid, values)
    }
}

/// Unit vector `xi` selecting the component of the effective tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction(Vec<f64>);

impl Direction {
    pub fn new(xi: Vec<f64>) -> Result<Self> {
        let norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "direction must have unit norm, got {norm}"
            )));
        }
        Ok(Self(xi))
    }

    /// Canonical basis vector `e_axis` in `dim` dimensions.
    pub fn axis(dim: usize, axis: usize) -> Self {
        let mut xi = vec![0.0; dim];
        xi[axis] = 1.0;
        Self(xi)
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }
}

/// Ellipticity bounds `0 < lambda0 <= a <= lambda1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBounds {
    pub lambda0: f64,
    pub lambda1: f64,
}

impl CoefficientBounds {
    pub fn new(lambda0: f64, lambda1: f64) -> Result<Self> {
        if !(lambda0 > 0.0 && lambda1 >= lambda0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < lambda0 <= lambda1, got [{lambda0}, {lambda1}]"
            )));
        }
        Ok(Self { lambda0, lambda1 })
    }

    pub fn contains(&self, a: &Field) -> bool {
        a.values()
            .iter()
            .all(|&v| v >= self.lambda0 && v <= self.lambda1)
    }
}

/// `(a_i + a_{i +/- e_k}) / 2`, periodic.
pub fn half_grid_coeff(a: &Field, index: &[usize], axis: usize, side: Side) -> f64 {
    let flat = a.grid.flat_index(index);
    half_coeff(&a.grid, &a.values, flat, axis, side)
}

#[inline]
fn half_coeff(grid: &GridSpec, a: &[f64], flat: usize, axis: usize, side: Side) -> f64 {
    0.5 * (a[flat] + a[grid.neighbor(flat, axis, side)])
}

/// `out = L_a u` on raw slices.
pub(crate) fn apply_la_into(grid: &GridSpec, a: &[f64], u: &[f64], out: &mut [f64]) {
    let inv_h2 = (grid.n() * grid.n()) as f64;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in 0..grid.dim() {
            let ip = grid.neighbor(i, k, Side::Plus);
            let im = grid.neighbor(i, k, Side::Minus);
            let ap = 0.5 * (a[i] + a[ip]);
            let am = 0.5 * (a[i] + a[im]);
            acc += -ap * u[ip] + (am + ap) * u[i] - am * u[im];
        }
        *o = acc * inv_h2;
    }
}

/// `out = L u` (unit-coefficient periodic Laplacian) on raw slices.
pub(crate) fn apply_laplacian_into(grid: &GridSpec, u: &[f64], out: &mut [f64]) {
    let inv_h2 = (grid.n() * grid.n()) as f64;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in 0..grid.dim() {
            let ip = grid.neighbor(i, k, Side::Plus);
            let im = grid.neighbor(i, k, Side::Minus);
            acc += -u[ip] + 2.0 * u[i] - u[im];
        }
        *o = acc * inv_h2;
    }
}

pub(crate) fn assemble_ba_into(grid: &GridSpec, a: &[f64], xi: &[f64], out: &mut [f64]) {
    let inv_h = grid.n() as f64;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &xk) in xi.iter().enumerate() {
            if xk == 0.0 {
                continue;
            }
            let ap = half_coeff(grid, a, i, k, Side::Plus);
            let am = half_coeff(grid, a, i, k, Side::Minus);
            acc += xk * (ap - am);
        }
        *o = acc * inv_h;
    }
}

/// Variable-coefficient operator `(L_a u)_i = sum_k [-a_{i+e_k/2} u_{i+e_k}
/// + (a_{i-e_k/2} + a_{i+e_k/2}) u_i - a_{i-e_k/2} u_{i-e_k}] / h^2`.
pub fn apply_la(a: &Field, u: &Field) -> Result<Field> {
    a.grid.check(&u.grid)?;
    let mut out = vec![0.0; a.grid.len()];
    apply_la_into(&a.grid, &a.values, &u.values, &mut out);
    Ok(Field::from_vec_unchecked(a.grid, out))
}

/// Right-hand side `(b_a)_i = sum_k xi_k (a_{i+e_k/2} - a_{i-e_k/2}) / h` of
/// the cell problem.
pub fn assemble_ba(a: &Field, xi: &Direction) -> Result<Field> {
    if xi.0.len() != a.grid.dim() {
        return Err(Error::GridMismatch(format!(
            "direction has {} components on a {}-d grid",
            xi.0.len(),
            a.grid.dim()
        )));
    }
    let mut out = vec![0.0; a.grid.len()];
    assemble_ba_into(&a.grid, &a.values, &xi.0, &mut out);
    Ok(Field::from_vec_unchecked(a.grid, out))
}

/// Periodic second-difference Laplacian `L`, i.e. `L_a` with `a = 1`.
pub fn apply_laplacian(u: &Field) -> Field {
    let mut out = vec![0.0; u.grid.len()];
    apply_laplacian_into(&u.grid, &u.values, &mut out);
    Field::from_vec_unchecked(u.grid, out)
}

/// Discrete energy `E(u; a) = (h^d / 2) (u^T L_a u - 2 u^T b_a + a^T 1)`
/// with `xi = e_1`.
pub fn energy(u: &Field, a: &Field) -> Result<f64> {
    energy_along(u, a, &Direction::axis(a.grid.dim(), 0))
}

pub fn energy_along(u: &Field, a: &Field, xi: &Direction) -> Result<f64> {
    a.grid.check(&u.grid)?;
    let lu = apply_la(a, u)?;
    let b = assemble_ba(a, xi)?;
    Ok(energy_from_parts(&a.grid, &u.values, &lu.values, &b.values, a.sum()))
}

pub(crate) fn energy_from_parts(grid: &GridSpec, u: &[f64], lu: &[f64], b: &[f64], a_sum: f64) -> f64 {
    let quad: f64 = u.iter().zip(lu).map(|(x, y)| x * y).sum();
    let lin: f64 = u.iter().zip(b).map(|(x, y)| x * y).sum();
    0.5 * grid.cell_volume() * (quad - 2.0 * lin + a_sum)
}

/// Gradient of [`energy`]: `h^d (L_a u - b_a)`.
pub fn energy_gradient(u: &Field, a: &Field) -> Result<Field> {
    energy_gradient_along(u, a, &Direction::axis(a.grid.dim(), 0))
}

pub fn energy_gradient_along(u: &Field, a: &Field, xi: &Direction) -> Result<Field> {
    let mut g = apply_la(a, u)?;
    let b = assemble_ba(a, xi)?;
    let vol = a.grid.cell_volume();
    for (gi, bi) in g.values.iter_mut().zip(&b.values) {
        *gi = vol * (*gi - bi);
    }
    Ok(g)
}
