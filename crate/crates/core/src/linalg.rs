//! Vector kernels and a conjugate-gradient solver for matrix-free SPD (or
//! PSD with a constant nullspace) operators.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Subtract the arithmetic mean, projecting onto `{x : 1^T x = 0}`.
pub fn remove_mean(x: &mut [f64]) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    /// Stop once `||b - A x|| <= tol * ||b||`.
    pub tol: f64,
    pub max_iter: usize,
    /// Re-project iterates and residuals onto the mean-zero subspace every
    /// step (for operators whose nullspace is the constants).
    pub project_mean: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct CgOutcome {
    pub iterations: usize,
    /// Recursively updated residual norm of the returned iterate.
    pub residual_norm: f64,
    pub converged: bool,
}

/// Solve `A x = b` starting from the contents of `x`. On non-convergence `x`
/// holds the iterate with the smallest residual seen.
pub fn conjugate_gradient<A>(apply: A, b: &[f64], x: &mut [f64], opts: CgOptions) -> CgOutcome
where
    A: Fn(&[f64], &mut [f64]),
{
    let len = b.len();
    let mut rhs = b.to_vec();
    if opts.project_mean {
        remove_mean(&mut rhs);
        remove_mean(x);
    }
    let target = opts.tol * norm2(&rhs);

    let mut ap = vec![0.0; len];
    apply(x, &mut ap);
    let mut r: Vec<f64> = rhs.iter().zip(&ap).map(|(b, ax)| b - ax).collect();
    if opts.project_mean {
        remove_mean(&mut r);
    }
    let mut rr = dot(&r, &r);
    let mut best = (rr.sqrt(), x.to_vec());
    if rr.sqrt() <= target {
        return CgOutcome {
            iterations: 0,
            residual_norm: rr.sqrt(),
            converged: true,
        };
    }

    let mut p = r.clone();
    for it in 1..=opts.max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            // Breakdown: direction in the nullspace or operator not definite.
            break;
        }
        let alpha = rr / pap;
        for i in 0..len {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if opts.project_mean {
            remove_mean(x);
            remove_mean(&mut r);
        }
        let rr_new = dot(&r, &r);
        let res = rr_new.sqrt();
        if res < best.0 {
            best.0 = res;
            best.1.copy_from_slice(x);
        }
        if res <= target {
            return CgOutcome {
                iterations: it,
                residual_norm: res,
                converged: true,
            };
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..len {
            p[i] = r[i] + beta * p[i];
        }
    }
    x.copy_from_slice(&best.1);
    CgOutcome {
        iterations: opts.max_iter,
        residual_norm: best.0,
        converged: false,
    }
}
