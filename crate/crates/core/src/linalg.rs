//! Small dense-vector kernels and a preconditioned conjugate gradient solver.

use crate::error::{Error, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Outcome of a converged Krylov solve.
#[derive(Debug, Clone, Copy)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Conjugate gradients for `A x = b` with `A` symmetric positive definite
/// (or semidefinite with `b` in its range). `x` holds the initial guess on
/// entry. `inv_diag`, when given, is a Jacobi preconditioner.
///
/// The residual is measured relative to `max(|b|, ref_norm)`. A positive
/// `ref_norm` lets a right-hand side that is zero up to roundoff (for
/// example after a projection) count as converged.
#[allow(clippy::too_many_arguments)]
pub fn conjugate_gradient(
    solver: &'static str,
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    ref_norm: f64,
    x: &mut [f64],
    inv_diag: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<CgStats> {
    let n = b.len();
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let precondition = |r: &[f64], z: &mut [f64]| match inv_diag {
        Some(d) => {
            for ((zi, ri), di) in z.iter_mut().zip(r).zip(d) {
                *zi = ri * di;
            }
        }
        None => z.copy_from_slice(r),
    };
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let reference = b_norm.max(ref_norm);
    let mut res = norm2(&r) / reference;
    let mut it = 0;
    while res > tol {
        if it >= max_iter {
            return Err(Error::NoConvergence {
                solver,
                iterations: it,
                residual: res,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::NoConvergence {
                solver,
                iterations: it,
                residual: res,
            });
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
        res = norm2(&r) / reference;
        it += 1;
    }
    Ok(CgStats {
        iterations: it,
        relative_residual: res,
    })
}
