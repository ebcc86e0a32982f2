//! Homogeneous-Neumann Poisson solver and the discrete Leray projector.
//!
//! The five-point Neumann Laplacian on a uniform cell-centered grid is
//! diagonalized exactly by the separable cosine basis
//! `cos(pi k (i + 1/2) / n)`, so the solve is a pair of dense cosine
//! transforms per direction. The result is exact up to roundoff, which
//! keeps the projector symmetric to machine precision.

use std::f64::consts::PI;

use super::grid::{Grid, ScalarField, VectorField};
use super::ops::{divergence, gradient};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct NeumannPoisson {
    grid: Grid,
    /// Orthonormal cosine basis, row-major `[i * n + k]`.
    qx: Vec<f64>,
    qy: Vec<f64>,
    /// Eigenvalues `[l * nx + k]` of the 2D operator.
    eig: Vec<f64>,
}

fn cosine_basis(n: usize) -> Vec<f64> {
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            q[i * n + k] = s * (PI * k as f64 * (i as f64 + 0.5) / n as f64).cos();
        }
    }
    q
}

fn eigenvalues_1d(n: usize, h: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let s = (PI * k as f64 / (2.0 * n as f64)).sin();
            -4.0 * s * s / (h * h)
        })
        .collect()
}

impl NeumannPoisson {
    pub fn new(grid: Grid) -> Self {
        let ex = eigenvalues_1d(grid.nx, grid.hx);
        let ey = eigenvalues_1d(grid.ny, grid.hy);
        let mut eig = vec![0.0; grid.n_cells()];
        for l in 0..grid.ny {
            for k in 0..grid.nx {
                eig[l * grid.nx + k] = ex[k] + ey[l];
            }
        }
        Self {
            grid,
            qx: cosine_basis(grid.nx),
            qy: cosine_basis(grid.ny),
            eig,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `out[l][k] = sum_j sum_i qy[j][l] qx[i][k] v[j][i]` (or its inverse).
    fn transform(&self, v: &[f64], inverse: bool) -> Vec<f64> {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let mut tmp = vec![0.0; nx * ny];
        for j in 0..ny {
            let row = &v[j * nx..(j + 1) * nx];
            let out = &mut tmp[j * nx..(j + 1) * nx];
            for (i, &x) in row.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                // forward: sum_i x_i q[i][k]; inverse: sum_k x_k q[i][k]
                for (k, o) in out.iter_mut().enumerate() {
                    *o += x * if inverse { self.qx[k * nx + i] } else { self.qx[i * nx + k] };
                }
            }
        }
        let mut out = vec![0.0; nx * ny];
        for j in 0..ny {
            for l in 0..ny {
                let q = if inverse { self.qy[l * ny + j] } else { self.qy[j * ny + l] };
                if q == 0.0 {
                    continue;
                }
                let src = &tmp[j * nx..(j + 1) * nx];
                let dst = &mut out[l * nx..(l + 1) * nx];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += q * s;
                }
            }
        }
        out
    }

    /// Solves `laplacian_neumann(p) = rhs` for the zero-mean `p`.
    ///
    /// `rhs` must have zero mean to within `1e-10` relative to its largest
    /// entry.
    pub fn solve(&self, rhs: &ScalarField) -> Result<ScalarField> {
        self.grid.check_same(rhs.grid())?;
        let mean = rhs.mean();
        if mean.abs() > 1e-10 * rhs.max_abs().max(1.0) {
            return Err(Error::IncompatibleRhs { mean });
        }
        Ok(self.solve_unchecked(rhs))
    }

    pub(crate) fn solve_unchecked(&self, rhs: &ScalarField) -> ScalarField {
        let mut coef = self.transform(rhs.values(), false);
        coef[0] = 0.0;
        for (c, e) in coef.iter_mut().zip(&self.eig).skip(1) {
            *c /= e;
        }
        let values = self.transform(&coef, true);
        let mut p = ScalarField::from_values(self.grid, values).expect("finite");
        p.remove_mean();
        p
    }

    /// Discrete Leray projection `w - G L^{-1} D w` of a face field with its
    /// wall faces zeroed first. The result is no-slip and divergence free.
    pub fn project(&self, w: &VectorField) -> VectorField {
        let mut w = w.clone();
        w.zero_walls();
        let p = self.solve_unchecked(&divergence(&w));
        let mut out = w;
        out.axpy(-1.0, &gradient(&p));
        out
    }
}

/// Zero-mean solution of the homogeneous Neumann problem `L p = rhs`.
pub fn poisson_pressure(rhs: &ScalarField) -> Result<ScalarField> {
    NeumannPoisson::new(*rhs.grid()).solve(rhs)
}
