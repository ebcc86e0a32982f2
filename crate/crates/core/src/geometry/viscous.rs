//! Conservative variable-viscosity stress operator `2 div(nu(phi) D u)`.
//!
//! The operator is assembled as `-E^T W E` where `E` maps face velocities to
//! the strain components (normal strains at cell centers, shear strain at
//! corner nodes, with reflected ghost velocities on the walls) and `W` holds
//! the viscosity weights. It is therefore symmetric and negative
//! semidefinite by construction.

use super::grid::{Grid, ScalarField, VectorField};
use super::ops::{node_average, node_average_transpose};
use crate::material::MaterialLaws;

/// Strain-rate tensor components of a face velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct Strain {
    /// `du_x/dx` at cell centers.
    pub d11: Vec<f64>,
    /// `du_y/dy` at cell centers.
    pub d22: Vec<f64>,
    /// `(du_x/dy + du_y/dx) / 2` at corner nodes.
    pub d12: Vec<f64>,
}

/// Trapezoidal weight of a corner node: 1 inside, 1/2 on an edge, 1/4 at a
/// corner of the domain.
pub(crate) fn node_quadrature(g: &Grid, k: usize) -> f64 {
    let (i, j) = (k % (g.nx + 1), k / (g.nx + 1));
    let fx = if i == 0 || i == g.nx { 0.5 } else { 1.0 };
    let fy = if j == 0 || j == g.ny { 0.5 } else { 1.0 };
    fx * fy
}

impl Strain {
    /// `sum D:D` quadrature, i.e. `||D u||^2` (weighted by `w_cell`, `w_node`).
    pub fn weighted_square(&self, g: &Grid, w_cell: &[f64], w_node: &[f64]) -> f64 {
        let c: f64 = self
            .d11
            .iter()
            .zip(&self.d22)
            .zip(w_cell)
            .map(|((a, b), w)| w * (a * a + b * b))
            .sum();
        let n: f64 = self
            .d12
            .iter()
            .zip(w_node)
            .enumerate()
            .map(|(k, (s, w))| 2.0 * node_quadrature(g, k) * w * s * s)
            .sum();
        g.cell_volume() * (c + n)
    }
}

pub fn strain(u: &VectorField) -> Strain {
    let g = *u.grid();
    let d = u.data();
    let ux = |i: usize, j: usize| if i == 0 || i == g.nx { 0.0 } else { d[g.xface(i, j)] };
    let uy = |i: usize, j: usize| if j == 0 || j == g.ny { 0.0 } else { d[g.yface(i, j)] };
    let mut d11 = vec![0.0; g.n_cells()];
    let mut d22 = vec![0.0; g.n_cells()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let c = g.cell(i, j);
            d11[c] = (ux(i + 1, j) - ux(i, j)) / g.hx;
            d22[c] = (uy(i, j + 1) - uy(i, j)) / g.hy;
        }
    }
    let mut d12 = vec![0.0; g.n_nodes()];
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let dudy = if j == 0 {
                2.0 * ux(i, 0) / g.hy
            } else if j == g.ny {
                -2.0 * ux(i, g.ny - 1) / g.hy
            } else {
                (ux(i, j) - ux(i, j - 1)) / g.hy
            };
            let dvdx = if i == 0 {
                2.0 * uy(0, j) / g.hx
            } else if i == g.nx {
                -2.0 * uy(g.nx - 1, j) / g.hx
            } else {
                (uy(i, j) - uy(i - 1, j)) / g.hx
            };
            d12[g.node(i, j)] = 0.5 * (dudy + dvdx);
        }
    }
    Strain { d11, d22, d12 }
}

/// Transpose of [`strain`]; wall faces of the result are zero.
pub fn strain_transpose(g: &Grid, s: &Strain) -> VectorField {
    let mut out = VectorField::zeros(*g);
    let o = out.data_mut();
    let interior_x = |i: usize| i > 0 && i < g.nx;
    let interior_y = |j: usize| j > 0 && j < g.ny;
    for j in 0..g.ny {
        for i in 0..g.nx {
            let c = g.cell(i, j);
            let a = s.d11[c] / g.hx;
            if interior_x(i + 1) {
                o[g.xface(i + 1, j)] += a;
            }
            if interior_x(i) {
                o[g.xface(i, j)] -= a;
            }
            let b = s.d22[c] / g.hy;
            if interior_y(j + 1) {
                o[g.yface(i, j + 1)] += b;
            }
            if interior_y(j) {
                o[g.yface(i, j)] -= b;
            }
        }
    }
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let h = 0.5 * s.d12[g.node(i, j)];
            if interior_x(i) {
                if j == 0 {
                    o[g.xface(i, 0)] += 2.0 * h / g.hy;
                } else if j == g.ny {
                    o[g.xface(i, g.ny - 1)] -= 2.0 * h / g.hy;
                } else {
                    o[g.xface(i, j)] += h / g.hy;
                    o[g.xface(i, j - 1)] -= h / g.hy;
                }
            }
            if interior_y(j) {
                if i == 0 {
                    o[g.yface(0, j)] += 2.0 * h / g.hx;
                } else if i == g.nx {
                    o[g.yface(g.nx - 1, j)] -= 2.0 * h / g.hx;
                } else {
                    o[g.yface(i, j)] += h / g.hx;
                    o[g.yface(i - 1, j)] -= h / g.hx;
                }
            }
        }
    }
    out
}

/// Viscosity sampled where the stress lives.
#[derive(Debug, Clone)]
pub struct ViscosityWeights {
    pub cell: Vec<f64>,
    pub node: Vec<f64>,
}

impl ViscosityWeights {
    pub fn new(phi: &ScalarField, laws: &dyn MaterialLaws) -> Self {
        let cell: Vec<f64> = phi.values().iter().map(|&s| laws.viscosity_clamped(s)).collect();
        let node = node_average(phi.grid(), &cell);
        Self { cell, node }
    }

    /// Weights of the variation `nu'(phi) eta` for a perturbation `eta`.
    pub fn derivative(phi: &ScalarField, eta: &ScalarField, laws: &dyn MaterialLaws) -> Self {
        let cell: Vec<f64> = phi
            .values()
            .iter()
            .zip(eta.values())
            .map(|(&s, &e)| laws.viscosity_d1_clamped(s) * e)
            .collect();
        let node = node_average(phi.grid(), &cell);
        Self { cell, node }
    }
}

/// `-E^T (weights * E u)` with cell weight `2 nu` and node weight `4 nu`
/// (times the node quadrature weight).
pub(crate) fn stress_divergence(u: &VectorField, w: &ViscosityWeights) -> VectorField {
    let g = *u.grid();
    let mut s = strain(u);
    for (k, v) in s.d11.iter_mut().enumerate() {
        *v *= -2.0 * w.cell[k];
    }
    for (k, v) in s.d22.iter_mut().enumerate() {
        *v *= -2.0 * w.cell[k];
    }
    for (k, v) in s.d12.iter_mut().enumerate() {
        *v *= -4.0 * node_quadrature(&g, k) * w.node[k];
    }
    strain_transpose(&g, &s)
}

/// Transpose, with respect to the cell perturbation `eta`, of
/// `eta -> stress_divergence(u, ViscosityWeights::derivative(phi, eta))`,
/// applied to the face field `r`. This is the `2 nu'(phi) Du : Dr` term.
pub(crate) fn stress_divergence_t_phi(
    phi: &ScalarField,
    u: &VectorField,
    r: &VectorField,
    laws: &dyn MaterialLaws,
) -> ScalarField {
    let g = *u.grid();
    let su = strain(u);
    let sr = strain(r);
    let node_part: Vec<f64> = su
        .d12
        .iter()
        .zip(&sr.d12)
        .enumerate()
        .map(|(k, (a, b))| -4.0 * node_quadrature(&g, k) * a * b)
        .collect();
    let from_nodes = node_average_transpose(&g, &node_part);
    let values: Vec<f64> = (0..g.n_cells())
        .map(|c| {
            let cell_part = -2.0 * (su.d11[c] * sr.d11[c] + su.d22[c] * sr.d22[c]);
            laws.viscosity_d1_clamped(phi.values()[c]) * (cell_part + from_nodes[c])
        })
        .collect();
    ScalarField::from_values(g, values).expect("finite")
}

/// Conservative discretization of `2 div(nu(phi) D u)` with no-slip walls.
pub fn viscous_term(phi: &ScalarField, u: &VectorField, laws: &dyn MaterialLaws) -> VectorField {
    stress_divergence(u, &ViscosityWeights::new(phi, laws))
}
