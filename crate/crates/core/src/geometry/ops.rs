//! Face/cell difference operators and interpolations on the MAC grid.
//!
//! Wall-normal face values are treated as zero by every operator that reads
//! fluxes: the boundary faces carry no flux (no-flux scalars, no-slip
//! velocity). Operators that produce face fields leave wall faces at zero.

use super::grid::{Grid, ScalarField, VectorField};

/// Discrete divergence of a face field, evaluated at cell centers.
///
/// This is the conservative face difference and reads every face value,
/// walls included.
pub fn divergence(w: &VectorField) -> ScalarField {
    let g = *w.grid();
    let mut out = vec![0.0; g.n_cells()];
    let d = w.data();
    for j in 0..g.ny {
        for i in 0..g.nx {
            out[g.cell(i, j)] = (d[g.xface(i + 1, j)] - d[g.xface(i, j)]) / g.hx
                + (d[g.yface(i, j + 1)] - d[g.yface(i, j)]) / g.hy;
        }
    }
    ScalarField::from_values(g, out).expect("divergence of a finite field")
}

/// Two-point gradient on faces with a homogeneous Neumann closure (zero
/// normal difference on the walls).
pub fn gradient(phi: &ScalarField) -> VectorField {
    let g = *phi.grid();
    let v = phi.values();
    let mut out = VectorField::zeros(g);
    let d = out.data_mut();
    for j in 0..g.ny {
        for i in 1..g.nx {
            d[g.xface(i, j)] = (v[g.cell(i, j)] - v[g.cell(i - 1, j)]) / g.hx;
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            d[g.yface(i, j)] = (v[g.cell(i, j)] - v[g.cell(i, j - 1)]) / g.hy;
        }
    }
    out
}

/// Five-point Neumann Laplacian, literally `divergence(gradient(phi))`.
pub fn laplacian_neumann(phi: &ScalarField) -> ScalarField {
    divergence(&gradient(phi))
}

/// Transpose of [`gradient`] with respect to the quadrature inner products:
/// `<gradient(phi), w> = <phi, gradient_transpose(w)>`. Equals
/// `-divergence(w)` once the wall faces of `w` are zeroed.
pub(crate) fn gradient_transpose(w: &VectorField) -> ScalarField {
    let mut w = w.clone();
    w.zero_walls();
    divergence(&w).scaled(-1.0)
}

/// Arithmetic mean of the two cells adjacent to each interior face.
pub(crate) fn face_average(phi: &ScalarField) -> VectorField {
    let g = *phi.grid();
    let v = phi.values();
    let mut out = VectorField::zeros(g);
    let d = out.data_mut();
    for j in 0..g.ny {
        for i in 1..g.nx {
            d[g.xface(i, j)] = 0.5 * (v[g.cell(i, j)] + v[g.cell(i - 1, j)]);
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            d[g.yface(i, j)] = 0.5 * (v[g.cell(i, j)] + v[g.cell(i, j - 1)]);
        }
    }
    out
}

pub(crate) fn face_average_transpose(w: &VectorField) -> ScalarField {
    let g = *w.grid();
    let d = w.data();
    let mut out = vec![0.0; g.n_cells()];
    for j in 0..g.ny {
        for i in 1..g.nx {
            let h = 0.5 * d[g.xface(i, j)];
            out[g.cell(i, j)] += h;
            out[g.cell(i - 1, j)] += h;
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            let h = 0.5 * d[g.yface(i, j)];
            out[g.cell(i, j)] += h;
            out[g.cell(i, j - 1)] += h;
        }
    }
    ScalarField::from_values(g, out).expect("finite")
}

/// Cells adjacent to node `(i, j)` (between one and four of them).
fn node_cells(g: &Grid, i: usize, j: usize) -> impl Iterator<Item = usize> + '_ {
    let is = i.saturating_sub(1)..(i + 1).min(g.nx);
    let js = j.saturating_sub(1)..(j + 1).min(g.ny);
    js.flat_map(move |jj| is.clone().map(move |ii| g.cell(ii, jj)))
}

/// Average of the cells touching each corner node.
pub(crate) fn node_average(g: &Grid, cell_values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.n_nodes()];
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let (s, n) = node_cells(g, i, j).fold((0.0, 0usize), |(s, n), c| (s + cell_values[c], n + 1));
            out[g.node(i, j)] = s / n as f64;
        }
    }
    out
}

pub(crate) fn node_average_transpose(g: &Grid, node_values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.n_cells()];
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let n = node_cells(g, i, j).count() as f64;
            let share = node_values[g.node(i, j)] / n;
            for c in node_cells(g, i, j) {
                out[c] += share;
            }
        }
    }
    out
}

/// Largest `|div w|` over cells.
pub fn max_divergence(w: &VectorField) -> f64 {
    divergence(w).max_abs()
}
