//! Skew-symmetric centered advection on the MAC grid.
//!
//! Both operators are written in divergence form with centered
//! interpolation. For a discretely divergence-free, no-slip advecting field
//! they satisfy `<A(u, phi), phi> = 0` and `<C(u; w), w> = 0`.

use super::grid::{Grid, ScalarField, VectorField};
use super::ops::{divergence, face_average, face_average_transpose, gradient, max_divergence};
use crate::error::{Error, Result};

/// `div(u * phi_face)` with the face value of `phi` taken as the mean of the
/// adjacent cells. Wall faces carry no flux.
pub(crate) fn scalar_advection(u: &VectorField, phi: &ScalarField) -> ScalarField {
    let mut flux = face_average(phi);
    for (f, &v) in flux.data_mut().iter_mut().zip(u.data()) {
        *f *= v;
    }
    divergence(&flux)
}

/// Transpose of `phi -> scalar_advection(u, phi)`.
pub(crate) fn scalar_advection_t_phi(u: &VectorField, s: &ScalarField) -> ScalarField {
    let mut gs = gradient(s);
    for (f, &v) in gs.data_mut().iter_mut().zip(u.data()) {
        *f *= -v;
    }
    face_average_transpose(&gs)
}

/// Transpose of `u -> scalar_advection(u, phi)`.
pub(crate) fn scalar_advection_t_u(phi: &ScalarField, s: &ScalarField) -> VectorField {
    let mut gs = gradient(s);
    let avg = face_average(phi);
    for (f, &v) in gs.data_mut().iter_mut().zip(avg.data()) {
        *f *= -v;
    }
    gs
}

/// Centered advection `u . grad(phi)` in divergence form.
///
/// Fails when `u` violates the divergence-free precondition by more than
/// `10 * tol_div`.
pub fn advect_scalar(u: &VectorField, phi: &ScalarField, tol_div: f64) -> Result<ScalarField> {
    u.grid().check_same(phi.grid())?;
    check_div_free(u, tol_div)?;
    Ok(scalar_advection(u, phi))
}

/// Skew-symmetric `(u . grad) u` on faces.
pub fn advect_velocity(u: &VectorField, tol_div: f64) -> Result<VectorField> {
    check_div_free(u, tol_div)?;
    Ok(velocity_advection(u, u))
}

fn check_div_free(u: &VectorField, tol_div: f64) -> Result<()> {
    let max_div = max_divergence(u);
    let limit = 10.0 * tol_div;
    if max_div > limit {
        return Err(Error::Divergence { max_div, limit });
    }
    Ok(())
}

/// One flux of the momentum advection: the product of the interpolated
/// advecting component (mean of the faces in `a`) and the interpolated
/// advected component (mean of the faces in `b`), differenced into the
/// `targets` with the given signed coefficients. `None` marks a wall face,
/// read as zero.
struct Flux {
    a: [Option<usize>; 2],
    b: [Option<usize>; 2],
    targets: [(Option<usize>, f64); 2],
}

fn visit_momentum_fluxes(g: &Grid, mut visit: impl FnMut(&Flux)) {
    let (nx, ny) = (g.nx, g.ny);
    let xf = |i: usize, j: usize| (i > 0 && i < nx).then(|| g.xface(i, j));
    let yf = |i: usize, j: usize| (j > 0 && j < ny).then(|| g.yface(i, j));
    let (cx, cy) = (1.0 / g.hx, 1.0 / g.hy);

    // x-momentum, fluxes at cell centers: u_x u_x
    for j in 0..ny {
        for i in 0..nx {
            visit(&Flux {
                a: [xf(i, j), xf(i + 1, j)],
                b: [xf(i, j), xf(i + 1, j)],
                targets: [(xf(i, j), cx), (xf(i + 1, j), -cx)],
            });
        }
    }
    // x-momentum, fluxes at interior nodes: u_y u_x
    for j in 1..ny {
        for i in 1..nx {
            visit(&Flux {
                a: [yf(i - 1, j), yf(i, j)],
                b: [xf(i, j - 1), xf(i, j)],
                targets: [(xf(i, j - 1), cy), (xf(i, j), -cy)],
            });
        }
    }
    // y-momentum, fluxes at cell centers: u_y u_y
    for j in 0..ny {
        for i in 0..nx {
            visit(&Flux {
                a: [yf(i, j), yf(i, j + 1)],
                b: [yf(i, j), yf(i, j + 1)],
                targets: [(yf(i, j), cy), (yf(i, j + 1), -cy)],
            });
        }
    }
    // y-momentum, fluxes at interior nodes: u_x u_y
    for j in 1..ny {
        for i in 1..nx {
            visit(&Flux {
                a: [xf(i, j - 1), xf(i, j)],
                b: [yf(i - 1, j), yf(i, j)],
                targets: [(yf(i - 1, j), cx), (yf(i, j), -cx)],
            });
        }
    }
}

#[inline]
fn mean2(v: &[f64], idx: &[Option<usize>; 2]) -> f64 {
    0.5 * (idx[0].map_or(0.0, |k| v[k]) + idx[1].map_or(0.0, |k| v[k]))
}

/// Bilinear momentum advection `C(a; b)`: `a` advects `b`.
pub(crate) fn velocity_advection(a: &VectorField, b: &VectorField) -> VectorField {
    let g = *a.grid();
    let (ad, bd) = (a.data(), b.data());
    let mut out = VectorField::zeros(g);
    let o = out.data_mut();
    visit_momentum_fluxes(&g, |f| {
        let flux = mean2(ad, &f.a) * mean2(bd, &f.b);
        for &(t, c) in &f.targets {
            if let Some(t) = t {
                o[t] += c * flux;
            }
        }
    });
    out
}

/// Transpose of `b -> C(a; b)`.
pub(crate) fn velocity_advection_t_b(a: &VectorField, s: &VectorField) -> VectorField {
    let g = *a.grid();
    let (ad, sd) = (a.data(), s.data());
    let mut out = VectorField::zeros(g);
    let o = out.data_mut();
    visit_momentum_fluxes(&g, |f| {
        let w: f64 = f.targets.iter().filter_map(|&(t, c)| t.map(|t| c * sd[t])).sum();
        let share = 0.5 * w * mean2(ad, &f.a);
        for k in f.b.iter().flatten() {
            o[*k] += share;
        }
    });
    out
}

/// Transpose of `a -> C(a; b)`.
pub(crate) fn velocity_advection_t_a(b: &VectorField, s: &VectorField) -> VectorField {
    let g = *b.grid();
    let (bd, sd) = (b.data(), s.data());
    let mut out = VectorField::zeros(g);
    let o = out.data_mut();
    visit_momentum_fluxes(&g, |f| {
        let w: f64 = f.targets.iter().filter_map(|&(t, c)| t.map(|t| c * sd[t])).sum();
        let share = 0.5 * w * mean2(bd, &f.b);
        for k in f.a.iter().flatten() {
            o[*k] += share;
        }
    });
    out
}
