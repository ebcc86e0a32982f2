//! Tangent and adjoint sweeps of the discrete forward map.
//!
//! The tangent differentiates one time step with respect to
//! `(u^n, phi^n, v^n)` about a stored trajectory. The adjoint applies the
//! transpose of the same linear step backward in time, so the two are
//! dual to solver tolerance.
//!
//! Tangent of one step (`phi+`, `u+` taken from the trajectory):
//!
//! ```text
//! eta+ = S^-1 [ eta - dt A(xi, phi) - dt A(u, eta) - dt div(avg(m' eta) J)
//!               - dt div(M J(eta)) + dt div(avg(lambda' eta) grad phi+) ]
//! xi+  = X [ xi - dt C(xi; u) - dt C(u; xi) + dt df[eta+] + dt dV[eta+] u+ + dt h ]
//! ```
//!
//! with `S` the frozen diffusion operator, `X = (P W P)^+ P` the Stokes
//! solve and `df[eta] = -avg(K * eta) grad phi+ - avg(K * phi+) grad eta`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{simulate, SolverConfig, Stepper, Trajectory};
use crate::geometry::{
    divergence, face_average, face_average_transpose, gradient, gradient_transpose, scalar_advection,
    scalar_advection_t_phi, scalar_advection_t_u, strain, stress_divergence, stress_divergence_t_phi,
    velocity_advection, velocity_advection_t_a, velocity_advection_t_b, laplacian_neumann, ScalarField,
    VectorField, ViscosityWeights,
};
use crate::material::MaterialLaws;
use crate::nonlocal::DiscreteKernel;
use crate::optimize::{state_sources, trapezoid, ControlField, CostWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct LinSnapshot {
    pub t: f64,
    pub xi: VectorField,
    pub eta: ScalarField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjSnapshot {
    pub t: f64,
    /// Velocity adjoint; for `n < N` this is the sensitivity of the cost to
    /// the control `v^n`, so the reduced gradient is `gamma v^n + p^n`.
    pub p: VectorField,
    pub q: ScalarField,
}

fn stepper_for<'a>(
    traj: &Trajectory,
    dk: &'a DiscreteKernel,
    laws: &'a dyn MaterialLaws,
    cfg: SolverConfig,
) -> Result<Stepper<'a>> {
    traj.validate()?;
    dk.grid().check_same(&traj.grid)?;
    if (cfg.dt - traj.dt).abs() > 1e-14 * traj.dt {
        return Err(Error::InvalidArgument(format!(
            "solver dt {} differs from trajectory dt {}",
            cfg.dt, traj.dt
        )));
    }
    Stepper::new(dk, laws, cfg)
}

/// `div(w)` of a face field whose walls are treated as zero.
fn div0(w: VectorField) -> ScalarField {
    divergence(&w.with_zero_walls())
}

/// Integrates the tangent system for the control perturbation `h`.
pub fn solve_linearized(
    traj: &Trajectory,
    h: &[VectorField],
    dk: &DiscreteKernel,
    laws: &dyn MaterialLaws,
    cfg: SolverConfig,
) -> Result<Vec<LinSnapshot>> {
    let st = stepper_for(traj, dk, laws, cfg)?;
    let n = traj.n_steps();
    if h.len() != n {
        return Err(Error::Shape(format!("{n} steps need {n} perturbations, found {}", h.len())));
    }
    let g = traj.grid;
    let dt = cfg.dt;
    let mut out = Vec::with_capacity(n + 1);
    out.push(LinSnapshot {
        t: traj.snapshots[0].t,
        xi: VectorField::zeros(g),
        eta: ScalarField::zeros(g),
    });
    for k in 0..n {
        let (cur, next) = (&traj.snapshots[k], &traj.snapshots[k + 1]);
        let (xi, eta) = (&out[k].xi, &out[k].eta);
        let step = || -> Result<(VectorField, ScalarField)> {
            let c = st.ch_coefficients(&cur.phi)?;
            let mp = eta.zip_map(&cur.phi, |e, s| laws.mobility_d1_clamped(s) * e);
            let lp = eta.zip_map(&cur.phi, |e, s| laws.lambda_d1_clamped(s) * e);
            let j_eta = dk.conv_grad(eta)?.with_zero_walls();
            let gphi_next = gradient(&next.phi);

            let mut flux = face_average(&mp).zip_map(&c.j, |a, b| a * b);
            flux.axpy(1.0, &c.mob_f.zip_map(&j_eta, |a, b| a * b));
            flux.axpy(-1.0, &face_average(&lp).zip_map(&gphi_next, |a, b| a * b));
            let mut rhs = eta.clone();
            rhs.axpy(-dt, &scalar_advection(xi, &cur.phi));
            rhs.axpy(-dt, &scalar_advection(&cur.u, eta));
            rhs.axpy(-dt, &div0(flux));
            let eta_next = st.solve_ch(&c.lambda_f, &rhs)?;

            let mut r = xi.clone();
            r.axpy(-dt, &velocity_advection(xi, &cur.u));
            r.axpy(-dt, &velocity_advection(&cur.u, xi));
            r.axpy(dt, &force_tangent(&st, &next.phi, &eta_next)?);
            r.axpy(dt, &stress_divergence(&next.u, &ViscosityWeights::derivative(&next.phi, &eta_next, laws)));
            r.axpy(dt, &h[k]);
            r.zero_walls();
            let w = ViscosityWeights::new(&next.phi, laws);
            Ok((st.solve_stokes(&w, &r)?, eta_next))
        };
        let (xi_next, eta_next) = step().map_err(|e| e.at_step(k + 1))?;
        out.push(LinSnapshot {
            t: next.t,
            xi: xi_next,
            eta: eta_next,
        });
    }
    Ok(out)
}

/// `df[eta] = -avg(K * eta) grad phi - avg(K * phi) grad eta`, walls zero.
fn force_tangent(st: &Stepper<'_>, phi: &ScalarField, eta: &ScalarField) -> Result<VectorField> {
    let a = face_average(&st.dk.conv_scalar(eta)?).zip_map(&gradient(phi), |k, g| -k * g);
    let b = face_average(&st.dk.conv_scalar(phi)?).zip_map(&gradient(eta), |k, g| -k * g);
    Ok(a.add(&b).with_zero_walls())
}

/// Transpose of [`force_tangent`] in `eta`, applied to `p`.
fn force_tangent_t(st: &Stepper<'_>, phi: &ScalarField, p: &VectorField) -> Result<ScalarField> {
    let p = p.clone().with_zero_walls();
    let a = st.dk.conv_scalar(&face_average_transpose(&gradient(phi).zip_map(&p, |g, q| -g * q)))?;
    let kphi = face_average(&st.dk.conv_scalar(phi)?);
    let b = gradient_transpose(&kphi.zip_map(&p, |k, q| -k * q));
    Ok(a.add(&b))
}

/// Backward sweep of the transposed tangent steps.
///
/// Returns `N + 1` snapshots. At `t_N` the snapshot holds the projected
/// terminal data; for `n < N` it holds the adjoint velocity that multiplies
/// `v^n` and the adjoint phase field after the diffusion solve of step `n`.
pub fn solve_adjoint(
    traj: &Trajectory,
    weights: &CostWeights,
    dk: &DiscreteKernel,
    laws: &dyn MaterialLaws,
    cfg: SolverConfig,
) -> Result<Vec<AdjSnapshot>> {
    let st = stepper_for(traj, dk, laws, cfg)?;
    let n = traj.n_steps();
    weights.validate(&traj.grid, n)?;
    let g = traj.grid;
    let dt = cfg.dt;
    let (su, sp) = state_sources(traj, weights);
    let mut out = vec![
        AdjSnapshot {
            t: 0.0,
            p: VectorField::zeros(g),
            q: ScalarField::zeros(g),
        };
        n + 1
    ];
    out[n] = AdjSnapshot {
        t: traj.last().t,
        p: st.poisson.project(&su[n]),
        q: sp[n].clone(),
    };
    // accumulated gradients with respect to (u_{k+1}, phi_{k+1})
    let mut ubar = su[n].clone();
    let mut phibar = sp[n].clone();
    for k in (0..n).rev() {
        let (cur, next) = (&traj.snapshots[k], &traj.snapshots[k + 1]);
        let step = || -> Result<(VectorField, ScalarField, VectorField, ScalarField)> {
            let w = ViscosityWeights::new(&next.phi, laws);
            let p = st.solve_stokes(&w, &ubar)?;
            let mut ub = p.clone();
            ub.axpy(-dt, &velocity_advection_t_a(&cur.u, &p));
            ub.axpy(-dt, &velocity_advection_t_b(&cur.u, &p));
            let mut pb = phibar.clone();
            pb.axpy(dt, &force_tangent_t(&st, &next.phi, &p)?);
            pb.axpy(dt, &stress_divergence_t_phi(&next.phi, &next.u, &p, laws));

            let c = st.ch_coefficients(&cur.phi)?;
            let s = st.solve_ch(&c.lambda_f, &pb)?;
            let gs = gradient(&s);
            let gphi_next = gradient(&next.phi);
            let mut phin = s.clone();
            phin.axpy(-dt, &scalar_advection_t_phi(&cur.u, &s));
            let m_part = face_average_transpose(&c.j.zip_map(&gs, |a, b| -a * b))
                .zip_map(&cur.phi, |v, x| laws.mobility_d1_clamped(x) * v);
            phin.axpy(-dt, &m_part);
            phin.axpy(dt, &dk.conv_grad_transpose(&c.mob_f.zip_map(&gs, |a, b| a * b).with_zero_walls()));
            let l_part = face_average_transpose(&gphi_next.zip_map(&gs, |a, b| -a * b))
                .zip_map(&cur.phi, |v, x| laws.lambda_d1_clamped(x) * v);
            phin.axpy(dt, &l_part);
            ub.axpy(-dt, &scalar_advection_t_u(&cur.phi, &s));
            Ok((p, s, ub, phin))
        };
        let (p, s, ub, phin) = step().map_err(|e| e.at_step(k + 1))?;
        out[k] = AdjSnapshot { t: cur.t, p, q: s };
        ubar = ub.add(&su[k]);
        phibar = phin.add(&sp[k]);
    }
    Ok(out)
}

/// Both sides of the duality identity
/// `sum_n <dJ/dy_n, y'_n> = sum_n dt <p^n, h^n>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityCheck {
    pub state_side: f64,
    pub control_side: f64,
    pub relative_defect: f64,
}

pub fn duality_check(
    traj: &Trajectory,
    h: &[VectorField],
    weights: &CostWeights,
    dk: &DiscreteKernel,
    laws: &dyn MaterialLaws,
    cfg: SolverConfig,
) -> Result<DualityCheck> {
    let lin = solve_linearized(traj, h, dk, laws, cfg)?;
    let adj = solve_adjoint(traj, weights, dk, laws, cfg)?;
    let (su, sp) = state_sources(traj, weights);
    let mut state_side = 0.0;
    let mut scale = 0.0;
    for (k, l) in lin.iter().enumerate() {
        let a = su[k].dot(&l.xi);
        let b = sp[k].dot(&l.eta);
        state_side += a + b;
        scale += a.abs() + b.abs();
    }
    let mut control_side = 0.0;
    for (k, hk) in h.iter().enumerate() {
        let c = cfg.dt * adj[k].p.dot(hk);
        control_side += c;
        scale += c.abs();
    }
    let relative_defect = if scale > 0.0 {
        (state_side - control_side).abs() / scale
    } else {
        0.0
    };
    Ok(DualityCheck {
        state_side,
        control_side,
        relative_defect,
    })
}

/// `||y||_Z = (sum_n w_n dt (|u_n|^2 + |phi_n|^2))^(1/2)` with trapezoidal
/// weights, for a state difference given snapshot by snapshot.
fn z_norm(du: &[VectorField], dphi: &[ScalarField], dt: f64) -> f64 {
    let n = du.len() - 1;
    let s: f64 = (0..=n)
        .map(|k| {
            let w = if n == 0 { 1.0 } else { trapezoid(k, n) * dt };
            w * (du[k].dot(&du[k]) + dphi[k].dot(&dphi[k]))
        })
        .sum();
    s.sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaylorRow {
    pub eps: f64,
    pub remainder: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaylorReport {
    pub rows: Vec<TaylorRow>,
    /// `r(eps_{i+1}) / r(eps_i)`.
    pub ratios: Vec<f64>,
    pub monotone: bool,
}

/// `r(eps) = ||S(v + eps h) - S(v) - eps S'(v) h||_Z / eps` for each `eps`.
#[allow(clippy::too_many_arguments)]
pub fn taylor_check(
    u0: &VectorField,
    phi0: &ScalarField,
    v: &ControlField,
    h: &ControlField,
    eps_list: &[f64],
    dk: &DiscreteKernel,
    laws: &dyn MaterialLaws,
    cfg: SolverConfig,
) -> Result<TaylorReport> {
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) || eps_list.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidArgument("eps_list must be positive and decreasing".into()));
    }
    let base = simulate(u0, phi0, v.values(), dk, laws, cfg)?;
    let lin = solve_linearized(&base, h.values(), dk, laws, cfg)?;
    let rows = eps_list
        .par_iter()
        .map(|&eps| -> Result<TaylorRow> {
            let vp = v.axpy(eps, h)?;
            let pert = simulate(u0, phi0, vp.values(), dk, laws, cfg)?;
            let mut du = Vec::with_capacity(lin.len());
            let mut dp = Vec::with_capacity(lin.len());
            for ((a, b), l) in pert.snapshots.iter().zip(&base.snapshots).zip(&lin) {
                let mut u = a.u.sub(&b.u);
                u.axpy(-eps, &l.xi);
                let mut p = a.phi.sub(&b.phi);
                p.axpy(-eps, &l.eta);
                du.push(u);
                dp.push(p);
            }
            Ok(TaylorRow {
                eps,
                remainder: z_norm(&du, &dp, cfg.dt) / eps,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ratios: Vec<f64> = rows
        .windows(2)
        .map(|w| if w[0].remainder > 0.0 { w[1].remainder / w[0].remainder } else { 0.0 })
        .collect();
    let monotone = rows.windows(2).all(|w| w[1].remainder <= w[0].remainder);
    Ok(TaylorReport { rows, ratios, monotone })
}

/// Norm of a state difference in the energy space: the largest
/// `|u|^2 + |phi|^2 + |grad phi|^2` over time plus the time integrals of
/// `|grad u|^2` and `|Lap phi|^2`.
pub fn w_norm(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.n_steps() != b.n_steps() {
        return Err(Error::Shape("trajectories have different lengths".into()));
    }
    a.grid.check_same(&b.grid)?;
    let g = a.grid;
    let n = a.n_steps();
    let ones_c = vec![1.0; g.n_cells()];
    let ones_n = vec![1.0; g.n_nodes()];
    let mut sup: f64 = 0.0;
    let mut integral = 0.0;
    for (k, (x, y)) in a.snapshots.iter().zip(&b.snapshots).enumerate() {
        let du = x.u.sub(&y.u);
        let dphi = x.phi.sub(&y.phi);
        let gphi = gradient(&dphi);
        sup = sup.max(du.dot(&du) + dphi.dot(&dphi) + gphi.dot(&gphi));
        // |grad u|^2 = 2 |D u|^2 for no-slip divergence-free u
        let grad_u = 2.0 * strain(&du).weighted_square(&g, &ones_c, &ones_n);
        let lap = laplacian_neumann(&dphi);
        integral += trapezoid(k, n) * a.dt * (grad_u + lap.dot(&lap));
    }
    Ok((sup + integral).sqrt())
}

/// `||S(v2) - S(v1)||_W / ||v2 - v1||`, zero when the controls coincide.
pub fn lipschitz_probe(
    u0: &VectorField,
    phi0: &ScalarField,
    v1: &ControlField,
    v2: &ControlField,
    dk: &DiscreteKernel,
    laws: &dyn MaterialLaws,
    cfg: SolverConfig,
) -> Result<f64> {
    let dv = v2.sub(v1)?.norm();
    if dv == 0.0 {
        return Ok(0.0);
    }
    let (a, b) = rayon::join(
        || simulate(u0, phi0, v1.values(), dk, laws, cfg),
        || simulate(u0, phi0, v2.values(), dk, laws, cfg),
    );
    Ok(w_norm(&b?, &a?)? / dv)
}

/// Lipschitz ratios over `pairs` random control pairs drawn uniformly from
/// the ball `|v_i| <= radius` (componentwise, divergence-free part only
/// matters to the state).
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_ensemble(
    u0: &VectorField,
    phi0: &ScalarField,
    n_steps: usize,
    radius: f64,
    pairs: usize,
    seed: u64,
    dk: &DiscreteKernel,
    laws: &dyn MaterialLaws,
    cfg: SolverConfig,
) -> Result<Vec<f64>> {
    let g = *dk.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Result<ControlField> {
        let values = (0..n_steps)
            .map(|_| {
                VectorField::from_data(g, (0..g.n_faces()).map(|_| radius * rng.gen_range(-1.0..1.0)).collect())
                    .map(|v| v.with_zero_walls())
            })
            .collect::<Result<Vec<_>>>()?;
        ControlField::new(g, cfg.dt, values, crate::optimize::BoxBounds::unbounded())
    };
    let mut controls = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        controls.push((draw(&mut rng)?, draw(&mut rng)?));
    }
    controls
        .par_iter()
        .map(|(a, b)| lipschitz_probe(u0, phi0, a, b, dk, laws, cfg))
        .collect()
}
