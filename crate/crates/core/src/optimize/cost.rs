//! Tracking cost and its partial derivatives with respect to the state.

use crate::error::{Error, Result};
use crate::forward::Trajectory;
use crate::geometry::{Grid, ScalarField, VectorField};

use super::control::ControlField;

/// Weights and targets of
/// `J = b1/2 |u - u_Q|^2_Q + b2/2 |phi - phi_Q|^2_Q + b3/2 |u(T) - u_Om|^2
///    + b4/2 |phi(T) - phi_Om|^2 + gamma/2 |v|^2_Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub beta: [f64; 4],
    pub gamma: f64,
    /// One face field per snapshot `t_0..t_N`.
    pub u_q: Vec<VectorField>,
    /// One cell field per snapshot `t_0..t_N`.
    pub phi_q: Vec<ScalarField>,
    pub u_omega: VectorField,
    pub phi_omega: ScalarField,
}

impl CostWeights {
    /// Zero targets for a run of `n` steps.
    pub fn zero_targets(grid: Grid, n: usize, beta: [f64; 4], gamma: f64) -> Self {
        Self {
            beta,
            gamma,
            u_q: vec![VectorField::zeros(grid); n + 1],
            phi_q: vec![ScalarField::zeros(grid); n + 1],
            u_omega: VectorField::zeros(grid),
            phi_omega: ScalarField::zeros(grid),
        }
    }

    /// Targets read off a reference trajectory (all snapshots and the final
    /// state).
    pub fn track(reference: &Trajectory, beta: [f64; 4], gamma: f64) -> Self {
        Self {
            beta,
            gamma,
            u_q: reference.snapshots.iter().map(|s| s.u.clone()).collect(),
            phi_q: reference.snapshots.iter().map(|s| s.phi.clone()).collect(),
            u_omega: reference.last().u.clone(),
            phi_omega: reference.last().phi.clone(),
        }
    }

    pub fn validate(&self, grid: &Grid, n: usize) -> Result<()> {
        if self.beta.iter().chain([&self.gamma]).any(|w| !(*w >= 0.0) || w.is_infinite()) {
            return Err(Error::InvalidArgument("cost weights must be finite and non-negative".into()));
        }
        if self.beta.iter().all(|&b| b == 0.0) && self.gamma == 0.0 {
            return Err(Error::InvalidArgument("cost weights must not all vanish".into()));
        }
        if self.u_q.len() != n + 1 || self.phi_q.len() != n + 1 {
            return Err(Error::Shape(format!(
                "targets need {} snapshots, found {} (u) and {} (phi)",
                n + 1,
                self.u_q.len(),
                self.phi_q.len()
            )));
        }
        for f in &self.u_q {
            grid.check_same(f.grid())?;
        }
        for f in &self.phi_q {
            grid.check_same(f.grid())?;
        }
        grid.check_same(self.u_omega.grid())?;
        grid.check_same(self.phi_omega.grid())
    }
}

/// Per-term values of the cost.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub tracking_u: f64,
    pub tracking_phi: f64,
    pub terminal_u: f64,
    pub terminal_phi: f64,
    pub control: f64,
    pub total: f64,
}

/// Trapezoidal weight of snapshot `n` out of `0..=big_n`.
pub(crate) fn trapezoid(n: usize, big_n: usize) -> f64 {
    if big_n == 0 {
        0.0
    } else if n == 0 || n == big_n {
        0.5
    } else {
        1.0
    }
}

/// Evaluates the cost of a trajectory and the control that produced it.
pub fn cost(traj: &Trajectory, control: &ControlField, w: &CostWeights) -> Result<CostBreakdown> {
    let n = traj.n_steps();
    w.validate(&traj.grid, n)?;
    if control.n_steps() != n {
        return Err(Error::Shape(format!("{n} steps need {n} controls, found {}", control.n_steps())));
    }
    let dt = traj.dt;
    let [b1, b2, b3, b4] = w.beta;
    let mut out = CostBreakdown::default();
    for (k, s) in traj.snapshots.iter().enumerate() {
        let q = trapezoid(k, n) * dt;
        if b1 != 0.0 {
            let d = s.u.sub(&w.u_q[k]);
            out.tracking_u += 0.5 * b1 * q * d.dot(&d);
        }
        if b2 != 0.0 {
            let d = s.phi.sub(&w.phi_q[k]);
            out.tracking_phi += 0.5 * b2 * q * d.dot(&d);
        }
    }
    let last = traj.last();
    let du = last.u.sub(&w.u_omega);
    let dphi = last.phi.sub(&w.phi_omega);
    out.terminal_u = 0.5 * b3 * du.dot(&du);
    out.terminal_phi = 0.5 * b4 * dphi.dot(&dphi);
    out.control = 0.5 * w.gamma * control.dot(control)?;
    out.total = out.tracking_u + out.tracking_phi + out.terminal_u + out.terminal_phi + out.control;
    Ok(out)
}

/// Gradients of the state part of the cost with respect to `u_n` and
/// `phi_n`, in the field inner products.
pub(crate) fn state_sources(traj: &Trajectory, w: &CostWeights) -> (Vec<VectorField>, Vec<ScalarField>) {
    let n = traj.n_steps();
    let [b1, b2, b3, b4] = w.beta;
    let mut su = Vec::with_capacity(n + 1);
    let mut sp = Vec::with_capacity(n + 1);
    for (k, s) in traj.snapshots.iter().enumerate() {
        let q = trapezoid(k, n) * traj.dt;
        let mut u = s.u.sub(&w.u_q[k]).scaled(b1 * q);
        let mut p = s.phi.sub(&w.phi_q[k]).scaled(b2 * q);
        if k == n {
            u.axpy(b3, &s.u.sub(&w.u_omega));
            p.axpy(b4, &s.phi.sub(&w.phi_omega));
        }
        su.push(u);
        sp.push(p);
    }
    (su, sp)
}
