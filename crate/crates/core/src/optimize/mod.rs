//! Tracking cost, reduced gradient and projected-gradient descent for the
//! box-constrained control problem.

mod control;
mod cost;
mod descent;

pub use control::{kkt_residual, project_box, Bound, BoxBounds, ControlField};
pub use cost::{cost, CostBreakdown, CostWeights};
pub use descent::{
    projected_gradient_descent, IterationRecord, OptimizationResult, OptimizerConfig, Status,
};
pub(crate) use cost::{state_sources, trapezoid};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{simulate, SolverConfig, Trajectory};
use crate::geometry::{ScalarField, VectorField};
use crate::material::MaterialLaws;
use crate::nonlocal::DiscreteKernel;
use crate::sensitivity::solve_adjoint;

/// Everything needed to evaluate `f(v) = J(S(v), v)`.
#[derive(Clone, Copy)]
pub struct ControlProblem<'a> {
    pub dk: &'a DiscreteKernel,
    pub laws: &'a dyn MaterialLaws,
    pub cfg: SolverConfig,
    pub u0: &'a VectorField,
    pub phi0: &'a ScalarField,
    pub weights: &'a CostWeights,
}

/// Value and gradient of the reduced functional at one control.
#[derive(Debug, Clone)]
pub struct GradientEval {
    pub value: f64,
    pub breakdown: CostBreakdown,
    /// `gamma v + p` in the control inner product.
    pub gradient: ControlField,
    /// The adjoint velocity `p` alone.
    pub adjoint: ControlField,
    pub trajectory: Trajectory,
}

impl<'a> ControlProblem<'a> {
    fn check(&self, v: &ControlField) -> Result<()> {
        self.dk.grid().check_same(v.grid())?;
        if v.n_steps() != self.cfg.n_steps() {
            return Err(Error::Shape(format!(
                "control has {} steps, solver runs {}",
                v.n_steps(),
                self.cfg.n_steps()
            )));
        }
        if (v.dt() - self.cfg.dt).abs() > 1e-14 * self.cfg.dt {
            return Err(Error::InvalidArgument("control dt differs from solver dt".into()));
        }
        Ok(())
    }

    pub fn simulate(&self, v: &ControlField) -> Result<Trajectory> {
        self.check(v)?;
        Ok(simulate(self.u0, self.phi0, v.values(), self.dk, self.laws, self.cfg)?)
    }

    /// `f(v)` with its per-term breakdown.
    pub fn value(&self, v: &ControlField) -> Result<CostBreakdown> {
        cost(&self.simulate(v)?, v, self.weights)
    }

    /// Forward run, backward adjoint sweep and `gamma v + p`.
    pub fn reduced_gradient(&self, v: &ControlField) -> Result<GradientEval> {
        let trajectory = self.simulate(v)?;
        let breakdown = cost(&trajectory, v, self.weights)?;
        let adj = solve_adjoint(&trajectory, self.weights, self.dk, self.laws, self.cfg)?;
        let n = v.n_steps();
        let adjoint = v.with_values(adj[..n].iter().map(|a| a.p.clone()).collect())?;
        let gradient = v.scaled(self.weights.gamma).axpy(1.0, &adjoint)?;
        Ok(GradientEval {
            value: breakdown.total,
            breakdown,
            gradient,
            adjoint,
            trajectory,
        })
    }

    /// Central differences `(f(v + eps h) - f(v - eps h)) / (2 eps)` for each
    /// direction, evaluated in parallel.
    pub fn fd_gradient(&self, v: &ControlField, directions: &[ControlField], eps: f64) -> Result<Vec<f64>> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
        }
        directions
            .par_iter()
            .map(|h| {
                let plus = self.value(&v.axpy(eps, h)?)?.total;
                let minus = self.value(&v.axpy(-eps, h)?)?.total;
                Ok((plus - minus) / (2.0 * eps))
            })
            .collect()
    }
}

/// Largest `|gamma v + p|` over samples where `v` is strictly inside the box
/// by more than `tol`. With `gamma = 0` there is nothing to check and the
/// result is zero.
pub fn inactive_stationarity(v: &ControlField, grad: &ControlField, gamma: f64, tol: f64) -> f64 {
    if gamma == 0.0 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for (n, g) in grad.values().iter().enumerate() {
        for (k, &x) in g.data().iter().enumerate() {
            if v.active(n, k, tol).is_none() {
                worst = worst.max(x.abs());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests;
