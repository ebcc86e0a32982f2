//! Projected gradient with Armijo backtracking.

use std::time::Instant;

use crate::error::{Error, Result};

use super::{inactive_stationarity, kkt_residual, ControlField, ControlProblem, CostBreakdown, GradientEval};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub max_iter: usize,
    pub initial_step: f64,
    /// Armijo slope parameter in `(0, 1)`.
    pub sigma: f64,
    /// Step reduction factor in `(0, 1)`.
    pub backtrack: f64,
    pub kkt_tol: f64,
    /// Trial steps per line search before giving up.
    pub max_trials: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iter: 20,
            initial_step: 1.0,
            sigma: 1e-4,
            backtrack: 0.5,
            kkt_tol: 1e-4,
            max_trials: 30,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.max_iter == 0 {
            errs.push("max_iter must be positive".to_string());
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            errs.push(format!("initial_step must be positive, got {}", self.initial_step));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            errs.push(format!("sigma must lie in (0, 1), got {}", self.sigma));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            errs.push(format!("backtrack must lie in (0, 1), got {}", self.backtrack));
        }
        if !(self.kkt_tol > 0.0) {
            errs.push(format!("kkt_tol must be positive, got {}", self.kkt_tol));
        }
        if self.max_trials == 0 {
            errs.push("max_trials must be positive".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIterations,
    /// No trial step satisfied the Armijo test; the best iterate is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: CostBreakdown,
    /// Measured with the fixed initial step so values are comparable.
    pub kkt: f64,
    /// Accepted step that produced this iterate (zero for the start).
    pub step: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub control: ControlField,
    pub status: Status,
    pub history: Vec<IterationRecord>,
    /// Gradient data at the returned control.
    pub last: GradientEval,
    /// `max |gamma v + p|` over samples strictly inside the box.
    pub inactive_residual: f64,
}

impl OptimizationResult {
    pub fn iterations(&self) -> usize {
        self.history.len() - 1
    }
}

/// Iterates `v+ = P(v - s grad f(v))`, accepting `s` once
/// `f(v+) <= f(v) - sigma / s |v+ - v|^2`.
///
/// Trial solves that fail (for example on the CFL check) count as rejected
/// steps. Stops when the KKT residual at step `initial_step` drops below
/// `kkt_tol`.
pub fn projected_gradient_descent(
    problem: &ControlProblem<'_>,
    v0: &ControlField,
    opt: &OptimizerConfig,
) -> Result<OptimizationResult> {
    opt.validate()?;
    let start = Instant::now();
    let s0 = opt.initial_step;
    let mut v = v0.project_box();
    let mut eval = problem.reduced_gradient(&v)?;
    let mut kkt = kkt_residual(&v, &eval.gradient, s0)?;
    let mut history = vec![IterationRecord {
        iteration: 0,
        cost: eval.breakdown,
        kkt,
        step: 0.0,
        wall_seconds: start.elapsed().as_secs_f64(),
    }];
    let mut status = Status::MaxIterations;
    let mut step = s0;
    let mut iter = 0;
    loop {
        if kkt <= opt.kkt_tol {
            status = Status::Converged;
            break;
        }
        if iter == opt.max_iter {
            break;
        }
        let mut accepted = None;
        for _ in 0..opt.max_trials {
            let trial = v.axpy(-step, &eval.gradient)?.project_box();
            let dist2 = trial.sub(&v)?.dot(&trial.sub(&v)?)?;
            if dist2 == 0.0 {
                break;
            }
            match problem.value(&trial) {
                Ok(c) if c.total <= eval.value - opt.sigma / step * dist2 => {
                    accepted = Some(trial);
                    break;
                }
                Ok(_) => {}
                Err(e) => log::debug!("trial step {step:e} rejected: {e}"),
            }
            step *= opt.backtrack;
        }
        let Some(next) = accepted else {
            log::warn!("line search failed at iteration {}", iter + 1);
            status = Status::LineSearchFailed;
            break;
        };
        iter += 1;
        v = next;
        eval = problem.reduced_gradient(&v)?;
        kkt = kkt_residual(&v, &eval.gradient, s0)?;
        log::info!("iteration {iter}: f = {:.6e}, kkt = {kkt:.3e}, step = {step:.3e}", eval.value);
        history.push(IterationRecord {
            iteration: iter,
            cost: eval.breakdown,
            kkt,
            step,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        // let the next search try a longer step again
        step = (step / opt.backtrack).min(s0);
    }
    let inactive_residual = inactive_stationarity(&v, &eval.gradient, problem.weights.gamma, 1e-12);
    Ok(OptimizationResult {
        control: v,
        status,
        history,
        last: eval,
        inactive_residual,
    })
}
