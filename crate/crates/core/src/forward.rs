//! Semi-implicit time stepping of the coupled state system.
//!
//! One step advances the phase field first (frozen-coefficient implicit
//! diffusion, explicit advection and nonlocal flux, using the old
//! velocity), then the velocity with the new phase field. The momentum
//! update is an implicit Stokes solve restricted to discretely
//! divergence-free fields:
//!
//! ```text
//! u+ = (P W P)^+ P [u - dt C(u; u) + dt f(phi+, v)],   W = I - dt V(phi+)
//! ```
//!
//! where `P` is the discrete Leray projector. Gradient forces are removed
//! by `P` exactly, and the pressure is recovered afterwards from the
//! residual `W u+ - rhs`, which is a discrete gradient.

use crate::error::{Error, Result};
use crate::geometry::{
    divergence, face_average, gradient, max_divergence, scalar_advection, stress_divergence,
    strain, velocity_advection, Grid, NeumannPoisson, ScalarField, VectorField, ViscosityWeights,
};
use crate::linalg::conjugate_gradient;
use crate::material::MaterialLaws;
use crate::nonlocal::DiscreteKernel;

/// Time step, horizon and tolerances of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_final: f64,
    /// Largest `|div u|` accepted on input velocities.
    pub tol_div: f64,
    /// Largest overshoot `max|phi| - 1` accepted.
    pub tol_bound: f64,
    /// Largest `|div u|` accepted after the projection.
    pub tol_poisson: f64,
    /// Relative residual of the conjugate-gradient solves.
    pub tol_linear: f64,
    /// Bound on `|u|max dt / h`.
    pub cfl_safety: f64,
    pub max_linear_iter: usize,
}

impl SolverConfig {
    pub fn new(dt: f64, t_final: f64) -> Result<Self> {
        let cfg = Self {
            dt,
            t_final,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config with `n` steps of size `dt`.
    pub fn with_steps(dt: f64, n: usize) -> Result<Self> {
        Self::new(dt, dt * n as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("tol_div", self.tol_div),
            ("tol_bound", self.tol_bound),
            ("tol_poisson", self.tol_poisson),
            ("tol_linear", self.tol_linear),
            ("cfl_safety", self.cfl_safety),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.t_final >= 0.0) || self.t_final.is_infinite() {
            return Err(Error::InvalidArgument(format!("T must be non-negative, got {}", self.t_final)));
        }
        if self.t_final > 0.0 && self.dt > self.t_final * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!("dt = {} exceeds T = {}", self.dt, self.t_final)));
        }
        let n = self.t_final / self.dt;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "T = {} is not an integer multiple of dt = {}",
                self.t_final, self.dt
            )));
        }
        if self.max_linear_iter == 0 {
            return Err(Error::InvalidArgument("max_linear_iter must be positive".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 1e-2,
            tol_div: 1e-10,
            tol_bound: 1e-8,
            tol_poisson: 1e-10,
            tol_linear: 1e-13,
            cfl_safety: 0.5,
            max_linear_iter: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSnapshot {
    pub t: f64,
    pub u: VectorField,
    pub phi: ScalarField,
    /// Zero-mean pressure.
    pub pi: ScalarField,
}

/// Snapshots `t_0..t_N` and the controls `v^0..v^{N-1}` that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Grid,
    pub dt: f64,
    pub snapshots: Vec<StateSnapshot>,
    pub controls: Vec<VectorField>,
    /// Hash of the configuration that produced the run (0 when unknown).
    pub config_hash: u64,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.snapshots.len().saturating_sub(1)
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn initial(&self) -> &StateSnapshot {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &StateSnapshot {
        self.snapshots.last().expect("trajectory has at least one snapshot")
    }

    /// Checks the structural invariants: `N + 1` snapshots, `N` controls,
    /// increasing times and matching grids.
    pub fn validate(&self) -> Result<()> {
        if self.snapshots.is_empty() {
            return Err(Error::Shape("trajectory without snapshots".into()));
        }
        if self.controls.len() != self.n_steps() {
            return Err(Error::Shape(format!(
                "{} snapshots need {} controls, found {}",
                self.snapshots.len(),
                self.n_steps(),
                self.controls.len()
            )));
        }
        for w in self.snapshots.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::InvalidArgument("snapshot times must increase".into()));
            }
        }
        for s in &self.snapshots {
            self.grid.check_same(s.u.grid())?;
            self.grid.check_same(s.phi.grid())?;
            self.grid.check_same(s.pi.grid())?;
        }
        for v in &self.controls {
            self.grid.check_same(v.grid())?;
        }
        Ok(())
    }
}

/// A failed run together with everything computed before the failure.
#[derive(Debug)]
pub struct SimulationFailure {
    pub error: Error,
    pub partial: Trajectory,
}

impl std::fmt::Display for SimulationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} completed steps)", self.error, self.partial.n_steps())
    }
}

impl std::error::Error for SimulationFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<SimulationFailure> for Error {
    fn from(f: SimulationFailure) -> Self {
        f.error
    }
}

/// Face coefficients of the phase-field step, frozen at `phi^n`.
#[derive(Debug, Clone)]
pub(crate) struct ChCoefficients {
    /// `lambda(phi)` averaged to interior faces.
    pub lambda_f: VectorField,
    /// `m(phi)` averaged to interior faces.
    pub mob_f: VectorField,
    /// `grad K * phi` at faces, zero on walls.
    pub j: VectorField,
}

/// Everything a time step needs that does not change between steps.
pub struct Stepper<'a> {
    pub grid: Grid,
    pub dk: &'a DiscreteKernel,
    pub laws: &'a dyn MaterialLaws,
    pub cfg: SolverConfig,
    pub(crate) poisson: NeumannPoisson,
}

impl<'a> Stepper<'a> {
    pub fn new(dk: &'a DiscreteKernel, laws: &'a dyn MaterialLaws, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = *dk.grid();
        Ok(Self {
            grid,
            dk,
            laws,
            cfg,
            poisson: NeumannPoisson::new(grid),
        })
    }

    pub(crate) fn ch_coefficients(&self, phi: &ScalarField) -> Result<ChCoefficients> {
        let laws = self.laws;
        let lambda_f = face_average(&phi.map(|s| laws.lambda_clamped(s)));
        let mob_f = face_average(&phi.map(|s| laws.mobility_clamped(s)));
        let j = self.dk.conv_grad(phi)?.with_zero_walls();
        Ok(ChCoefficients { lambda_f, mob_f, j })
    }

    /// `x - dt div(Lambda grad x)`.
    pub(crate) fn ch_operator(&self, lambda_f: &VectorField, x: &ScalarField) -> ScalarField {
        let mut flux = gradient(x);
        for (f, l) in flux.data_mut().iter_mut().zip(lambda_f.data()) {
            *f *= l;
        }
        let mut out = x.clone();
        out.axpy(-self.cfg.dt, &divergence(&flux));
        out
    }

    /// Solves `(I - dt div(Lambda grad)) x = b`.
    ///
    /// The exact solution has the same sum as `b`; the Krylov iterate is
    /// shifted by a constant to restore that, which is below the solver
    /// tolerance and keeps mass conservation at roundoff level.
    pub(crate) fn solve_ch(&self, lambda_f: &VectorField, b: &ScalarField) -> Result<ScalarField> {
        let g = self.grid;
        let dt = self.cfg.dt;
        let l = lambda_f.data();
        let mut inv_diag = vec![1.0; g.n_cells()];
        for j in 0..g.ny {
            for i in 0..g.nx {
                let mut d = 1.0;
                if i > 0 {
                    d += dt * l[g.xface(i, j)] / (g.hx * g.hx);
                }
                if i + 1 < g.nx {
                    d += dt * l[g.xface(i + 1, j)] / (g.hx * g.hx);
                }
                if j > 0 {
                    d += dt * l[g.yface(i, j)] / (g.hy * g.hy);
                }
                if j + 1 < g.ny {
                    d += dt * l[g.yface(i, j + 1)] / (g.hy * g.hy);
                }
                inv_diag[g.cell(i, j)] = 1.0 / d;
            }
        }
        let mut x = vec![0.0; g.n_cells()];
        conjugate_gradient(
            "phase-field diffusion",
            |v, out| {
                let f = ScalarField::from_values(g, v.to_vec()).expect("finite iterate");
                out.copy_from_slice(self.ch_operator(lambda_f, &f).values());
            },
            b.values(),
            0.0,
            &mut x,
            Some(&inv_diag),
            self.cfg.tol_linear,
            self.cfg.max_linear_iter,
        )?;
        let shift = (b.sum() - x.iter().sum::<f64>()) / g.n_cells() as f64;
        x.iter_mut().for_each(|v| *v += shift);
        ScalarField::from_values(g, x)
    }

    /// `phi^{n+1}` from `phi^n` advected by `u`.
    pub fn ch_step(&self, phi: &ScalarField, u: &VectorField) -> Result<ScalarField> {
        self.grid.check_same(phi.grid())?;
        self.grid.check_same(u.grid())?;
        let c = self.ch_coefficients(phi)?;
        let dt = self.cfg.dt;
        // dt * [ -A(u, phi) - div(M J) + div(Lambda grad phi) ]
        let mut flux = gradient(phi);
        for ((f, l), (m, j)) in flux
            .data_mut()
            .iter_mut()
            .zip(c.lambda_f.data())
            .zip(c.mob_f.data().iter().zip(c.j.data()))
        {
            *f = *f * l - m * j;
        }
        let mut b = divergence(&flux);
        b.axpy(-1.0, &scalar_advection(u, phi));
        b.scale(dt);
        let delta = self.solve_ch(&c.lambda_f, &b)?;
        let next = phi.add(&delta);
        if !next.is_finite() {
            return Err(Error::NonFinite("phase field after diffusion solve".into()));
        }
        let excess = bound_violation(&next);
        if excess > self.cfg.tol_bound {
            return Err(Error::BoundViolation { excess });
        }
        Ok(next)
    }

    /// `-avg(K * phi) grad phi + v` on interior faces.
    pub(crate) fn forcing(&self, phi: &ScalarField, v: &VectorField) -> Result<VectorField> {
        let kphi = face_average(&self.dk.conv_scalar(phi)?);
        let gphi = gradient(phi);
        let mut f = kphi.zip_map(&gphi, |k, g| -k * g);
        f.axpy(1.0, v);
        Ok(f.with_zero_walls())
    }

    /// `W x = x - dt V x` with frozen viscosity weights.
    pub(crate) fn stokes_operator(&self, w: &ViscosityWeights, x: &VectorField) -> VectorField {
        let mut out = x.clone();
        out.axpy(-self.cfg.dt, &stress_divergence(x, w));
        out
    }

    /// `(P W P)^+ P r`: the divergence-free solution of the implicit Stokes
    /// step. The map is symmetric, so it is also its own transpose.
    pub(crate) fn solve_stokes(&self, w: &ViscosityWeights, r: &VectorField) -> Result<VectorField> {
        let g = self.grid;
        let b = self.poisson.project(r);
        let mut x = vec![0.0; g.n_faces()];
        conjugate_gradient(
            "implicit Stokes",
            |v, out| {
                let f = VectorField::from_data(g, v.to_vec()).expect("finite iterate");
                let y = self.poisson.project(&self.stokes_operator(w, &self.poisson.project(&f)));
                out.copy_from_slice(y.data());
            },
            b.data(),
            r.norm() / g.cell_volume().sqrt(),
            &mut x,
            None,
            self.cfg.tol_linear,
            self.cfg.max_linear_iter,
        )?;
        Ok(self.poisson.project(&VectorField::from_data(g, x)?))
    }

    pub(crate) fn check_cfl(&self, u: &VectorField) -> Result<()> {
        let h = self.grid.hx.min(self.grid.hy);
        let courant = u.max_abs() * self.cfg.dt / h;
        if courant > self.cfg.cfl_safety {
            return Err(Error::Cfl {
                courant,
                limit: self.cfg.cfl_safety,
            });
        }
        Ok(())
    }

    /// `(u^{n+1}, pi^{n+1})` from `u^n`, the new phase field and `v^n`.
    pub fn ns_step(
        &self,
        u: &VectorField,
        phi_next: &ScalarField,
        v: &VectorField,
    ) -> Result<(VectorField, ScalarField)> {
        self.grid.check_same(u.grid())?;
        self.grid.check_same(phi_next.grid())?;
        self.grid.check_same(v.grid())?;
        self.check_cfl(u)?;
        let dt = self.cfg.dt;
        let mut r = u.clone();
        r.axpy(-dt, &velocity_advection(u, u));
        r.axpy(dt, &self.forcing(phi_next, v)?);
        r.zero_walls();
        let w = ViscosityWeights::new(phi_next, self.laws);
        let next = self.solve_stokes(&w, &r)?;
        let max_div = max_divergence(&next);
        if max_div > self.cfg.tol_poisson {
            return Err(Error::Divergence {
                max_div,
                limit: self.cfg.tol_poisson,
            });
        }
        // r - W u = dt grad pi
        let resid = r.sub(&self.stokes_operator(&w, &next));
        let mut rhs = divergence(&resid);
        rhs.remove_mean();
        let pi = self.poisson.solve_unchecked(&rhs).scaled(1.0 / dt);
        Ok((next, pi))
    }

    /// One full step: phase field with `u^n`, then velocity with `phi^{n+1}`.
    pub fn step(&self, u: &VectorField, phi: &ScalarField, v: &VectorField) -> Result<(VectorField, ScalarField, ScalarField)> {
        let phi_next = self.ch_step(phi, u)?;
        let (u_next, pi) = self.ns_step(u, &phi_next, v)?;
        Ok((u_next, phi_next, pi))
    }

    pub fn simulate(
        &self,
        u0: &VectorField,
        phi0: &ScalarField,
        controls: &[VectorField],
    ) -> std::result::Result<Trajectory, SimulationFailure> {
        let n = self.cfg.n_steps();
        let mut traj = Trajectory {
            grid: self.grid,
            dt: self.cfg.dt,
            snapshots: Vec::with_capacity(n + 1),
            controls: Vec::with_capacity(n),
            config_hash: 0,
        };
        let fail = |error: Error, traj: Trajectory| SimulationFailure { error, partial: traj };
        if let Err(e) = self.check_initial(u0, phi0, controls, n) {
            return Err(fail(e, traj));
        }
        traj.snapshots.push(StateSnapshot {
            t: 0.0,
            u: u0.clone(),
            phi: phi0.clone(),
            pi: ScalarField::zeros(self.grid),
        });
        for (k, v) in controls.iter().enumerate() {
            let prev = traj.last();
            match self.step(&prev.u, &prev.phi, v) {
                Ok((u, phi, pi)) => {
                    log::trace!("step {} mass {:.3e}", k + 1, mass(&phi));
                    traj.controls.push(v.clone());
                    traj.snapshots.push(StateSnapshot {
                        t: (k + 1) as f64 * self.cfg.dt,
                        u,
                        phi,
                        pi,
                    });
                }
                Err(e) => return Err(fail(e.at_step(k + 1), traj)),
            }
        }
        Ok(traj)
    }

    fn check_initial(&self, u0: &VectorField, phi0: &ScalarField, controls: &[VectorField], n: usize) -> Result<()> {
        self.grid.check_same(u0.grid())?;
        self.grid.check_same(phi0.grid())?;
        if controls.len() != n {
            return Err(Error::Shape(format!("{n} steps need {n} controls, found {}", controls.len())));
        }
        for v in controls {
            self.grid.check_same(v.grid())?;
        }
        let excess = bound_violation(phi0);
        if excess > 0.0 {
            return Err(Error::BoundViolation { excess });
        }
        if !u0.is_no_slip() {
            return Err(Error::InvalidArgument("initial velocity must vanish on the walls".into()));
        }
        let max_div = max_divergence(u0);
        if max_div > self.cfg.tol_div {
            return Err(Error::Divergence {
                max_div,
                limit: self.cfg.tol_div,
            });
        }
        Ok(())
    }
}

/// Single phase-field step; see [`Stepper::ch_step`].
pub fn ch_step(
    phi: &ScalarField,
    u: &VectorField,
    dk: &DiscreteKernel,
    laws: &dyn MaterialLaws,
    cfg: SolverConfig,
) -> Result<ScalarField> {
    Stepper::new(dk, laws, cfg)?.ch_step(phi, u)
}

/// Single momentum step; see [`Stepper::ns_step`].
pub fn ns_step(
    u: &VectorField,
    phi_next: &ScalarField,
    v: &VectorField,
    dk: &DiscreteKernel,
    laws: &dyn MaterialLaws,
    cfg: SolverConfig,
) -> Result<(VectorField, ScalarField)> {
    Stepper::new(dk, laws, cfg)?.ns_step(u, phi_next, v)
}

/// Runs `cfg.n_steps()` steps driven by `controls[n]` on `[t_n, t_{n+1}]`.
pub fn simulate(
    u0: &VectorField,
    phi0: &ScalarField,
    controls: &[VectorField],
    dk: &DiscreteKernel,
    laws: &dyn MaterialLaws,
    cfg: SolverConfig,
) -> std::result::Result<Trajectory, SimulationFailure> {
    let stepper = match Stepper::new(dk, laws, cfg) {
        Ok(s) => s,
        Err(error) => {
            return Err(SimulationFailure {
                error,
                partial: Trajectory {
                    grid: *dk.grid(),
                    dt: cfg.dt,
                    snapshots: Vec::new(),
                    controls: Vec::new(),
                    config_hash: 0,
                },
            })
        }
    };
    stepper.simulate(u0, phi0, controls)
}

/// Cell average of `phi`.
pub fn mass(phi: &ScalarField) -> f64 {
    phi.mean()
}

/// `max|phi| - 1`, clipped below at zero.
pub fn bound_violation(phi: &ScalarField) -> f64 {
    (phi.max_abs() - 1.0).max(0.0)
}

/// Terms of the energy balance at one snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyTerms {
    pub t: f64,
    /// `|u|^2 / 2`
    pub kinetic: f64,
    /// `|phi|^2 / 2`
    pub phase: f64,
    /// Time derivative of `kinetic + phase`.
    pub d_energy: f64,
    /// `int lambda(phi) |grad phi|^2`
    pub diffusion: f64,
    /// `2 |sqrt(nu) D u|^2`
    pub viscous: f64,
    /// `int m (grad K * phi) . grad phi`
    pub nonlocal_work: f64,
    /// `-int (K * phi) u . grad phi`
    pub korteweg_work: f64,
    /// `<v, u>`
    pub control_work: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub terms: Vec<EnergyTerms>,
    /// `sum_n w_n dt |residual_n|` with trapezoidal weights.
    pub residual_l1: f64,
}

/// Evaluates both sides of the energy balance along a trajectory.
pub fn energy_report(traj: &Trajectory, dk: &DiscreteKernel, laws: &dyn MaterialLaws) -> Result<EnergyReport> {
    traj.validate()?;
    let g = traj.grid;
    dk.grid().check_same(&g)?;
    let n = traj.n_steps();
    let dt = traj.dt;
    let mut terms: Vec<EnergyTerms> = Vec::with_capacity(n + 1);
    for (k, s) in traj.snapshots.iter().enumerate() {
        let lambda_f = face_average(&s.phi.map(|x| laws.lambda_clamped(x)));
        let mob_f = face_average(&s.phi.map(|x| laws.mobility_clamped(x)));
        let gphi = gradient(&s.phi);
        let j = dk.conv_grad(&s.phi)?.with_zero_walls();
        let kphi = face_average(&dk.conv_scalar(&s.phi)?);
        let vol = g.cell_volume();
        let mut diffusion = 0.0;
        let mut nonlocal_work = 0.0;
        let mut korteweg_work = 0.0;
        for f in 0..g.n_faces() {
            let gp = gphi.data()[f];
            diffusion += lambda_f.data()[f] * gp * gp;
            nonlocal_work += mob_f.data()[f] * j.data()[f] * gp;
            korteweg_work -= kphi.data()[f] * gp * s.u.data()[f];
        }
        let w = ViscosityWeights::new(&s.phi, laws);
        let viscous = 2.0 * strain(&s.u).weighted_square(&g, &w.cell, &w.node);
        let control_work = if n == 0 {
            0.0
        } else {
            let before = k.checked_sub(1).map(|p| &traj.controls[p]);
            let after = traj.controls.get(k);
            let vbar = match (before, after) {
                (Some(a), Some(b)) => a.add(b).scaled(0.5),
                (Some(a), None) => a.clone(),
                (None, Some(b)) => b.clone(),
                (None, None) => unreachable!(),
            };
            vbar.dot(&s.u)
        };
        let u2 = s.u.dot(&s.u);
        terms.push(EnergyTerms {
            t: s.t,
            kinetic: 0.5 * u2,
            phase: 0.5 * s.phi.dot(&s.phi),
            d_energy: 0.0,
            diffusion: diffusion * vol,
            viscous,
            nonlocal_work: nonlocal_work * vol,
            korteweg_work: korteweg_work * vol,
            control_work,
            residual: 0.0,
        });
    }
    let energy: Vec<f64> = terms.iter().map(|t| t.kinetic + t.phase).collect();
    let mut residual_l1 = 0.0;
    for k in 0..=n {
        let d = if n == 0 {
            0.0
        } else if k == 0 {
            (energy[1] - energy[0]) / dt
        } else if k == n {
            (energy[n] - energy[n - 1]) / dt
        } else {
            (energy[k + 1] - energy[k - 1]) / (2.0 * dt)
        };
        let t = &mut terms[k];
        t.d_energy = d;
        t.residual = d + t.diffusion + t.viscous - t.nonlocal_work - t.korteweg_work - t.control_work;
        let weight = if k == 0 || k == n { 0.5 } else { 1.0 };
        residual_l1 += weight * dt * t.residual.abs();
    }
    Ok(EnergyReport { terms, residual_l1 })
}
