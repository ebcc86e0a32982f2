//! Turns a [`RunConfig`] into solver objects.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forward::{SimulationFailure, SolverConfig, Stepper, Trajectory};
use crate::geometry::{Grid, NeumannPoisson, ScalarField, VectorField};
use crate::material::{self, ConstantMobilityQuartic, LogDegenerate, MaterialLaws, ValidationOptions};
use crate::nonlocal::DiscreteKernel;
use crate::optimize::{BoxBounds, ControlField, ControlProblem, CostWeights};

use super::config::{ControlSpec, InitialSpec, LawSpec, OptimizeSpec, RunConfig, TargetSpec};
use super::io::{load_controls, load_trajectory};

/// Grid, kernel, laws and initial state of one run.
pub struct Setup {
    pub grid: Grid,
    pub dk: DiscreteKernel,
    pub laws: Box<dyn MaterialLaws>,
    pub cfg: SolverConfig,
    pub u0: VectorField,
    pub phi0: ScalarField,
    pub config_hash: u64,
}

pub fn build_laws(spec: &LawSpec) -> Result<Box<dyn MaterialLaws>> {
    let laws: Box<dyn MaterialLaws> = match spec.name.as_str() {
        "log-degenerate" => Box::new(LogDegenerate::new(spec.viscosity)),
        "constant-mobility-quartic" => Box::new(ConstantMobilityQuartic::new(spec.convexity, spec.viscosity)),
        other => return Err(Error::Config(vec![format!("unknown law {other:?}")])),
    };
    if !spec.override_validation {
        let report = material::validate(laws.as_ref(), ValidationOptions::default());
        let failed: Vec<String> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("law {} fails {}: {} (worst at s = {})", report.law_name, c.name, c.description, c.worst_sample))
            .collect();
        if !failed.is_empty() {
            let mut errs = failed;
            errs.push("set material.override_validation = true to run anyway".into());
            return Err(Error::Config(errs));
        }
    }
    Ok(laws)
}

/// Initial velocity and phase field for a preset.
pub fn initial_state(spec: &InitialSpec, grid: Grid) -> Result<(VectorField, ScalarField)> {
    match spec {
        &InitialSpec::Stripe {
            amplitude,
            width,
            wave,
            phase,
        } => {
            let phi = ScalarField::from_fn(grid, |x, y| {
                let c = 0.5 * grid.ly + wave * (2.0 * std::f64::consts::PI * x / grid.lx + phase).cos();
                amplitude * ((y - c) / width).tanh()
            });
            Ok((VectorField::zeros(grid), phi))
        }
        &InitialSpec::PurePhase { value } => Ok((VectorField::zeros(grid), ScalarField::constant(grid, value))),
        &InitialSpec::RandomSeeded {
            seed,
            mean,
            noise,
            velocity,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi: Vec<f64> = (0..grid.n_cells())
                .map(|_| (mean + noise * rng.gen_range(-1.0..1.0)).clamp(-1.0, 1.0))
                .collect();
            let raw: Vec<f64> = (0..grid.n_faces()).map(|_| velocity * rng.gen_range(-1.0..1.0)).collect();
            let u = NeumannPoisson::new(grid).project(&VectorField::from_data(grid, raw)?);
            Ok((u, ScalarField::from_values(grid, phi)?))
        }
        InitialSpec::File { path } => {
            let t = load_trajectory(path)?;
            t.grid.check_same(&grid)?;
            let s = t.last();
            Ok((s.u.clone(), s.phi.clone()))
        }
    }
}

impl Setup {
    pub fn new(rc: &RunConfig) -> Result<Self> {
        let g = rc.grid;
        let grid = Grid::new(g.nx, g.ny, g.lx, g.ly)?;
        let dk = DiscreteKernel::build(rc.kernel, grid)?;
        let laws = build_laws(&rc.law)?;
        let (u0, phi0) = initial_state(&rc.initial, grid)?;
        let mut h = DefaultHasher::new();
        format!("{:?}", (&rc.grid, &rc.solver, &rc.kernel, &rc.law, &rc.initial, &rc.control)).hash(&mut h);
        Ok(Self {
            grid,
            dk,
            laws,
            cfg: rc.solver,
            u0,
            phi0,
            config_hash: h.finish(),
        })
    }

    pub fn stepper(&self) -> Result<Stepper<'_>> {
        Stepper::new(&self.dk, self.laws.as_ref(), self.cfg)
    }

    pub fn simulate(&self, controls: &[VectorField]) -> std::result::Result<Trajectory, SimulationFailure> {
        self.simulate_from(&self.u0, &self.phi0, controls)
    }

    fn simulate_from(
        &self,
        u0: &VectorField,
        phi0: &ScalarField,
        controls: &[VectorField],
    ) -> std::result::Result<Trajectory, SimulationFailure> {
        let stepper = self.stepper().map_err(|error| SimulationFailure {
            error,
            partial: Trajectory {
                grid: self.grid,
                dt: self.cfg.dt,
                snapshots: Vec::new(),
                controls: Vec::new(),
                config_hash: self.config_hash,
            },
        })?;
        let tag = |mut t: Trajectory| {
            t.config_hash = self.config_hash;
            t
        };
        stepper
            .simulate(u0, phi0, controls)
            .map(tag)
            .map_err(|f| SimulationFailure {
                error: f.error,
                partial: tag(f.partial),
            })
    }

    fn bounds(spec: Option<&OptimizeSpec>) -> BoxBounds {
        match spec {
            Some(o) => BoxBounds::constant(o.lower, o.upper),
            None => BoxBounds::unbounded(),
        }
    }

    fn control_from_file(&self, path: &std::path::Path, bounds: BoxBounds) -> Result<ControlField> {
        let c = load_controls(path)?;
        c.grid.check_same(&self.grid)?;
        if (c.dt - self.cfg.dt).abs() > 1e-14 * self.cfg.dt {
            return Err(Error::Config(vec![format!(
                "control file {} has dt {}, the run uses {}",
                path.display(),
                c.dt,
                self.cfg.dt
            )]));
        }
        ControlField::new(self.grid, self.cfg.dt, c.values, bounds)
    }

    /// The control the run starts from: zero, the control file, or the
    /// optimizer's starting point.
    pub fn initial_control(&self, rc: &RunConfig) -> Result<ControlField> {
        let n = self.cfg.n_steps();
        let (path, bounds) = match &rc.control {
            ControlSpec::Zero => (None, Self::bounds(None)),
            ControlSpec::File(p) => (Some(p), Self::bounds(None)),
            ControlSpec::Optimize(o) => (o.start.as_ref(), Self::bounds(Some(o))),
        };
        let v = match path {
            Some(p) => self.control_from_file(p, bounds)?,
            None => ControlField::zeros(self.grid, self.cfg.dt, n).with_bounds(bounds)?,
        };
        if v.n_steps() != n {
            return Err(Error::Config(vec![format!("control has {} steps, the run has {n}", v.n_steps())]));
        }
        Ok(v)
    }

    /// Cost weights with targets resolved.
    pub fn weights(&self, spec: &OptimizeSpec) -> Result<CostWeights> {
        let n = self.cfg.n_steps();
        match &spec.targets {
            TargetSpec::Zero => Ok(CostWeights::zero_targets(self.grid, n, spec.beta, spec.gamma)),
            TargetSpec::Reference(init) => {
                let (u, phi) = initial_state(init, self.grid)?;
                let reference = self.simulate_from(&u, &phi, &vec![VectorField::zeros(self.grid); n])?;
                Ok(CostWeights::track(&reference, spec.beta, spec.gamma))
            }
            TargetSpec::File(p) => {
                let reference = load_trajectory(p)?;
                reference.grid.check_same(&self.grid)?;
                if reference.n_steps() != n {
                    return Err(Error::Config(vec![format!(
                        "target file {} has {} steps, the run has {n}",
                        p.display(),
                        reference.n_steps()
                    )]));
                }
                Ok(CostWeights::track(&reference, spec.beta, spec.gamma))
            }
        }
    }

    pub fn problem<'a>(&'a self, weights: &'a CostWeights) -> ControlProblem<'a> {
        ControlProblem {
            dk: &self.dk,
            laws: self.laws.as_ref(),
            cfg: self.cfg,
            u0: &self.u0,
            phi0: &self.phi0,
            weights,
        }
    }

    /// Reproducible random control with entries in `[-scale, scale]`.
    pub fn random_control(&self, seed: u64, scale: f64) -> Result<ControlField> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..self.cfg.n_steps())
            .map(|_| {
                VectorField::from_data(
                    self.grid,
                    (0..self.grid.n_faces()).map(|_| scale * rng.gen_range(-1.0..1.0)).collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        ControlField::new(self.grid, self.cfg.dt, values, BoxBounds::unbounded())
    }
}
