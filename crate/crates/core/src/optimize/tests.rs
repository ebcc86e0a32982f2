use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{Grid, NeumannPoisson};
use crate::material::{LinearViscosity, LogDegenerate};
use crate::nonlocal::Kernel;

fn stripe(g: Grid) -> ScalarField {
    ScalarField::from_fn(g, |x, y| {
        0.9 * ((y - 0.5 * g.ly - 0.08 * (2.0 * std::f64::consts::PI * x / g.lx).cos()) / 0.08).tanh()
    })
}

fn random_face(g: Grid, rng: &mut ChaCha8Rng, scale: f64) -> VectorField {
    VectorField::from_data(g, (0..g.n_faces()).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

struct Fixture {
    g: Grid,
    dk: DiscreteKernel,
    laws: LogDegenerate,
    cfg: SolverConfig,
    u0: VectorField,
    phi0: ScalarField,
}

fn fixture(n: usize, steps: usize) -> Fixture {
    let g = Grid::unit_square(n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    Fixture {
        g,
        dk: DiscreteKernel::build(Kernel::gaussian(0.1, 1.0), g).unwrap(),
        laws: LogDegenerate::new(LinearViscosity { minus: 0.5, plus: 1.0 }),
        cfg: SolverConfig::with_steps(1e-2, steps).unwrap(),
        u0: NeumannPoisson::new(g).project(&random_face(g, &mut rng, 0.3)),
        phi0: stripe(g),
    }
}

impl Fixture {
    fn problem<'a>(&'a self, w: &'a CostWeights) -> ControlProblem<'a> {
        ControlProblem {
            dk: &self.dk,
            laws: &self.laws,
            cfg: self.cfg,
            u0: &self.u0,
            phi0: &self.phi0,
            weights: w,
        }
    }

    fn random_control(&self, seed: u64, scale: f64) -> ControlField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.cfg.n_steps();
        ControlField::new(
            self.g,
            self.cfg.dt,
            (0..n).map(|_| random_face(self.g, &mut rng, scale)).collect(),
            BoxBounds::unbounded(),
        )
        .unwrap()
    }
}

#[test]
fn gradient_without_tracking_is_gamma_v() {
    let f = fixture(8, 3);
    let w = CostWeights::zero_targets(f.g, 3, [0.0; 4], 0.7);
    let v = f.random_control(2, 1.0);
    let e = f.problem(&w).reduced_gradient(&v).unwrap();
    assert_eq!(e.gradient, v.scaled(0.7));
}

#[test]
fn fd_is_exact_for_pure_control_cost() {
    let f = fixture(8, 3);
    let w = CostWeights::zero_targets(f.g, 3, [0.0; 4], 2.0);
    let v = f.random_control(3, 1.0);
    let h = f.random_control(4, 1.0);
    let fd = f.problem(&w).fd_gradient(&v, std::slice::from_ref(&h), 1e-3).unwrap();
    let exact = 2.0 * v.dot(&h).unwrap();
    assert!((fd[0] - exact).abs() <= 1e-10 * exact.abs());
}

#[test]
fn adjoint_gradient_matches_central_differences() {
    let f = fixture(8, 5);
    let mut w = CostWeights::zero_targets(f.g, 5, [0.0, 1.0, 0.0, 1.0], 1e-2);
    w.phi_omega = ScalarField::from_fn(f.g, |_, y| (2.0 * y - 1.0) * 0.5);
    let p = f.problem(&w);
    let v = f.random_control(5, 1.0);
    let dirs: Vec<_> = (0..5).map(|s| f.random_control(100 + s, 1.0)).collect();
    let g = p.reduced_gradient(&v).unwrap().gradient;
    let fd = p.fd_gradient(&v, &dirs, 1e-5).unwrap();
    for (h, d) in dirs.iter().zip(&fd) {
        let a = g.dot(h).unwrap();
        let rel = (a - d).abs() / a.abs().max(d.abs());
        assert!(rel <= 1e-6, "adjoint {a:e} fd {d:e} rel {rel:e}");
    }
}

#[test]
fn descent_returns_immediately_at_a_stationary_point() {
    let f = fixture(8, 2);
    let w = CostWeights::zero_targets(f.g, 2, [0.0; 4], 1.0);
    let v0 = ControlField::zeros(f.g, f.cfg.dt, 2);
    let r = projected_gradient_descent(&f.problem(&w), &v0, &OptimizerConfig::default()).unwrap();
    assert_eq!(r.status, Status::Converged);
    assert_eq!(r.iterations(), 0);
}

#[test]
fn descent_decreases_monotonically_and_respects_box() {
    let f = fixture(8, 3);
    let mut w = CostWeights::zero_targets(f.g, 3, [0.0, 1.0, 0.0, 1.0], 1e-2);
    w.phi_omega = f.phi0.map(|s| -s);
    w.phi_q = vec![w.phi_omega.clone(); 4];
    let v0 = ControlField::zeros(f.g, f.cfg.dt, 3).with_bounds(BoxBounds::constant(-0.5, 0.5)).unwrap();
    let opt = OptimizerConfig {
        max_iter: 5,
        initial_step: 10.0,
        ..OptimizerConfig::default()
    };
    let r = projected_gradient_descent(&f.problem(&w), &v0, &opt).unwrap();
    assert!(r.iterations() > 0);
    for pair in r.history.windows(2) {
        assert!(pair[1].cost.total < pair[0].cost.total);
    }
    assert!(r.control.is_admissible());
}

#[test]
fn optimizer_config_is_validated() {
    let bad = OptimizerConfig {
        sigma: 1.0,
        backtrack: 0.0,
        ..OptimizerConfig::default()
    };
    match bad.validate() {
        Err(Error::Config(errs)) => assert_eq!(errs.len(), 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn inactive_stationarity_skips_active_samples() {
    let g = Grid::unit_square(4).unwrap();
    let mut v = ControlField::zeros(g, 0.1, 1).with_bounds(BoxBounds::constant(-1.0, 1.0)).unwrap();
    v.values_mut()[0].data_mut()[3] = 1.0;
    let mut grad = ControlField::zeros(g, 0.1, 1);
    grad.values_mut()[0].data_mut()[3] = -5.0;
    grad.values_mut()[0].data_mut()[4] = 0.25;
    assert_eq!(inactive_stationarity(&v, &grad, 1.0, 1e-12), 0.25);
    assert_eq!(inactive_stationarity(&v, &grad, 0.0, 1e-12), 0.0);
}
