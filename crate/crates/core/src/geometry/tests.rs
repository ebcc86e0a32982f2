use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use super::ops::{node_average, node_average_transpose};
use crate::material::{LinearViscosity, LogDegenerate};

fn grid(nx: usize, ny: usize) -> Grid {
    Grid::new(nx, ny, 1.3, 0.9).unwrap()
}

fn rand_scalar(g: Grid, rng: &mut impl Rng) -> ScalarField {
    ScalarField::from_values(g, (0..g.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn rand_vector(g: Grid, rng: &mut impl Rng) -> VectorField {
    VectorField::from_data(g, (0..g.n_faces()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn rand_div_free(g: Grid, rng: &mut impl Rng) -> VectorField {
    NeumannPoisson::new(g).project(&rand_vector(g, rng))
}

fn rel(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(f64::MIN_POSITIVE)
}

#[test]
fn zero_inputs_give_zero() {
    let g = grid(6, 5);
    assert_eq!(divergence(&VectorField::zeros(g)).max_abs(), 0.0);
    assert_eq!(gradient(&ScalarField::constant(g, 0.7)).max_abs(), 0.0);
    assert_eq!(laplacian_neumann(&ScalarField::constant(g, -2.0)).max_abs(), 0.0);
    assert_eq!(poisson_pressure(&ScalarField::zeros(g)).unwrap().max_abs(), 0.0);
}

#[test]
fn divergence_of_linear_field_matches_stencil() {
    let g = grid(7, 5);
    let w = VectorField::from_fn(g, |x, _| x, |_, _| 0.0).with_zero_walls();
    let d = divergence(&w);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let east = if i + 1 == g.nx { 0.0 } else { g.xface_center(i + 1, j).0 };
            let west = if i == 0 { 0.0 } else { g.xface_center(i, j).0 };
            let expected = (east - west) / g.hx;
            assert!((d.at(i, j) - expected).abs() < 1e-12);
            if i > 0 && i + 1 < g.nx {
                assert!((d.at(i, j) - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn gradient_exact_on_linears() {
    let g = grid(6, 6);
    let phi = ScalarField::from_fn(g, |x, y| 3.0 * x - 0.5 * y);
    let w = gradient(&phi);
    for j in 0..g.ny {
        for i in 1..g.nx {
            assert!((w.data()[g.xface(i, j)] - 3.0).abs() < 1e-12);
        }
        assert_eq!(w.data()[g.xface(0, j)], 0.0);
    }
}

#[test]
fn summation_by_parts() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = grid(9, 7);
    for _ in 0..20 {
        let phi = rand_scalar(g, &mut rng);
        let w = rand_vector(g, &mut rng).with_zero_walls();
        let a = gradient(&phi).dot(&w);
        let b = phi.dot(&divergence(&w));
        assert!(rel(a, -b, phi.norm() * w.norm()) < 1e-12);
    }
}

#[test]
fn laplacian_is_div_grad_and_sums_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = grid(8, 6);
    let phi = rand_scalar(g, &mut rng);
    let lap = laplacian_neumann(&phi);
    assert_eq!(lap.values(), divergence(&gradient(&phi)).values());
    assert!(lap.sum().abs() < 1e-12 * lap.max_abs() * g.n_cells() as f64);
}

#[test]
fn advection_kills_constants_and_is_skew() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = grid(10, 8);
    for _ in 0..10 {
        let u = rand_div_free(g, &mut rng);
        let c = advect_scalar(&u, &ScalarField::constant(g, 0.4), 1e-10).unwrap();
        assert!(c.max_abs() < 1e-12);
        let phi = rand_scalar(g, &mut rng);
        let a = advect_scalar(&u, &phi, 1e-10).unwrap();
        assert!(a.dot(&phi).abs() < 1e-10 * a.norm() * phi.norm());
        let cu = advect_velocity(&u, 1e-10).unwrap();
        assert!(cu.dot(&u).abs() < 1e-10 * cu.norm() * u.norm());
    }
}

#[test]
fn advection_rejects_divergent_velocity() {
    let g = grid(6, 6);
    let u = VectorField::from_fn(g, |x, _| x, |_, _| 0.0).with_zero_walls();
    let phi = ScalarField::constant(g, 1.0);
    assert!(matches!(advect_scalar(&u, &phi, 1e-10), Err(crate::Error::Divergence { .. })));
    assert!(advect_velocity(&u, 1e-10).is_err());
}

#[test]
fn constant_interior_velocity_has_no_interior_advection() {
    // Uniform flow is only divergence free away from the walls, so evaluate
    // the bilinear form directly and check faces whose stencils stay inside.
    let g = grid(10, 10);
    let u = VectorField::uniform(g, 0.3, -0.2).with_zero_walls();
    let c = velocity_advection(&u, &u);
    for j in 2..g.ny - 2 {
        for i in 2..g.nx - 1 {
            assert!(c.data()[g.xface(i, j)].abs() < 1e-12);
        }
    }
    for j in 2..g.ny - 1 {
        for i in 2..g.nx - 2 {
            assert!(c.data()[g.yface(i, j)].abs() < 1e-12);
        }
    }
}

#[test]
fn transposes_match_forward_operators() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = grid(7, 9);
    for _ in 0..5 {
        let (phi, s) = (rand_scalar(g, &mut rng), rand_scalar(g, &mut rng));
        let (u, w, r) = (rand_vector(g, &mut rng), rand_vector(g, &mut rng), rand_vector(g, &mut rng));
        let tol = 1e-12;

        let lhs = gradient(&phi).dot(&w);
        let rhs = phi.dot(&gradient_transpose(&w));
        assert!(rel(lhs, rhs, phi.norm() * w.norm()) < tol);

        let lhs = face_average(&phi).dot(&w);
        let rhs = phi.dot(&face_average_transpose(&w));
        assert!(rel(lhs, rhs, phi.norm() * w.norm()) < tol);

        let nodes: Vec<f64> = (0..g.n_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs = crate::linalg::dot(&node_average(&g, phi.values()), &nodes);
        let rhs = crate::linalg::dot(phi.values(), &node_average_transpose(&g, &nodes));
        assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));

        let lhs = scalar_advection(&u, &phi).dot(&s);
        let rhs = phi.dot(&scalar_advection_t_phi(&u, &s));
        assert!(rel(lhs, rhs, u.norm() * phi.norm() * s.norm()) < tol);
        let rhs = u.dot(&scalar_advection_t_u(&phi, &s));
        assert!(rel(lhs, rhs, u.norm() * phi.norm() * s.norm()) < tol);

        let lhs = velocity_advection(&u, &w).dot(&r);
        let rhs = w.dot(&velocity_advection_t_b(&u, &r));
        assert!(rel(lhs, rhs, u.norm() * w.norm() * r.norm()) < tol);
        let rhs = u.dot(&velocity_advection_t_a(&w, &r));
        assert!(rel(lhs, rhs, u.norm() * w.norm() * r.norm()) < tol);

        let e = strain(&u);
        let t = strain(&w);
        // <E u, E w> with the D:D quadrature equals <u, E^T W E w>.
        let lhs = {
            let c: f64 = (0..g.n_cells()).map(|k| e.d11[k] * t.d11[k] + e.d22[k] * t.d22[k]).sum();
            let n: f64 = e.d12.iter().zip(&t.d12).map(|(a, b)| a * b).sum();
            g.cell_volume() * (c + n)
        };
        let rhs = u.dot(&strain_transpose(&g, &t));
        assert!(rel(lhs, rhs, 1.0 + lhs.abs()) < 1e-11);
    }
}

#[test]
fn stress_divergence_phi_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = grid(6, 7);
    let laws = LogDegenerate::new(LinearViscosity { minus: 0.5, plus: 2.0 });
    let phi = rand_scalar(g, &mut rng).scaled(0.9);
    let eta = rand_scalar(g, &mut rng);
    let u = rand_vector(g, &mut rng).with_zero_walls();
    let r = rand_vector(g, &mut rng).with_zero_walls();
    let lhs = stress_divergence(&u, &ViscosityWeights::derivative(&phi, &eta, &laws)).dot(&r);
    let rhs = eta.dot(&stress_divergence_t_phi(&phi, &u, &r, &laws));
    assert!(rel(lhs, rhs, 1.0 + lhs.abs()) < 1e-11);
}

/// Five-point vector Laplacian with reflected ghosts (`u_ghost = -u`) for
/// the tangential component next to a wall.
fn vector_laplacian(u: &VectorField) -> VectorField {
    let g = *u.grid();
    let d = u.data();
    let mut out = VectorField::zeros(g);
    let o = out.data_mut();
    for j in 0..g.ny {
        for i in 1..g.nx {
            let c = d[g.xface(i, j)];
            let xx = (d[g.xface(i + 1, j)] - 2.0 * c + d[g.xface(i - 1, j)]) / (g.hx * g.hx);
            let s = if j == 0 { -c } else { d[g.xface(i, j - 1)] };
            let n = if j + 1 == g.ny { -c } else { d[g.xface(i, j + 1)] };
            o[g.xface(i, j)] = xx + (n - 2.0 * c + s) / (g.hy * g.hy);
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            let c = d[g.yface(i, j)];
            let yy = (d[g.yface(i, j + 1)] - 2.0 * c + d[g.yface(i, j - 1)]) / (g.hy * g.hy);
            let w = if i == 0 { -c } else { d[g.yface(i - 1, j)] };
            let e = if i + 1 == g.nx { -c } else { d[g.yface(i + 1, j)] };
            o[g.yface(i, j)] = yy + (e - 2.0 * c + w) / (g.hx * g.hx);
        }
    }
    out
}

#[test]
fn constant_viscosity_is_vector_laplacian() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = grid(9, 8);
    let nu = 0.37;
    let laws = LogDegenerate::new(LinearViscosity::constant(nu));
    let phi = rand_scalar(g, &mut rng).scaled(0.8);
    assert_eq!(viscous_term(&phi, &VectorField::zeros(g), &laws).max_abs(), 0.0);
    let u = rand_div_free(g, &mut rng);
    let v = viscous_term(&phi, &u, &laws);
    let l = vector_laplacian(&u).scaled(nu);
    let scale = l.max_abs();
    for (a, b) in v.data().iter().zip(l.data()) {
        assert!((a - b).abs() < 1e-12 * scale, "{a} vs {b}");
    }
}

#[test]
fn viscous_quadratic_form_is_dissipative() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = grid(8, 8);
    let laws = LogDegenerate::new(LinearViscosity { minus: 0.2, plus: 3.0 });
    for _ in 0..10 {
        let phi = rand_scalar(g, &mut rng);
        let u = rand_vector(g, &mut rng).with_zero_walls();
        let q = viscous_term(&phi, &u, &laws).dot(&u);
        let w = ViscosityWeights::new(&phi, &laws);
        let bound = strain(&u).weighted_square(&g, &vec![0.2; g.n_cells()], &vec![0.2; g.n_nodes()]);
        let exact = strain(&u).weighted_square(&g, &w.cell, &w.node);
        assert!((q + 2.0 * exact).abs() < 1e-10 * exact);
        assert!(q <= -2.0 * bound * (1.0 - 1e-12));
    }
}

#[test]
fn poisson_round_trip_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = grid(11, 7);
    let solver = NeumannPoisson::new(g);
    let mut phi0 = rand_scalar(g, &mut rng);
    phi0.remove_mean();
    let back = poisson_pressure(&laplacian_neumann(&phi0)).unwrap();
    assert!(back.sub(&phi0).max_abs() < 1e-10);
    assert!(back.mean().abs() < 1e-14);

    let mut a = rand_scalar(g, &mut rng);
    let mut b = rand_scalar(g, &mut rng);
    a.remove_mean();
    b.remove_mean();
    let lhs = solver.solve(&a).unwrap().dot(&b);
    let rhs = a.dot(&solver.solve(&b).unwrap());
    assert!(rel(lhs, rhs, lhs.abs()) < 1e-12);

    let bad = ScalarField::constant(g, 1.0);
    assert!(matches!(poisson_pressure(&bad), Err(crate::Error::IncompatibleRhs { .. })));
}

#[test]
fn projection_is_divergence_free_symmetric_and_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = grid(8, 10);
    let p = NeumannPoisson::new(g);
    let a = rand_vector(g, &mut rng).with_zero_walls();
    let b = rand_vector(g, &mut rng).with_zero_walls();
    let pa = p.project(&a);
    assert!(max_divergence(&pa) < 1e-12);
    assert!(pa.is_no_slip());
    assert!(p.project(&pa).sub(&pa).max_abs() < 1e-13);
    let lhs = pa.dot(&b);
    let rhs = a.dot(&p.project(&b));
    assert!(rel(lhs, rhs, a.norm() * b.norm()) < 1e-12);
    let phi = rand_scalar(g, &mut rng);
    assert!(p.project(&gradient(&phi)).max_abs() < 1e-12);
}

#[test]
fn mismatched_grids_are_rejected() {
    let a = Grid::new(4, 4, 1.0, 1.0).unwrap();
    let b = Grid::new(5, 4, 1.0, 1.0).unwrap();
    assert!(advect_scalar(&VectorField::zeros(a), &ScalarField::zeros(b), 1e-10).is_err());
    assert!(Grid::new(3, 8, 1.0, 1.0).is_err());
    assert!(Grid::new(8, 8, 0.0, 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn prop_summation_by_parts(nx in 4usize..12, ny in 4usize..12, seed in any::<u64>()) {
        let g = Grid::new(nx, ny, 1.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = rand_scalar(g, &mut rng);
        let w = rand_vector(g, &mut rng).with_zero_walls();
        let defect = gradient(&phi).dot(&w) + phi.dot(&divergence(&w));
        prop_assert!(defect.abs() <= 1e-12 * phi.norm() * w.norm());
    }

    #[test]
    fn prop_scalar_advection_skew(nx in 4usize..12, ny in 4usize..12, seed in any::<u64>()) {
        let g = Grid::new(nx, ny, 1.5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = rand_div_free(g, &mut rng);
        let phi = rand_scalar(g, &mut rng);
        let a = advect_scalar(&u, &phi, 1e-10).unwrap();
        prop_assert!(a.dot(&phi).abs() <= 1e-10 * a.norm().max(1e-300) * phi.norm());
    }

    #[test]
    fn prop_laplacian_telescopes(nx in 4usize..12, ny in 4usize..12, seed in any::<u64>()) {
        let g = Grid::new(nx, ny, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lap = laplacian_neumann(&rand_scalar(g, &mut rng));
        prop_assert!(lap.sum().abs() <= 1e-12 * lap.max_abs() * g.n_cells() as f64);
    }
}
