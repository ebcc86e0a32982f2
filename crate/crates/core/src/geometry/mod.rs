//! Staggered grid, discrete fields and the differential operators acting on
//! them.

mod advection;
mod grid;
mod ops;
mod poisson;
mod viscous;

pub use advection::{advect_scalar, advect_velocity};
pub use grid::{Grid, ScalarField, VectorField};
pub use ops::{divergence, gradient, laplacian_neumann, max_divergence};
pub use poisson::{poisson_pressure, NeumannPoisson};
pub use viscous::{strain, strain_transpose, viscous_term, Strain, ViscosityWeights};

pub(crate) use advection::{
    scalar_advection, scalar_advection_t_phi, scalar_advection_t_u, velocity_advection,
    velocity_advection_t_a, velocity_advection_t_b,
};
pub(crate) use ops::{
    face_average, face_average_transpose, gradient_transpose,
};
pub(crate) use viscous::{stress_divergence, stress_divergence_t_phi};

#[cfg(test)]
mod tests;
