//! Nonlocal Cahn-Hilliard-Navier-Stokes solver with optimal distributed control.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// A failed run returns the partial trajectory with the error.
#![allow(clippy::result_large_err)]

pub mod error;
pub mod geometry;
pub mod linalg;
pub mod forward;
pub mod material;
pub mod nonlocal;
pub mod optimize;
pub mod sensitivity;
pub mod workbench;

pub use error::{Error, Result};
