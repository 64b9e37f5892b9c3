//! Numerical toolkit for the linearised and nonlinear non-cutoff Boltzmann
//! operator near the global Maxwellian.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod collision;
pub mod error;
pub mod evolution;
pub mod geometry;
pub mod kernel;
pub mod linearized;
pub mod littlewood_paley;
pub mod norms;
pub mod quadrature;

pub use error::{Error, Result};
