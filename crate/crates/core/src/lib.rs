//! Spectral-Galerkin toolkit for the two-time-scale stochastic convective
//! Brinkman-Forchheimer equations on the 2D periodic torus.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod averaging;
pub mod error;
pub mod harness;
pub mod ldp;
pub mod operators;
pub mod sde;
pub mod spectral;
pub mod util;

pub use error::{Error, Result};
pub use spectral::{BasisSet, Norms, SpectralField};
