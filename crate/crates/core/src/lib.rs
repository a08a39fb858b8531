//! Simulation and analysis of speckle intensity-covariance imaging through
//! random media in the white-noise paraxial regime.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod error;
pub mod estimator;
pub mod grid;
pub mod io;
pub mod mask;
pub mod medium;
pub mod moment_ode;
pub mod propagator;
pub mod quad;
pub mod retrieval;
pub mod rng;
pub mod validation;

pub use error::{Error, Result};
