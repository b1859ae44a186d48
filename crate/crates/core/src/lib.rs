//! Driven two-level atom with Markovian homodyne feedback: analytic homodyne
//! spectra and squeezing functionals, stochastic-master-equation trajectories
//! with photocurrents, and derivative-free search over the control parameters.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod spectrum;
pub mod trajectory;

pub use error::{ConfigError, Error, Result};
pub use model::{BlochVector, Channel, ControlConfig, DensityMatrix};
