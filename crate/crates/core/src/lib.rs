//! De-biased and Bayesian inference for one coordinate of a high-dimensional
//! linear model with unit-variance Gaussian noise.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod debias;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod normal;
pub mod posterior;
pub mod quadrature;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
