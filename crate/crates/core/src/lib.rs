//! Regional exponential observability of 2D Neumann diffusion systems.

// Validation guards are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod error;
pub mod observer;
pub mod quadrature;
pub mod regional;
pub mod scenario;
pub mod report;
pub mod sensing;
pub mod spectral;
pub mod strategic;

pub use error::{Error, Result};
