//! Needlet-based estimation of quadratic Sobolev functionals of densities on
//! the unit sphere S².

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod cli;
pub mod densities;
pub mod error;
pub mod estimator;
pub mod harmonics;
pub mod harness;
pub mod needlets;
pub mod quadrature;
pub mod theory;

pub use error::{Error, Result};
