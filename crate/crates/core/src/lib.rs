//! Stochastic Magnus-type integration of non-autonomous semilinear parabolic
//! SPDEs driven by additive Q-Wiener noise.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coefficient;
pub mod config;
pub mod error;
pub mod expm;
pub mod fem;
pub mod harness;
pub mod integrators;
pub mod noise;
pub mod quadrature;
pub mod spectral;
pub mod state;
pub mod validation;

pub use error::{Error, Result};
