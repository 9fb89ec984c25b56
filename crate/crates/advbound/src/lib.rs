//! Adversary matrices for k-orthogonal-array problems.
//!
//! The library constructs the stacked adversary matrix of the k-sum and
//! element-distinctness families (and any user-supplied orthogonal array),
//! computes its spectral quantities both densely and matrix-free, and
//! certifies the chain of inequalities that turns the construction into a
//! lower bound on the adversary value: witness forms, norm upper bounds,
//! coordinate-mask surrogates, legal-column restriction and the symmetric
//! reduction.
//!
//! The `advbound` binary drives the same code from the command line; see the
//! `cli` module for the report formats and exit codes.

pub mod adversary_core;
pub mod cli;
pub mod error;
pub mod hamming_scheme;
pub mod orthogonal_array;
pub mod reduction;
pub mod spectral;
pub(crate) mod util;

pub use error::{Error, Result};
