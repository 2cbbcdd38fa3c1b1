//! Polynomial chaos for black-box functions of non-Gaussian correlated parameters.
//!
//! The joint density of the parameters is a Gaussian mixture. Orthonormal
//! multivariate polynomials are built from its moment matrix, whose entries are
//! computed exactly with functional tensor trains. Expansion coefficients are
//! fitted from a few hundred model evaluations by an adaptively sampled sparse
//! solver, and mean and variance follow in closed form from the coefficients.

#![allow(clippy::needless_range_loop)]

pub mod basis;
pub mod bench;
pub mod cli;
pub mod error;
pub mod ftt;
pub mod gmm;
pub mod indexing;
pub mod linalg;
pub mod oracle;
pub mod rng;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
