//! Fourier-truncation regularization for a backward-in-time semilinear
//! fractional elliptic problem with white-noise Cauchy data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod mittag_leffler;
pub mod spectral;
pub mod mild_solver;
pub mod noise_model;
pub mod regularizer;
pub mod experiments;

pub use error::{Error, Result};
