//! Numerical pseudo-Hermitian curvature algebra.

// Index loops mirror the component formulas.
#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod cli_report;
pub mod curvature_algebra;
pub mod error;
pub mod lie_models;
pub mod msy_identities;
pub mod pseudo_hermitian;
pub mod tensor_space;

pub use error::{Error, Result};
