//! Log-determinant estimation and certified bounds from trace powers `tr(A^k)`.
//!
//! The pipeline sees only `(n, p_1..p_m)`. Estimators interpolate the cumulant
//! generating function `K(t) = log E[X^t]` of `X = λ/AM` at integer nodes and
//! differentiate at zero; the bounds come from extremal atomic measures that
//! match the available moments.

pub mod analysis;
pub mod bounds;
pub mod error;
pub mod estimators;
pub mod moments;
pub mod noise;
pub mod numeric;
pub mod solver;
pub mod spectra;

pub use error::{Error, Result};
