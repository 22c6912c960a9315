//! Adaptive wavelet estimation of a regression function from covariates
//! observed with additive noise.

pub mod error;
pub mod quad;
pub mod simlab;
pub mod deconv;
pub mod density;
pub mod estimator;
pub mod wavelet;

pub use error::{Error, Result};
