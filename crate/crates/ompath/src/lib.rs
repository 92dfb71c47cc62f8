//! Onsager-Machlup functionals and most probable transition paths for
//! second-order systems driven by time-dependent fractional noise.

pub mod error;
pub mod fbm;
pub mod fraccalc;
pub mod grid;
pub mod montecarlo;
pub mod mpp;
pub mod omfunctional;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{OmError, Result};
