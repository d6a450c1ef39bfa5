//! Distributed distributional deterministic policy gradients (D4PG).
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the 64-bit instantiation used by the experiment driver.

pub mod adam;
pub mod dist;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod learner;
pub mod nn;
pub mod replay;
pub mod runtime;
pub mod scalar;
pub mod seeds;
pub mod selftest;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar used by the experiment driver and the checkpoint format.
pub type Real = f64;
pub type Net = nn::DenseNet<Real>;
pub type Adam = adam::AdamState<Real>;
