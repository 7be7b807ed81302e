//! Auto-differentiable filtering.
//!
//! Joint learning of forecast-model parameters and data-assimilation filter
//! parameters (3DVar with a learned background covariance, 3DVar with a learned
//! gain, the stochastic EnKF and the hybrid Ens3DVar) by reverse-mode
//! differentiation through the filter recursion.

pub mod autodiff;
pub mod config;
pub mod datagen;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod filters;
pub mod learning;
pub mod matrix;
pub mod metrics;
pub mod rng;

pub use error::{Error, Result};
pub use matrix::Matrix;
