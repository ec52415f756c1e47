//! Robust dose-response estimation with heavy-tailed outcomes.
//!
//! A Welsch-loss cross-fit local-linear core estimates the average
//! dose-response curve; a per-treatment tail-shape estimator and a global
//! GPD threshold fit feed tail-conditional functionals (return levels,
//! shortfall, mean recovery) that refuse when the tail is not identified.

pub mod error;
pub mod kernels;
pub mod rng;
pub mod dgp;
pub mod dml;
pub mod tail;
pub mod pdhte;
pub mod functionals;
pub mod baselines;
pub mod harness;

pub use error::{Error, Result};
