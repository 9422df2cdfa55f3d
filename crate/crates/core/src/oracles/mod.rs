//! Reference computations independent of the samplers: the Green-function
//! boundary-value formula, a finite-difference solver for the planar exit
//! time, and Kolmogorov–Smirnov statistics.

mod fd_strip;
mod green;
mod ks;

use thiserror::Error;

use crate::scale_speed::ScaleSpeedError;

pub use fd_strip::{fd_strip_exit_time, FdField, FdOptions};
pub use green::green_bvp_solve;
pub use ks::{ks_one_sample, ks_statistic, normal_cdf};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    ScaleSpeed(#[from] ScaleSpeedError),
    #[error("x = {x} not inside ({a}, {b})")]
    OutsideInterval { x: f64, a: f64, b: f64 },
    #[error("empty sample")]
    EmptySample,
    #[error("linear solve did not reach the residual target: {residual:e}")]
    NotConverged { residual: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
