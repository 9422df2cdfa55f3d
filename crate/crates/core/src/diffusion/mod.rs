//! The limiting generalized diffusion `D_v D_u` as a birth-death chain, the
//! one-dimensional hat process, domain test functions, and resolvent checks.

mod ctmc;
mod hat;
mod resolvent;
mod test_function;

use thiserror::Error;

use crate::reflected::SimError;
use crate::scale_speed::ScaleSpeedError;

pub use ctmc::{
    build_ctmc, ctmc_exit_statistics, ctmc_marginal_samples, exit_stats_linear_solve, scale_uniform_grid, simulate_ctmc_exit, simulate_ctmc_marginal,
    write_samples_csv, CtmcModel, CtmcPath, ExitSolution,
};
pub use hat::{hat_exit_statistics, hat_marginal_samples, simulate_hat_exit, simulate_hat_marginal, HatConfig, HatStepper};
pub use resolvent::{resolvent_check, ResolventReport, ResolventSimulator};
pub use test_function::{build_domain_test_function, DomainTestFunction, SideCubic};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error(transparent)]
    ScaleSpeed(#[from] ScaleSpeedError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("grid contains duplicate point {0}")]
    DuplicateGridPoint(f64),
    #[error("grid must be strictly increasing")]
    NonMonotoneGrid,
    #[error("0 must be a grid point")]
    ZeroNotOnGrid,
    #[error("scale function is not strictly increasing on the grid (at index {0})")]
    NonMonotoneScale(usize),
    #[error("{0} is not a grid point")]
    NotAGridPoint(f64),
    #[error("singular tridiagonal system at row {0}")]
    SingularSystem(usize),
    #[error("drift {drift} exceeds bound {bound} at x = {x}")]
    DriftBlowUp { x: f64, drift: f64, bound: f64 },
    #[error("degenerate gluing parameters: {0}")]
    DegenerateGluing(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
