//! Diffusion in narrow planar tubes and its one-dimensional limit.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diffusion;
pub mod geometry;
pub mod montecarlo;
pub mod oracles;
pub mod quadrature;
pub mod reflected;
pub mod scale_speed;

pub use geometry::{
    build_example_family, check_assumptions, eval_cross_section, AssumptionConfig, AssumptionReport, AssumptionSweep,
    BaseProfile, BumpShape, CrossSection, CrossSectionFamily, ExampleFamilySpec, GeometryError, StepShape, Wall,
    WallSplit,
};
pub use montecarlo::{path_rng, run_paths, MonteCarloSummary, PathRng};
pub use reflected::{
    default_dt, local_time_diagnostic, mc_exit_statistics, sample_exit, sample_marginal, step, ExitObservation, ExitOutcome,
    ExitSide, ExitStatistics, McConfig, ReflectedPathState, SimError,
};
pub use scale_speed::{
    compute_scale_speed_eps, gluing_parameters, limiting_scale_speed, GluingParameters, LimitProfile,
    ScaleSpeedError, ScaleSpeedModel, ScaleSpeedTable,
};
