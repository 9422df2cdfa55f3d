//! One function per subcommand. Each writes its CSV tables and one summary
//! JSON into the output directory and returns the summary.

mod assumptions;
mod exit_prob;
mod exit_time;
mod marginal;
mod resolvent;

use narrowtube_core::diffusion::{build_ctmc, scale_uniform_grid, CtmcModel, DiffusionError};
use narrowtube_core::oracles::OracleError;
use narrowtube_core::scale_speed::uniform_grid;
use narrowtube_core::{
    limiting_scale_speed, CrossSectionFamily, ExampleFamilySpec, GeometryError, ScaleSpeedError, ScaleSpeedTable,
    SimError,
};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, StartY};
use crate::output::{OutputDir, VERSION};

pub use assumptions::check_assumptions_cmd;
pub use exit_prob::exit_prob_cmd;
pub use exit_time::exit_time_cmd;
pub use marginal::marginal_cmd;
pub use resolvent::resolvent_cmd;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid family: {0}")]
    Family(#[from] GeometryError),
    /// Invalid run parameters detected by a module (start point, dt, ...).
    #[error("invalid run parameters: {0}")]
    Parameters(String),
    /// Censoring or convergence failure inside a computation.
    #[error("run failed: {0}")]
    Run(String),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Family(_) | CliError::Parameters(_) => 4,
            CliError::Run(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidInput(m) => CliError::Parameters(m),
            e => CliError::Run(e.to_string()),
        }
    }
}

impl From<ScaleSpeedError> for CliError {
    fn from(e: ScaleSpeedError) -> Self {
        match e {
            ScaleSpeedError::Geometry(g) => CliError::Family(g),
            ScaleSpeedError::InvalidArgument(m) => CliError::Parameters(m),
            e => CliError::Run(e.to_string()),
        }
    }
}

impl From<DiffusionError> for CliError {
    fn from(e: DiffusionError) -> Self {
        match e {
            DiffusionError::Simulation(s) => s.into(),
            DiffusionError::ScaleSpeed(s) => s.into(),
            DiffusionError::InvalidInput(m) => CliError::Parameters(m),
            e => CliError::Run(e.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::ScaleSpeed(s) => s.into(),
            OracleError::InvalidInput(m) => CliError::Parameters(m),
            e => CliError::Run(e.to_string()),
        }
    }
}

/// One tolerance check: passes iff `|value - target| <= tolerance`, or for
/// the one-sided kinds as stated by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub kind: CheckKind,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Within,
    AtMost,
    AtLeast,
    /// Pass/fail flag; value is 1 or 0.
    Flag,
}

impl Check {
    pub fn within(name: impl Into<String>, value: f64, target: f64, tolerance: f64) -> Self {
        let passed = (value - target).abs() <= tolerance;
        Self { name: name.into(), value, target, tolerance, kind: CheckKind::Within, passed }
    }

    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, target: limit, tolerance: 0.0, kind: CheckKind::AtMost, passed: value <= limit }
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, target: limit, tolerance: 0.0, kind: CheckKind::AtLeast, passed: value >= limit }
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        let value = if ok { 1.0 } else { 0.0 };
        Self { name: name.into(), value, target: 1.0, tolerance: 0.0, kind: CheckKind::Flag, passed: ok }
    }
}

/// Summary JSON of one command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommandReport {
    pub command: &'static str,
    pub version: &'static str,
    pub config_hash: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub results: serde_json::Value,
    pub files: Vec<String>,
}

impl CommandReport {
    fn new(command: &'static str, out: &OutputDir, checks: Vec<Check>, results: serde_json::Value, files: Vec<String>) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        Self { command, version: VERSION, config_hash: out.hash().to_string(), passed, checks, results, files }
    }

    /// Writes `<command>.json` and returns the report.
    fn finish(mut self, out: &OutputDir) -> Result<Self, CliError> {
        let name = format!("{}.json", self.command);
        self.files.push(name.clone());
        out.write_json(&name, &self)?;
        Ok(self)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            2
        }
    }
}

/// Runs every experiment in order; the exit code is the worst of them.
pub fn sweep_cmd(cfg: &ExperimentConfig, out: &OutputDir) -> Result<Vec<CommandReport>, CliError> {
    let reports = vec![
        check_assumptions_cmd(cfg, out)?,
        exit_prob_cmd(cfg, out)?,
        exit_time_cmd(cfg, out)?,
        marginal_cmd(cfg, out)?,
        resolvent_cmd(cfg, out)?,
    ];
    #[derive(Serialize)]
    struct Sweep<'a> {
        command: &'static str,
        version: &'static str,
        config_hash: &'a str,
        passed: bool,
        commands: Vec<(&'static str, bool)>,
    }
    let summary = Sweep {
        command: "sweep",
        version: VERSION,
        config_hash: out.hash(),
        passed: reports.iter().all(|r| r.passed),
        commands: reports.iter().map(|r| (r.command, r.passed)).collect(),
    };
    out.write_json("sweep.json", &summary)?;
    Ok(reports)
}

pub(crate) fn build_family(spec: &ExampleFamilySpec, eps: f64) -> Result<CrossSectionFamily, CliError> {
    Ok(CrossSectionFamily::build(*spec, eps)?)
}

/// Planar start point `(start_x, y)` with `y` taken from the start policy.
pub(crate) fn start_point(family: &CrossSectionFamily, cfg: &ExperimentConfig) -> (f64, f64) {
    let x = cfg.run.start_x;
    let (lo, up) = family.walls(x);
    let y = match cfg.run.start_y {
        StartY::Mid => family.midline(x),
        StartY::Fraction(q) => -lo + q * (lo + up),
    };
    (x, y)
}

/// Limiting `(u, v)` table on a uniform grid over the window.
pub(crate) fn limit_table(spec: &ExampleFamilySpec) -> Result<ScaleSpeedTable, CliError> {
    spec.validate()?;
    let h = spec.halfwidth;
    Ok(limiting_scale_speed(spec, &uniform_grid(-h, h, 201))?)
}

/// Birth-death chain for the limit on a scale-uniform `n`-node grid of
/// `[a, b]`.
pub(crate) fn limit_ctmc(table: &ScaleSpeedTable, a: f64, b: f64, n: usize) -> Result<CtmcModel, CliError> {
    let grid = scale_uniform_grid(&table.model, a, b, n)?;
    Ok(build_ctmc(table, &grid)?)
}

/// Grid node of `model` nearest to `x`.
pub(crate) fn nearest_node(model: &CtmcModel, x: f64) -> f64 {
    let g = &model.grid;
    let i = g.partition_point(|&v| v < x).min(g.len() - 1);
    if i > 0 && (x - g[i - 1]).abs() <= (g[i] - x).abs() {
        g[i - 1]
    } else {
        g[i]
    }
}

pub(crate) fn fmt_eps(eps: f64) -> String {
    format!("{eps}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(CliError::from(SimError::TooManyCensored { censored: 5, n_paths: 100 }).exit_code(), 3);
        assert_eq!(CliError::from(SimError::InvalidInput("x".into())).exit_code(), 4);
        assert_eq!(CliError::from(GeometryError::InvalidEps(2.0)).exit_code(), 4);
        assert_eq!(CliError::from(OracleError::NotConverged { residual: 1.0 }).exit_code(), 3);
    }

    #[test]
    fn check_kinds() {
        assert!(Check::within("a", 1.0, 1.05, 0.1).passed);
        assert!(!Check::within("a", 1.0, 1.2, 0.1).passed);
        assert!(Check::at_most("b", 0.1, 0.1).passed);
        assert!(!Check::at_least("c", 4.0, 5.0).passed);
    }
}
