//! Planar Wiener process with instantaneous normal reflection in `D^ε`.
//!
//! Each Euler proposal that leaves the tube is mirrored across the tangent
//! line of the wall it crossed, at the crossing point located by regula
//! falsi on the wall gap along the step. Up to [`MAX_MIRRORS`] mirrors are applied; a point still outside
//! after that is clamped onto the cross-section. The removed displacement is
//! accumulated as a local-time proxy: for a flat wall the mirror scheme
//! reproduces the reflected transition law exactly, and the expected removed
//! displacement per step equals the expected Skorokhod regulator increment,
//! so on the flat tube `ε · E L_t ≈ t`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{CrossSectionFamily, Wall};
use crate::montecarlo::{compensated_sum, path_rng, run_paths, MonteCarloSummary};

pub const MAX_MIRRORS: usize = 8;

const CROSSING_ITERS: usize = 40;

/// Default Euler step `min(1e-6, ε²/25)`, resolving the transverse
/// equilibration time `ε²`.
pub fn default_dt(eps: f64) -> f64 {
    (eps * eps / 25.0).min(1e-6)
}

/// Fraction of censored paths above which a Monte Carlo run is rejected.
pub const MAX_CENSORED_FRACTION: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("non-finite coordinates ({x}, {y}) at t = {t}")]
    NonFinite { x: f64, y: f64, t: f64 },
    #[error("path left the family window at x = {x}")]
    LeftWindow { x: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{censored} of {n_paths} paths hit t_max before exiting")]
    TooManyCensored { censored: usize, n_paths: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReflectedPathState {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub local_time_proxy: f64,
    pub reflections: u64,
    /// Steps that needed the clamping fallback.
    pub projections: u64,
}

impl ReflectedPathState {
    pub fn new(x: f64, y: f64) -> Self {
        Self { t: 0.0, x, y, local_time_proxy: 0.0, reflections: 0, projections: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExitSide {
    Left,
    Right,
}

impl ExitSide {
    pub fn as_str(self) -> &'static str {
        match self {
            ExitSide::Left => "left",
            ExitSide::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitObservation {
    pub exit_time: f64,
    pub exit_side: ExitSide,
    pub final_state: ReflectedPathState,
}

/// Result of one exit-mode path: exited, or stopped at `t_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ExitOutcome {
    Exited(ExitObservation),
    Censored(ReflectedPathState),
}

impl ExitOutcome {
    pub fn exited(&self) -> Option<&ExitObservation> {
        match self {
            ExitOutcome::Exited(o) => Some(o),
            ExitOutcome::Censored(_) => None,
        }
    }
}

/// Euler stepper with mirror reflection for one family and step size.
#[derive(Debug, Clone, Copy)]
pub struct TubeStepper<'a> {
    family: &'a CrossSectionFamily,
    dt: f64,
    sqrt_dt: f64,
}

impl<'a> TubeStepper<'a> {
    pub fn new(family: &'a CrossSectionFamily, dt: f64) -> Result<Self, SimError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::InvalidInput(format!("dt = {dt} must be positive")));
        }
        Ok(Self { family, dt, sqrt_dt: dt.sqrt() })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (lo, up) = self.family.walls(x);
        -lo <= y && y <= up
    }

    /// Advances `state` by one step, using `(dx, dy)` as the free increment.
    pub fn advance_by(&self, state: &mut ReflectedPathState, dx: f64, dy: f64) -> Result<(), SimError> {
        let fam = self.family;
        let h = fam.halfwidth();
        let (px0, py0) = (state.x + dx, state.y + dy);
        let (mut px, mut py) = (px0, py0);
        if !(px.is_finite() && py.is_finite()) {
            return Err(SimError::NonFinite { x: px, y: py, t: state.t });
        }
        if px.abs() > h {
            return Err(SimError::LeftWindow { x: px });
        }
        let (mut lo, mut up) = fam.walls(px);
        if -lo <= py && py <= up {
            state.x = px;
            state.y = py;
            state.t += self.dt;
            return Ok(());
        }
        // Segment origin for locating the crossing: last point known inside.
        let (mut cx, mut cy) = (state.x, state.y);
        let mut mirrors = 0;
        while mirrors < MAX_MIRRORS && !(-lo <= py && py <= up) {
            let wall = if py > up { Wall::Upper } else { Wall::Lower };
            let gap = |x: f64, y: f64| {
                let (l, u) = fam.walls(x);
                match wall {
                    Wall::Upper => u - y,
                    Wall::Lower => y + l,
                }
            };
            let s = crossing(|s| gap(cx + s * (px - cx), cy + s * (py - cy)));
            let xc = (cx + s * (px - cx)).clamp(-h, h);
            let (l, u) = fam.walls(xc);
            let yc = match wall {
                Wall::Upper => u,
                Wall::Lower => -l,
            };
            let n = fam.inward_normal_unchecked(xc, wall);
            let d = (px - xc) * n[0] + (py - yc) * n[1];
            if d < 0.0 {
                px -= 2.0 * d * n[0];
                py -= 2.0 * d * n[1];
            } else {
                // Outside the true wall but inside its tangent line: the
                // linearization cannot resolve it here.
                break;
            }
            if px.abs() > h {
                return Err(SimError::LeftWindow { x: px });
            }
            cx = xc;
            cy = yc;
            (lo, up) = fam.walls(px);
            mirrors += 1;
        }
        state.reflections += mirrors.max(1) as u64;
        if !(-lo <= py && py <= up) {
            py = py.clamp(-lo, up);
            state.projections += 1;
        }
        state.local_time_proxy += ((px - px0).powi(2) + (py - py0).powi(2)).sqrt();
        state.x = px;
        state.y = py;
        state.t += self.dt;
        Ok(())
    }

    #[inline]
    pub fn advance<R: Rng + ?Sized>(&self, state: &mut ReflectedPathState, rng: &mut R) -> Result<(), SimError> {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        self.advance_by(state, self.sqrt_dt * z1, self.sqrt_dt * z2)
    }
}

/// Root in `[0, 1]` of a gap function with `g(0) >= 0 > g(1)`, by the
/// Illinois variant of regula falsi (exact in one step for a linear gap).
fn crossing(g: impl Fn(f64) -> f64) -> f64 {
    let (mut a, mut b) = (0.0, 1.0);
    let (mut ga, mut gb) = (g(0.0).max(0.0), g(1.0));
    if !(ga - gb > 0.0) {
        return 0.0;
    }
    let mut side = 0i8;
    let mut s = a;
    for _ in 0..CROSSING_ITERS {
        s = (a * gb - b * ga) / (gb - ga);
        let gs = g(s);
        if gs.abs() <= 1e-15 || b - a <= 1e-13 {
            break;
        }
        if gs > 0.0 {
            a = s;
            ga = gs;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        } else {
            b = s;
            gb = gs;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        }
    }
    s
}

/// One reflected Euler step.
pub fn step<R: Rng + ?Sized>(
    state: &ReflectedPathState,
    family: &CrossSectionFamily,
    dt: f64,
    rng: &mut R,
) -> Result<ReflectedPathState, SimError> {
    let stepper = TubeStepper::new(family, dt)?;
    if !stepper.contains(state.x, state.y) {
        return Err(SimError::InvalidInput(format!("state ({}, {}) outside the tube", state.x, state.y)));
    }
    let mut next = *state;
    stepper.advance(&mut next, rng)?;
    debug_assert!(stepper.contains(next.x, next.y));
    Ok(next)
}

/// Exit-mode run parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitRun {
    pub dt: f64,
    pub t_max: f64,
}

fn validate_exit(
    family: &CrossSectionFamily,
    start: (f64, f64),
    interval: (f64, f64),
    dt: f64,
) -> Result<(), SimError> {
    let (a, b) = interval;
    if !(a < start.0 && start.0 < b) {
        return Err(SimError::InvalidInput(format!("start x = {} not strictly inside ({a}, {b})", start.0)));
    }
    if dt > (b - a) * (b - a) / 100.0 {
        return Err(SimError::InvalidInput(format!("dt = {dt} exceeds (b - a)^2 / 100")));
    }
    let margin = 8.0 * dt.sqrt();
    if a - margin < -family.halfwidth() || b + margin > family.halfwidth() {
        return Err(SimError::InvalidInput("interval too close to the family window".into()));
    }
    let (lo, up) = family.walls(start.0);
    if !(-lo <= start.1 && start.1 <= up) {
        return Err(SimError::InvalidInput(format!("start y = {} outside the cross-section", start.1)));
    }
    Ok(())
}

/// Runs one path until `X` leaves `(a, b)` or `t_max` elapses.
pub fn sample_exit<R: Rng + ?Sized>(
    family: &CrossSectionFamily,
    start: (f64, f64),
    interval: (f64, f64),
    run: ExitRun,
    rng: &mut R,
) -> Result<ExitOutcome, SimError> {
    validate_exit(family, start, interval, run.dt)?;
    let stepper = TubeStepper::new(family, run.dt)?;
    Ok(exit_path(&stepper, start, interval, run.t_max, rng)?.0)
}

fn exit_path<R: Rng + ?Sized>(
    stepper: &TubeStepper<'_>,
    start: (f64, f64),
    (a, b): (f64, f64),
    t_max: f64,
    rng: &mut R,
) -> Result<(ExitOutcome, ()), SimError> {
    let mut state = ReflectedPathState::new(start.0, start.1);
    loop {
        if state.t >= t_max {
            return Ok((ExitOutcome::Censored(state), ()));
        }
        stepper.advance(&mut state, rng)?;
        if state.x <= a || state.x >= b {
            let exit_side = if state.x >= b { ExitSide::Right } else { ExitSide::Left };
            return Ok((ExitOutcome::Exited(ExitObservation { exit_time: state.t, exit_side, final_state: state }), ()));
        }
    }
}

/// Monte Carlo run size and reproducibility parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub workers: usize,
    pub t_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathRecord {
    pub path_id: usize,
    pub exit_time: Option<f64>,
    pub exit_side: Option<ExitSide>,
    pub reflections: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitStatistics {
    pub prob_right: MonteCarloSummary,
    pub mean_exit_time: MonteCarloSummary,
    pub censored: usize,
    pub records: Vec<PathRecord>,
}

/// `{n, mean, stderr, censored}` record for summary output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryRecord {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub censored: usize,
}

impl ExitStatistics {
    pub fn summary_records(&self) -> (SummaryRecord, SummaryRecord) {
        let rec = |s: &MonteCarloSummary| SummaryRecord {
            n: s.n_paths,
            mean: s.mean,
            stderr: s.std_error,
            censored: self.censored,
        };
        (rec(&self.prob_right), rec(&self.mean_exit_time))
    }

    pub fn write_records_csv<W: std::io::Write>(&self, mut w: W, preamble: Option<&str>) -> std::io::Result<()> {
        if let Some(p) = preamble {
            writeln!(w, "{p}")?;
        }
        writeln!(w, "path_id,exit_time,exit_side,reflections")?;
        for r in &self.records {
            let t = r.exit_time.map(|t| t.to_string()).unwrap_or_else(|| "NaN".into());
            let s = r.exit_side.map(|s| s.as_str()).unwrap_or("censored");
            writeln!(w, "{},{},{},{}", r.path_id, t, s, r.reflections)?;
        }
        Ok(())
    }
}

/// Summarizes per-path exit outcomes, already in path order.
pub fn summarize_exits(outcomes: &[ExitOutcome]) -> Result<ExitStatistics, SimError> {
    let n = outcomes.len();
    let censored = outcomes.iter().filter(|o| o.exited().is_none()).count();
    if censored as f64 > MAX_CENSORED_FRACTION * n as f64 {
        return Err(SimError::TooManyCensored { censored, n_paths: n });
    }
    let exits: Vec<&ExitObservation> = outcomes.iter().filter_map(|o| o.exited()).collect();
    let right: Vec<f64> = exits.iter().map(|o| if o.exit_side == ExitSide::Right { 1.0 } else { 0.0 }).collect();
    let times: Vec<f64> = exits.iter().map(|o| o.exit_time).collect();
    let too_few = || SimError::InvalidInput("fewer than two exited paths".into());
    let records = outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| match o {
            ExitOutcome::Exited(e) => PathRecord {
                path_id: i,
                exit_time: Some(e.exit_time),
                exit_side: Some(e.exit_side),
                reflections: e.final_state.reflections,
            },
            ExitOutcome::Censored(s) => {
                PathRecord { path_id: i, exit_time: None, exit_side: None, reflections: s.reflections }
            }
        })
        .collect();
    Ok(ExitStatistics {
        prob_right: MonteCarloSummary::from_samples(&right).ok_or_else(too_few)?,
        mean_exit_time: MonteCarloSummary::from_samples(&times).ok_or_else(too_few)?,
        censored,
        records,
    })
}

/// Exit probability to the right and mean exit time over `n_paths` paths.
pub fn mc_exit_statistics(
    family: &CrossSectionFamily,
    start: (f64, f64),
    interval: (f64, f64),
    cfg: &McConfig,
) -> Result<ExitStatistics, SimError> {
    if cfg.n_paths < 100 {
        return Err(SimError::InvalidInput("n_paths must be at least 100".into()));
    }
    validate_exit(family, start, interval, cfg.dt)?;
    let stepper = TubeStepper::new(family, cfg.dt)?;
    let outcomes: Vec<Result<ExitOutcome, SimError>> = run_paths(cfg.n_paths, cfg.workers, |i| {
        let mut rng = path_rng(cfg.seed, i as u64);
        exit_path(&stepper, start, interval, cfg.t_max, &mut rng).map(|r| r.0)
    });
    let outcomes: Vec<ExitOutcome> = outcomes.into_iter().collect::<Result<_, _>>()?;
    summarize_exits(&outcomes)
}

/// Terminal states at time `horizon` of `n_paths` paths from `start`.
pub fn sample_terminal_states(
    family: &CrossSectionFamily,
    start: (f64, f64),
    horizon: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<ReflectedPathState>, SimError> {
    if !(horizon > 0.0) {
        return Err(SimError::InvalidInput(format!("horizon T = {horizon} must be positive")));
    }
    let stepper = TubeStepper::new(family, dt)?;
    family.check_window(start.0).map_err(|e| SimError::InvalidInput(e.to_string()))?;
    if !stepper.contains(start.0, start.1) {
        return Err(SimError::InvalidInput("start outside the tube".into()));
    }
    let n_steps = (horizon / dt).round().max(1.0) as usize;
    let dt_eff = horizon / n_steps as f64;
    let stepper = TubeStepper::new(family, dt_eff)?;
    let states: Vec<Result<ReflectedPathState, SimError>> = run_paths(n_paths, workers, |i| {
        let mut rng = path_rng(seed, i as u64);
        let mut s = ReflectedPathState::new(start.0, start.1);
        for _ in 0..n_steps {
            stepper.advance(&mut s, &mut rng)?;
        }
        Ok(s)
    });
    states.into_iter().collect()
}

/// Samples of `X^ε_T`.
pub fn sample_marginal(
    family: &CrossSectionFamily,
    start: (f64, f64),
    horizon: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<f64>, SimError> {
    Ok(sample_terminal_states(family, start, horizon, dt, n_paths, seed, workers)?
        .into_iter()
        .map(|s| s.x)
        .collect())
}

/// Estimates `E ∫₀^τ e^{-λt} ε dL_t` for paths started at the middle of an
/// interval that stays on one side of 0; paths stop at exit or at `t_max`.
pub fn local_time_diagnostic(
    family: &CrossSectionFamily,
    interval: (f64, f64),
    lambda: f64,
    cfg: &McConfig,
) -> Result<MonteCarloSummary, SimError> {
    let (a, b) = interval;
    if !(a < b) || (a < 0.0 && b > 0.0) || a == 0.0 || b == 0.0 {
        return Err(SimError::InvalidInput("interval must lie strictly on one side of 0".into()));
    }
    if !(lambda > 0.0) {
        return Err(SimError::InvalidInput("lambda must be positive".into()));
    }
    let x0 = 0.5 * (a + b);
    let start = (x0, family.midline(x0));
    validate_exit(family, start, interval, cfg.dt)?;
    let stepper = TubeStepper::new(family, cfg.dt)?;
    let eps = family.eps();
    let vals: Vec<Result<f64, SimError>> = run_paths(cfg.n_paths, cfg.workers, |i| {
        let mut rng = path_rng(cfg.seed, i as u64);
        let mut s = ReflectedPathState::new(start.0, start.1);
        let mut acc = Vec::new();
        while s.t < cfg.t_max && s.x > a && s.x < b {
            let before = s.local_time_proxy;
            stepper.advance(&mut s, &mut rng)?;
            let dl = s.local_time_proxy - before;
            if dl > 0.0 {
                acc.push((-lambda * s.t).exp() * eps * dl);
            }
        }
        Ok(compensated_sum(acc))
    });
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_, _>>()?;
    MonteCarloSummary::from_samples(&vals).ok_or_else(|| SimError::InvalidInput("need at least two paths".into()))
}
