use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::DiffusionError;
use crate::geometry::CrossSectionFamily;
use crate::montecarlo::{path_rng, run_paths};
use crate::reflected::{
    summarize_exits, ExitObservation, ExitOutcome, ExitSide, ExitStatistics, ReflectedPathState, SimError,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HatConfig {
    pub dt: f64,
    /// Paths whose drift exceeds this in magnitude are aborted.
    pub drift_bound: f64,
}

impl HatConfig {
    pub const DEFAULT_DRIFT_BOUND: f64 = 1e6;

    /// `dt = min(1e-6, (δ/10)²)`, which resolves the drift feature of width δ.
    pub fn auto(family: &CrossSectionFamily) -> Self {
        let d = family.delta() / 10.0;
        Self { dt: (d * d).min(1e-6), drift_bound: Self::DEFAULT_DRIFT_BOUND }
    }
}

/// Euler–Maruyama stepper for `dX = ½ (V_x/V)(X) dt + dW`.
#[derive(Debug, Clone, Copy)]
pub struct HatStepper<'a> {
    family: &'a CrossSectionFamily,
    cfg: HatConfig,
    sqrt_dt: f64,
}

impl<'a> HatStepper<'a> {
    pub fn new(family: &'a CrossSectionFamily, cfg: HatConfig) -> Result<Self, DiffusionError> {
        if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
            return Err(DiffusionError::InvalidInput(format!("dt = {} must be positive", cfg.dt)));
        }
        if !(cfg.drift_bound > 0.0) {
            return Err(DiffusionError::InvalidInput("drift bound must be positive".into()));
        }
        Ok(Self { family, cfg, sqrt_dt: cfg.dt.sqrt() })
    }

    pub fn drift(&self, x: f64) -> f64 {
        let j = self.family.total_jet(x);
        0.5 * j.d1 / j.value
    }

    /// One step from `(t, x)`.
    #[inline]
    pub fn advance<R: Rng + ?Sized>(&self, t: &mut f64, x: &mut f64, rng: &mut R) -> Result<(), DiffusionError> {
        let b = self.drift(*x);
        if !(b.abs() <= self.cfg.drift_bound) {
            return Err(DiffusionError::DriftBlowUp { x: *x, drift: b, bound: self.cfg.drift_bound });
        }
        let z: f64 = rng.sample(StandardNormal);
        let next = *x + b * self.cfg.dt + self.sqrt_dt * z;
        if next.abs() > self.family.halfwidth() {
            return Err(SimError::LeftWindow { x: next }.into());
        }
        *x = next;
        *t += self.cfg.dt;
        Ok(())
    }
}

fn state(t: f64, x: f64) -> ReflectedPathState {
    ReflectedPathState { t, ..ReflectedPathState::new(x, 0.0) }
}

/// Exit side and time of the hat process from `(a, b)`, censored at `t_max`.
pub fn simulate_hat_exit<R: Rng + ?Sized>(
    family: &CrossSectionFamily,
    start: f64,
    interval: (f64, f64),
    cfg: HatConfig,
    t_max: f64,
    rng: &mut R,
) -> Result<ExitOutcome, DiffusionError> {
    let (a, b) = interval;
    if !(a < start && start < b) {
        return Err(DiffusionError::InvalidInput(format!("start {start} not inside ({a}, {b})")));
    }
    if a < -family.halfwidth() || b > family.halfwidth() {
        return Err(DiffusionError::InvalidInput("interval exceeds the family window".into()));
    }
    let stepper = HatStepper::new(family, cfg)?;
    let (mut t, mut x) = (0.0, start);
    loop {
        if t >= t_max {
            return Ok(ExitOutcome::Censored(state(t, x)));
        }
        stepper.advance(&mut t, &mut x, rng)?;
        if x <= a || x >= b {
            let exit_side = if x >= b { ExitSide::Right } else { ExitSide::Left };
            return Ok(ExitOutcome::Exited(ExitObservation { exit_time: t, exit_side, final_state: state(t, x) }));
        }
    }
}

/// `X̂_T` for one path; the step is adjusted so that `T` is a whole number
/// of steps.
pub fn simulate_hat_marginal<R: Rng + ?Sized>(
    family: &CrossSectionFamily,
    start: f64,
    horizon: f64,
    cfg: HatConfig,
    rng: &mut R,
) -> Result<f64, DiffusionError> {
    if !(horizon > 0.0) {
        return Err(DiffusionError::InvalidInput("horizon must be positive".into()));
    }
    family.check_window(start).map_err(|e| DiffusionError::InvalidInput(e.to_string()))?;
    let n_steps = (horizon / cfg.dt).round().max(1.0) as usize;
    let stepper = HatStepper::new(family, HatConfig { dt: horizon / n_steps as f64, ..cfg })?;
    let (mut t, mut x) = (0.0, start);
    for _ in 0..n_steps {
        stepper.advance(&mut t, &mut x, rng)?;
    }
    Ok(x)
}

#[allow(clippy::too_many_arguments)]
pub fn hat_exit_statistics(
    family: &CrossSectionFamily,
    start: f64,
    interval: (f64, f64),
    cfg: HatConfig,
    t_max: f64,
    n_paths: usize,
    seed: u64,
    workers: usize,
) -> Result<ExitStatistics, DiffusionError> {
    let outcomes: Vec<Result<ExitOutcome, DiffusionError>> = run_paths(n_paths, workers, |k| {
        simulate_hat_exit(family, start, interval, cfg, t_max, &mut path_rng(seed, k as u64))
    });
    let outcomes: Vec<ExitOutcome> = outcomes.into_iter().collect::<Result<_, _>>()?;
    Ok(summarize_exits(&outcomes)?)
}

pub fn hat_marginal_samples(
    family: &CrossSectionFamily,
    start: f64,
    horizon: f64,
    cfg: HatConfig,
    n_paths: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<f64>, DiffusionError> {
    run_paths(n_paths, workers, |k| simulate_hat_marginal(family, start, horizon, cfg, &mut path_rng(seed, k as u64)))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BaseProfile, ExampleFamilySpec};

    #[test]
    fn flat_hat_process_is_brownian() {
        let fam = CrossSectionFamily::flat(1.0, 0.02).unwrap();
        let cfg = HatConfig { dt: 1e-6, drift_bound: 1.0 };
        let st = hat_exit_statistics(&fam, 0.0, (-0.1, 0.1), cfg, 1.0, 2000, 5, 1).unwrap();
        assert!(st.mean_exit_time.z_score(0.01).abs() < 4.0, "{:?}", st.mean_exit_time);
        assert!(st.prob_right.z_score(0.5).abs() < 4.0);
    }

    #[test]
    fn auto_dt_resolves_delta() {
        let spec = ExampleFamilySpec::new(BaseProfile::Const(1.0), 1.0, 0.0, 0.3).with_delta_scale(0.001);
        let fam = CrossSectionFamily::build(spec, 0.01).unwrap();
        let cfg = HatConfig::auto(&fam);
        assert!((cfg.dt - (fam.delta() / 10.0).powi(2)).abs() < 1e-18);
        assert!(cfg.dt < 1e-6);
    }

    #[test]
    fn drift_blow_up_is_reported() {
        let spec = ExampleFamilySpec::new(BaseProfile::Const(1.0), 1.0, 0.0, 0.3).with_delta_scale(0.01);
        let fam = CrossSectionFamily::build(spec, 0.02).unwrap();
        let cfg = HatConfig { dt: 1e-6, drift_bound: 1.0 };
        let r = simulate_hat_exit(&fam, 0.0, (-0.1, 0.1), cfg, 1.0, &mut path_rng(1, 0));
        assert!(matches!(r, Err(DiffusionError::DriftBlowUp { .. })));
    }
}
