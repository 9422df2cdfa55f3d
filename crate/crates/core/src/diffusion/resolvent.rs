use serde::Serialize;

use super::ctmc::{CtmcModel, CtmcPath};
use super::hat::{HatConfig, HatStepper};
use super::test_function::DomainTestFunction;
use super::DiffusionError;
use crate::geometry::CrossSectionFamily;
use crate::montecarlo::{compensated_sum, path_rng, run_paths, MonteCarloSummary};
use crate::reflected::{ReflectedPathState, TubeStepper};

/// Residuals below `e^{-λT}` are dropped: the horizon is `T = ln(1e6) / λ`.
pub const HORIZON_DISCOUNT: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub enum ResolventSimulator<'a> {
    /// Planar reflected process; `f` and `Lf` act on its x-coordinate.
    Tube { family: &'a CrossSectionFamily, dt: f64 },
    Hat { family: &'a CrossSectionFamily, cfg: HatConfig },
    /// Birth-death chain with its own discrete generator `L_h f`.
    Ctmc { model: &'a CtmcModel },
}

impl ResolventSimulator<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            ResolventSimulator::Tube { .. } => "tube",
            ResolventSimulator::Hat { .. } => "hat",
            ResolventSimulator::Ctmc { .. } => "ctmc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolventReport {
    pub residual: MonteCarloSummary,
    pub horizon: f64,
    /// Paths still inside the support of `f` at the horizon; their
    /// `e^{-λT} f(X_T)` term is added back.
    pub truncated: usize,
}

/// Monte Carlo estimate of `E ∫₀^∞ e^{-λt} (λf - Lf)(X_t) dt - f(x)`.
///
/// Each path is stopped at `T = ln(1e6)/λ` or when it leaves the support of
/// `f`, and the discounted terminal value `e^{-λτ} f(X_τ)` is added, so the
/// Dynkin identity makes the residual vanish in expectation for an exact
/// generator.
pub fn resolvent_check(
    simulator: ResolventSimulator<'_>,
    f: &DomainTestFunction,
    lambda: f64,
    start: f64,
    n_paths: usize,
    seed: u64,
    workers: usize,
) -> Result<ResolventReport, DiffusionError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(DiffusionError::InvalidInput("lambda must be positive".into()));
    }
    if n_paths < 2 {
        return Err(DiffusionError::InvalidInput("need at least two paths".into()));
    }
    let horizon = -HORIZON_DISCOUNT.ln() / lambda;
    let r = f.support_radius();
    let f0 = f.value(start);
    let g = |x: f64| lambda * f.value(x) - f.generator(x);

    let results: Vec<Result<(f64, bool), DiffusionError>> = match simulator {
        ResolventSimulator::Tube { family, dt } => {
            let stepper = TubeStepper::new(family, dt)?;
            family.check_window(start).map_err(|e| DiffusionError::InvalidInput(e.to_string()))?;
            if r + 8.0 * dt.sqrt() > family.halfwidth() {
                return Err(DiffusionError::InvalidInput("test function support exceeds the window".into()));
            }
            let y0 = family.midline(start);
            run_paths(n_paths, workers, |k| {
                let mut rng = path_rng(seed, k as u64);
                let mut s = ReflectedPathState::new(start, y0);
                let mut acc = Vec::new();
                while s.t < horizon && s.x.abs() < r {
                    acc.push((-lambda * s.t).exp() * g(s.x) * dt);
                    stepper.advance(&mut s, &mut rng)?;
                }
                let term = (-lambda * s.t).exp() * f.value(s.x);
                Ok((compensated_sum(acc) + term - f0, s.x.abs() < r))
            })
        }
        ResolventSimulator::Hat { family, cfg } => {
            let stepper = HatStepper::new(family, cfg)?;
            family.check_window(start).map_err(|e| DiffusionError::InvalidInput(e.to_string()))?;
            run_paths(n_paths, workers, |k| {
                let mut rng = path_rng(seed, k as u64);
                let (mut t, mut x) = (0.0, start);
                let mut acc = Vec::new();
                while t < horizon && x.abs() < r {
                    acc.push((-lambda * t).exp() * g(x) * cfg.dt);
                    stepper.advance(&mut t, &mut x, &mut rng)?;
                }
                let term = (-lambda * t).exp() * f.value(x);
                Ok((compensated_sum(acc) + term - f0, x.abs() < r))
            })
        }
        ResolventSimulator::Ctmc { model } => {
            let i0 = model.index_of(start)?;
            let fv: Vec<f64> = model.grid.iter().map(|&x| f.value(x)).collect();
            let lf = model.apply_generator(&fv);
            let gv: Vec<f64> = fv.iter().zip(&lf).map(|(a, b)| lambda * a - b).collect();
            let inside = |i: usize| model.grid[i].abs() < r;
            let fv0 = fv[i0];
            run_paths(n_paths, workers, |k| {
                let mut rng = path_rng(seed, k as u64);
                let mut path = CtmcPath::new(model, i0);
                let mut acc = Vec::new();
                loop {
                    let (s, t0, t1) = path.jump(&mut rng);
                    let t_end = t1.min(horizon);
                    acc.push(gv[s] * ((-lambda * t0).exp() - (-lambda * t_end).exp()) / lambda);
                    if t1 >= horizon {
                        let term = (-lambda * horizon).exp() * fv[s];
                        return Ok((compensated_sum(acc) + term - fv0, inside(s)));
                    }
                    if !inside(path.state) {
                        let term = (-lambda * t1).exp() * fv[path.state];
                        return Ok((compensated_sum(acc) + term - fv0, false));
                    }
                }
            })
        }
    };
    let results: Vec<(f64, bool)> = results.into_iter().collect::<Result<_, _>>()?;
    let vals: Vec<f64> = results.iter().map(|r| r.0).collect();
    let truncated = results.iter().filter(|r| r.1).count();
    let residual = MonteCarloSummary::from_samples(&vals).expect("n_paths >= 2");
    Ok(ResolventReport { residual, horizon, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{build_ctmc, build_domain_test_function};
    use crate::geometry::{BaseProfile, ExampleFamilySpec};
    use crate::scale_speed::{gluing_parameters, limiting_scale_speed, uniform_grid, LimitProfile};

    #[test]
    fn ctmc_self_residual_is_zero_on_average() {
        let spec = ExampleFamilySpec::new(BaseProfile::Const(1.0), 1.0, 0.3, 0.3);
        let grid = uniform_grid(-1.0, 1.0, 401);
        let table = limiting_scale_speed(&spec, &grid).unwrap();
        let model = build_ctmc(&table, &grid).unwrap();
        let f = build_domain_test_function(&gluing_parameters(&table).unwrap(), &LimitProfile::from_spec(&spec), 1)
            .unwrap();
        let rep = resolvent_check(ResolventSimulator::Ctmc { model: &model }, &f, 5.0, 0.0, 2000, 3, 1).unwrap();
        assert!(rep.residual.z_score(0.0).abs() < 4.0, "{:?}", rep);
        assert!((rep.horizon - 1e6f64.ln() / 5.0).abs() < 1e-12);
    }
}
