use narrowtube_core::diffusion::{build_domain_test_function, resolvent_check, HatConfig, ResolventReport, ResolventSimulator};
use narrowtube_core::{default_dt, gluing_parameters, LimitProfile};
use serde::Serialize;
use serde_json::json;

use super::{build_family, fmt_eps, limit_ctmc, limit_table, nearest_node, Check, CliError, CommandReport};
use crate::config::{ExperimentConfig, SimulatorKind};
use crate::output::{cell, sub_seed, OutputDir, Table};

#[derive(Debug, Serialize)]
struct Row {
    simulator: &'static str,
    eps: Option<f64>,
    function: String,
    residual: f64,
    stderr: f64,
    z_score: f64,
    truncated: usize,
    horizon: f64,
}

impl Row {
    fn new(simulator: SimulatorKind, eps: Option<f64>, function: String, r: &ResolventReport) -> Self {
        Self {
            simulator: simulator.as_str(),
            eps,
            function,
            residual: r.residual.mean,
            stderr: r.residual.std_error,
            z_score: r.residual.z_score(0.0),
            truncated: r.truncated,
            horizon: r.horizon,
        }
    }
}

/// Resolvent residuals `E ∫ e^{-λt}(λf - Lf)(X_t) dt - f(x)` for generated
/// domain test functions, per simulator and ε. The negative control runs a
/// gluing-violating copy of the first function at the smallest ε.
pub fn resolvent_cmd(cfg: &ExperimentConfig, out: &OutputDir) -> Result<CommandReport, CliError> {
    let run = &cfg.run;
    let tol = &cfg.tolerances;
    let table = limit_table(&cfg.family)?;
    let glue = gluing_parameters(&table)?;
    let profile = LimitProfile::from_spec(&cfg.family);
    let functions = (0..run.test_functions)
        .map(|k| build_domain_test_function(&glue, &profile, sub_seed(run.seed, "test-function", k as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let control_f = functions[0].violating(run.violation_shift);
    let n = run.n_paths;
    let x0 = run.start_x;
    let seed_for = |sim: SimulatorKind, eps_index: usize, k: usize| {
        sub_seed(run.seed, &format!("resolvent-{}-{eps_index}", sim.as_str()), k as u64)
    };

    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for &sim in &run.simulators {
        match sim {
            SimulatorKind::Ctmc => {
                let h = cfg.family.halfwidth;
                let model = limit_ctmc(&table, -h, h, run.ctmc_nodes)?;
                let start = nearest_node(&model, x0);
                for (k, f) in functions.iter().enumerate() {
                    let r = resolvent_check(ResolventSimulator::Ctmc { model: &model }, f, run.lambda, start, n, seed_for(sim, 0, k), run.workers)?;
                    let row = Row::new(sim, None, format!("f{k}"), &r);
                    checks.push(Check::at_most(format!("ctmc f{k} |z|"), row.z_score.abs(), tol.resolvent_sigma));
                    rows.push(row);
                }
            }
            SimulatorKind::Tube | SimulatorKind::Hat => {
                for (i, &eps) in run.eps_list.iter().enumerate() {
                    let family = build_family(&cfg.family, eps)?;
                    let simulator = continuous_simulator(sim, &family, cfg);
                    for (k, f) in functions.iter().enumerate() {
                        let r = resolvent_check(simulator, f, run.lambda, x0, n, seed_for(sim, i, k), run.workers)?;
                        rows.push(Row::new(sim, Some(eps), format!("f{k}"), &r));
                    }
                }
            }
        }
    }

    if let Some(sim) = run.control {
        let eps = *run.eps_list.last().expect("eps_list is non-empty");
        let row = match sim {
            SimulatorKind::Ctmc => {
                let h = cfg.family.halfwidth;
                let model = limit_ctmc(&table, -h, h, run.ctmc_nodes)?;
                let start = nearest_node(&model, x0);
                let r = resolvent_check(ResolventSimulator::Ctmc { model: &model }, &control_f, run.lambda, start, n, seed_for(sim, usize::MAX, 0), run.workers)?;
                Row::new(sim, None, "violating".into(), &r)
            }
            _ => {
                let family = build_family(&cfg.family, eps)?;
                let simulator = continuous_simulator(sim, &family, cfg);
                let r = resolvent_check(simulator, &control_f, run.lambda, x0, n, seed_for(sim, usize::MAX, 0), run.workers)?;
                Row::new(sim, Some(eps), "violating".into(), &r)
            }
        };
        checks.push(Check::at_least(format!("{} control |z|", sim.as_str()), row.z_score.abs(), tol.control_sigma));
        rows.push(row);
    }

    let mut csv = Table::new(&["simulator", "eps", "function", "residual", "stderr", "z_score", "truncated"]);
    for r in &rows {
        csv.push(vec![
            r.simulator.into(),
            cell(r.eps),
            r.function.clone(),
            r.residual.to_string(),
            r.stderr.to_string(),
            r.z_score.to_string(),
            r.truncated.to_string(),
        ]);
    }
    out.write_table("resolvent.csv", &csv)?;

    let results = json!({
        "lambda": run.lambda,
        "start_x": x0,
        "violation_shift": run.violation_shift,
        "functions": functions,
        "rows": rows,
        "eps_list": run.eps_list.iter().map(|&e| fmt_eps(e)).collect::<Vec<_>>(),
    });
    CommandReport::new("resolvent", out, checks, results, vec!["resolvent.csv".into()]).finish(out)
}

fn continuous_simulator<'a>(
    sim: SimulatorKind,
    family: &'a narrowtube_core::CrossSectionFamily,
    cfg: &ExperimentConfig,
) -> ResolventSimulator<'a> {
    match sim {
        SimulatorKind::Hat => {
            let auto = HatConfig::auto(family);
            ResolventSimulator::Hat { family, cfg: HatConfig { dt: cfg.run.dt.resolve(auto.dt), ..auto } }
        }
        _ => ResolventSimulator::Tube { family, dt: cfg.run.dt.resolve(default_dt(family.eps())) },
    }
}
