use narrowtube_core::{check_assumptions, AssumptionConfig, CrossSectionFamily};
use serde_json::json;

use super::{fmt_eps, Check, CliError, CommandReport};
use crate::config::ExperimentConfig;
use crate::output::{OutputDir, Table};

/// Evaluates the cross-section assumptions along the ε sweep. Families with
/// `r` outside `(0, 1/3)` are still evaluated, so that a bad exponent shows
/// up as a failing ξ^ε column rather than a config error.
pub fn check_assumptions_cmd(cfg: &ExperimentConfig, out: &OutputDir) -> Result<CommandReport, CliError> {
    let families = cfg
        .run
        .eps_list
        .iter()
        .map(|&eps| CrossSectionFamily::build_relaxed(cfg.family, eps))
        .collect::<Result<Vec<_>, _>>()?;
    let t = &cfg.tolerances;
    let acfg = AssumptionConfig { zeta: t.zeta, region: t.region, derivative_bound: t.derivative_bound, xi_slack: t.xi_slack };
    let sweep = check_assumptions(&families, &acfg)?;

    let mut table = Table::new(&["eps", "zeta_min", "xi_eps", "derivative_bound_ratio", "passed"]);
    let mut checks = Vec::new();
    for r in &sweep.reports {
        table.push(vec![fmt_eps(r.eps), r.zeta_min.to_string(), r.xi_eps.to_string(), r.derivative_bound_ratio.to_string(), r.passed.to_string()]);
        checks.push(Check::flag(format!("assumptions eps={}", r.eps), r.passed));
    }
    checks.push(Check::flag("xi_eps nonincreasing", sweep.xi_decreasing));
    out.write_table("check-assumptions.csv", &table)?;

    let results = json!({
        "delta_exponent": cfg.family.delta_exponent,
        "xi_decreasing": sweep.xi_decreasing,
        "reports": sweep.reports,
    });
    CommandReport::new("check-assumptions", out, checks, results, vec!["check-assumptions.csv".into()]).finish(out)
}
