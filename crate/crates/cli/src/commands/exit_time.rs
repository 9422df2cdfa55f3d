use narrowtube_core::diffusion::{exit_stats_linear_solve, hat_exit_statistics, HatConfig};
use narrowtube_core::oracles::{fd_strip_exit_time, green_bvp_solve, FdOptions};
use narrowtube_core::scale_speed::hat_exit_time_formula;
use narrowtube_core::{
    default_dt, gluing_parameters, local_time_diagnostic, mc_exit_statistics, McConfig, MonteCarloSummary,
    ScaleSpeedTable,
};
use serde::Serialize;
use serde_json::json;

use super::{build_family, fmt_eps, limit_ctmc, limit_table, nearest_node, start_point, Check, CliError, CommandReport};
use crate::config::ExperimentConfig;
use crate::output::{cell, sub_seed, OutputDir, Table};

#[derive(Debug, Serialize)]
struct Row {
    eps: f64,
    dt: f64,
    mean_tau: f64,
    stderr: f64,
    censored: usize,
    hat: Option<MonteCarloSummary>,
    hat_formula: f64,
    fd_value: Option<f64>,
    fd_slope_warning: Option<bool>,
    local_time: Option<MonteCarloSummary>,
}

#[derive(Debug, Serialize)]
struct KappaPoint {
    kappa: f64,
    ctmc_mean_tau: f64,
    green_oracle_value: f64,
}

fn ctmc_mean_time(table: &ScaleSpeedTable, kappa: f64, x: f64, nodes: usize) -> Result<(f64, f64), CliError> {
    let model = limit_ctmc(table, -kappa, kappa, nodes)?;
    let x0 = nearest_node(&model, x);
    let sol = exit_stats_linear_solve(&model, (-kappa, kappa))?;
    let (_, t) = sol.at(x0).ok_or_else(|| CliError::Run("start node missing from the solution".into()))?;
    Ok((x0, t))
}

/// Least-squares fit of `τ(κ) = a κ + b κ²`; returns `a`. A single point
/// gives `τ/κ`.
pub(crate) fn linear_coefficient(points: &[(f64, f64)]) -> f64 {
    if let [(k, t)] = points {
        return t / k;
    }
    let (mut s2, mut s3, mut s4, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(k, t) in points {
        s2 += k * k;
        s3 += k * k * k;
        s4 += k * k * k * k;
        t1 += k * t;
        t2 += k * k * t;
    }
    (t1 * s4 - t2 * s3) / (s2 * s4 - s3 * s3)
}

/// Mean exit time from `(-κ, κ)` per ε, the Green-function value of the
/// limit, the chain's linear-solve value and the fitted θ.
pub fn exit_time_cmd(cfg: &ExperimentConfig, out: &OutputDir) -> Result<CommandReport, CliError> {
    let run = &cfg.run;
    let tol = &cfg.tolerances;
    let kappa = run.kappa;
    let table = limit_table(&cfg.family)?;
    let glue = gluing_parameters(&table)?;
    let green = |k: f64, x: f64| green_bvp_solve(&table, -k, k, x, |_| 1.0, 0.0, 0.0);
    let green_value = green(kappa, run.start_x)?;
    let kappa_theta = kappa * glue.theta;

    let mut rows = Vec::new();
    let mut files = vec!["exit-time.csv".to_string(), "exit-time_kappa.csv".to_string()];
    for (i, &eps) in run.eps_list.iter().enumerate() {
        let family = build_family(&cfg.family, eps)?;
        let dt = run.dt.resolve(default_dt(eps));
        let mc = McConfig { dt, n_paths: run.n_paths, seed: sub_seed(run.seed, "exit-time", i as u64), workers: run.workers, t_max: run.t_max };
        let stats = mc_exit_statistics(&family, start_point(&family, cfg), (-kappa, kappa), &mc)?;
        let name = format!("exit-time_paths_eps{}.csv", fmt_eps(eps));
        stats.write_records_csv(out.writer(&name)?, Some(&out.preamble()))?;
        files.push(name);

        let hat = if run.hat {
            let auto = HatConfig::auto(&family);
            let hcfg = HatConfig { dt: run.dt.resolve(auto.dt), ..auto };
            let seed = sub_seed(run.seed, "exit-time-hat", i as u64);
            let s = hat_exit_statistics(&family, run.start_x, (-kappa, kappa), hcfg, run.t_max, run.n_paths, seed, run.workers)?;
            Some(s.mean_exit_time)
        } else {
            None
        };
        let hat_formula = hat_exit_time_formula(&family, kappa, run.start_x)?;
        let fd = match run.fd_grid {
            Some((nx, ny)) => {
                let field = fd_strip_exit_time(&family, kappa, nx, ny, FdOptions::default())?;
                let name = format!("exit-time_fd_eps{}.csv", fmt_eps(eps));
                field.write_csv(out.writer(&name)?, Some(&out.preamble()))?;
                files.push(name);
                let (x, y) = start_point(&family, cfg);
                Some((field.value_at_point(x, y), field.slope_warning))
            }
            None => None,
        };
        let local_time = if run.local_time_paths > 0 {
            let lcfg = McConfig { n_paths: run.local_time_paths, seed: sub_seed(run.seed, "local-time", i as u64), ..mc };
            Some(local_time_diagnostic(&family, (run.kappa0, kappa), run.lambda, &lcfg)?)
        } else {
            None
        };
        rows.push(Row {
            eps,
            dt,
            mean_tau: stats.mean_exit_time.mean,
            stderr: stats.mean_exit_time.std_error,
            censored: stats.censored,
            hat,
            hat_formula,
            fd_value: fd.map(|f| f.0),
            fd_slope_warning: fd.map(|f| f.1),
            local_time,
        });
    }

    let (x0, ctmc_tau) = ctmc_mean_time(&table, kappa, run.start_x, run.ctmc_nodes)?;
    let mut sweep = Vec::new();
    for &k in &run.kappa_list {
        let (_, t) = ctmc_mean_time(&table, k, 0.0, run.ctmc_nodes)?;
        sweep.push(KappaPoint { kappa: k, ctmc_mean_tau: t, green_oracle_value: green(k, 0.0)? });
    }
    let pts: Vec<(f64, f64)> = sweep.iter().map(|p| (p.kappa, p.ctmc_mean_tau)).collect();
    let theta_fit = linear_coefficient(&pts);

    let header = [
        "eps", "mean_tau", "stderr", "kappa_theta_target", "green_oracle_value", "hat_mean", "hat_stderr", "hat_formula",
        "fd_value", "local_time", "local_time_stderr",
    ];
    let mut csv = Table::new(&header);
    for r in &rows {
        csv.push(vec![
            fmt_eps(r.eps),
            r.mean_tau.to_string(),
            r.stderr.to_string(),
            kappa_theta.to_string(),
            green_value.to_string(),
            cell(r.hat.map(|h| h.mean)),
            cell(r.hat.map(|h| h.std_error)),
            r.hat_formula.to_string(),
            cell(r.fd_value),
            cell(r.local_time.map(|l| l.mean)),
            cell(r.local_time.map(|l| l.std_error)),
        ]);
    }
    let mut limit_row = vec![String::new(); header.len()];
    limit_row[0] = "limit".into();
    limit_row[1] = ctmc_tau.to_string();
    limit_row[2] = "0".into();
    limit_row[3] = kappa_theta.to_string();
    limit_row[4] = green_value.to_string();
    csv.push(limit_row);
    out.write_table("exit-time.csv", &csv)?;

    let mut kcsv = Table::new(&["kappa", "ctmc_mean_tau", "green_oracle_value", "kappa_theta"]);
    for p in &sweep {
        kcsv.push(vec![p.kappa.to_string(), p.ctmc_mean_tau.to_string(), p.green_oracle_value.to_string(), (p.kappa * glue.theta).to_string()]);
    }
    out.write_table("exit-time_kappa.csv", &kcsv)?;

    let mut checks = Vec::new();
    if let Some(last) = rows.last() {
        checks.push(Check::within(format!("tube mean_tau eps={}", last.eps), last.mean_tau, green_value, tol.exit_time_rel * green_value));
        if let Some(h) = last.hat {
            let pairs = [
                ("tube-hat", last.mean_tau, last.stderr, h.mean, h.std_error),
                ("tube-ctmc", last.mean_tau, last.stderr, ctmc_tau, 0.0),
                ("hat-ctmc", h.mean, h.std_error, ctmc_tau, 0.0),
            ];
            for (name, a, sa, b, sb) in pairs {
                let allowance = tol.agreement_sigma * sa.hypot(sb) + tol.agreement_rel * 0.5 * (a + b).abs();
                checks.push(Check::within(format!("{name} agreement eps={}", last.eps), a, b, allowance));
            }
        }
        if let (Some(v), Some(warn)) = (last.fd_value, last.fd_slope_warning) {
            checks.push(Check::flag(format!("fd slope validity eps={}", last.eps), !warn));
            checks.push(Check::within(format!("fd vs hat formula eps={}", last.eps), v, last.hat_formula, tol.fd_abs));
        }
    }
    checks.push(Check::within("ctmc mean_tau", ctmc_tau, green_value, tol.ctmc_rel * green_value));
    if sweep.len() >= 2 {
        let min_k = run.kappa_list.iter().cloned().fold(f64::INFINITY, f64::min);
        let allowance = tol.theta_rel * if glue.theta > 0.0 { glue.theta } else { min_k };
        checks.push(Check::within("theta fit", theta_fit, glue.theta, allowance));
    }

    let results = json!({
        "kappa": kappa,
        "start_x": run.start_x,
        "gluing": glue,
        "green_oracle_value": green_value,
        "kappa_theta_target": kappa_theta,
        "rows": rows,
        "limit": { "x": x0, "mean_tau": ctmc_tau, "nodes": run.ctmc_nodes },
        "kappa_sweep": sweep,
        "theta_fit": theta_fit,
    });
    CommandReport::new("exit-time", out, checks, results, files).finish(out)
}

#[cfg(test)]
mod tests {
    use super::linear_coefficient;

    #[test]
    fn fit_recovers_exact_quadratic() {
        let pts: Vec<(f64, f64)> = [0.2, 0.1, 0.05].iter().map(|&k| (k, 0.5 * k + k * k)).collect();
        assert!((linear_coefficient(&pts) - 0.5).abs() < 1e-12);
        assert_eq!(linear_coefficient(&[(0.1, 0.06)]), 0.6);
    }
}
