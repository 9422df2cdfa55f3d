use narrowtube_core::diffusion::exit_stats_linear_solve;
use narrowtube_core::{default_dt, gluing_parameters, mc_exit_statistics, McConfig};
use serde::Serialize;
use serde_json::json;

use super::{build_family, fmt_eps, limit_ctmc, limit_table, nearest_node, start_point, Check, CliError, CommandReport};
use crate::config::ExperimentConfig;
use crate::output::{sub_seed, OutputDir, Table};

#[derive(Debug, Serialize)]
struct Row {
    eps: f64,
    dt: f64,
    p_hat: f64,
    stderr: f64,
    p_plus_target: f64,
    z_score: f64,
    censored: usize,
}

/// Right-exit probability from `(-κ, κ)` per ε against `p₊`, with the
/// limit value of the chain in the last row.
pub fn exit_prob_cmd(cfg: &ExperimentConfig, out: &OutputDir) -> Result<CommandReport, CliError> {
    let run = &cfg.run;
    let kappa = run.kappa;
    let table = limit_table(&cfg.family)?;
    let glue = gluing_parameters(&table)?;
    let target = glue.p_plus;

    let mut csv = Table::new(&["eps", "p_hat", "stderr", "p_plus_target", "z_score"]);
    let mut rows = Vec::new();
    let mut files = vec!["exit-prob.csv".to_string()];
    for (i, &eps) in run.eps_list.iter().enumerate() {
        let family = build_family(&cfg.family, eps)?;
        let dt = run.dt.resolve(default_dt(eps));
        let mc = McConfig { dt, n_paths: run.n_paths, seed: sub_seed(run.seed, "exit-prob", i as u64), workers: run.workers, t_max: run.t_max };
        let stats = mc_exit_statistics(&family, start_point(&family, cfg), (-kappa, kappa), &mc)?;
        let p = stats.prob_right;
        let row = Row { eps, dt, p_hat: p.mean, stderr: p.std_error, p_plus_target: target, z_score: p.z_score(target), censored: stats.censored };
        csv.push(vec![fmt_eps(eps), row.p_hat.to_string(), row.stderr.to_string(), target.to_string(), row.z_score.to_string()]);
        let name = format!("exit-prob_paths_eps{}.csv", fmt_eps(eps));
        stats.write_records_csv(out.writer(&name)?, Some(&out.preamble()))?;
        files.push(name);
        rows.push(row);
    }

    let model = limit_ctmc(&table, -kappa, kappa, run.ctmc_nodes)?;
    let x0 = nearest_node(&model, run.start_x);
    let sol = exit_stats_linear_solve(&model, (-kappa, kappa))?;
    let (p_limit, _) = sol.at(x0).ok_or_else(|| CliError::Run("start node missing from the solution".into()))?;
    csv.push(vec!["limit".into(), p_limit.to_string(), "0".into(), target.to_string(), String::new()]);
    out.write_table("exit-prob.csv", &csv)?;

    let tol = &cfg.tolerances;
    let mut checks = Vec::new();
    if let Some(last) = rows.last() {
        let allowance = tol.p_plus_abs.max(tol.p_plus_sigma * last.stderr);
        checks.push(Check::within(format!("p_hat eps={}", last.eps), last.p_hat, target, allowance));
    }
    let results = json!({
        "kappa": kappa,
        "start_x": run.start_x,
        "gluing": glue,
        "rows": rows,
        "limit": { "x": x0, "p_right": p_limit, "nodes": model.len() },
    });
    CommandReport::new("exit-prob", out, checks, results, files).finish(out)
}
