use narrowtube_core::diffusion::{ctmc_marginal_samples, write_samples_csv};
use narrowtube_core::oracles::{ks_one_sample, ks_statistic, normal_cdf};
use narrowtube_core::reflected::sample_terminal_states;
use narrowtube_core::{default_dt, BaseProfile, ExampleFamilySpec};
use serde::Serialize;
use serde_json::json;

use super::{build_family, fmt_eps, limit_ctmc, limit_table, nearest_node, start_point, Check, CliError, CommandReport};
use crate::config::ExperimentConfig;
use crate::output::{cell, sub_seed, OutputDir, Table};

#[derive(Debug, Serialize)]
struct Row {
    eps: f64,
    dt: f64,
    ks_vs_limit: f64,
    w1_vs_limit: Option<f64>,
    ks_y_uniform: f64,
    n: usize,
}

/// `∫ |F_a - F_b|` of two empirical CDFs.
pub(crate) fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut area = 0.0;
    while i < a.len() || j < b.len() {
        let t = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        area += (i as f64 / na - j as f64 / nb).abs() * (t - prev);
        prev = t;
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
    }
    area
}

/// Straight tube: the limit is Brownian motion and the reference CDF is exact.
fn is_flat(spec: &ExampleFamilySpec) -> bool {
    matches!(spec.v1, BaseProfile::Const(_)) && spec.beta == 0.0 && spec.mu == 0.0
}

/// KS distance between `X^ε_T` and the limit at `T`, per ε. The reference
/// is the exact normal law for a straight tube and chain samples otherwise.
/// The transverse position, as a fraction of the cross-section at `X_T`, is
/// tested against the uniform law.
pub fn marginal_cmd(cfg: &ExperimentConfig, out: &OutputDir) -> Result<CommandReport, CliError> {
    let run = &cfg.run;
    let tol = &cfg.tolerances;
    let flat = is_flat(&cfg.family);
    let mut files = vec!["marginal.csv".to_string()];

    let limit = if flat {
        None
    } else {
        let table = limit_table(&cfg.family)?;
        let h = cfg.family.halfwidth;
        let model = limit_ctmc(&table, -h, h, run.ctmc_nodes)?;
        let x0 = nearest_node(&model, run.start_x);
        let samples = ctmc_marginal_samples(&model, x0, run.horizon, run.n_paths, sub_seed(run.seed, "marginal-limit", 0), run.workers)?;
        write_samples_csv(out.writer("marginal_limit_samples.csv")?, "x", &samples, Some(&out.preamble()))?;
        files.push("marginal_limit_samples.csv".into());
        Some(samples)
    };

    let mut rows = Vec::new();
    let mut csv = Table::new(&["eps", "ks_vs_limit", "n", "w1_vs_limit", "ks_y_uniform"]);
    for (i, &eps) in run.eps_list.iter().enumerate() {
        let family = build_family(&cfg.family, eps)?;
        let dt = run.dt.resolve(default_dt(eps));
        let seed = sub_seed(run.seed, "marginal", i as u64);
        let states = sample_terminal_states(&family, start_point(&family, cfg), run.horizon, dt, run.n_paths, seed, run.workers)?;
        let xs: Vec<f64> = states.iter().map(|s| s.x).collect();
        let fractions: Vec<f64> = states
            .iter()
            .map(|s| {
                let (lo, up) = family.walls(s.x);
                (s.y + lo) / (lo + up)
            })
            .collect();
        let (ks, w1) = match &limit {
            Some(reference) => (ks_statistic(&xs, reference)?, Some(wasserstein1(&xs, reference))),
            None => (ks_one_sample(&xs, |x| normal_cdf(x, run.start_x, run.horizon.sqrt()))?, None),
        };
        let ks_y = ks_one_sample(&fractions, |q| q.clamp(0.0, 1.0))?;

        let name = format!("marginal_samples_eps{}.csv", fmt_eps(eps));
        let mut w = out.writer(&name)?;
        {
            use std::io::Write;
            writeln!(w, "{}", out.preamble())?;
            writeln!(w, "x,y_fraction")?;
            for (x, q) in xs.iter().zip(&fractions) {
                writeln!(w, "{x},{q}")?;
            }
            w.flush()?;
        }
        files.push(name);
        csv.push(vec![fmt_eps(eps), ks.to_string(), run.n_paths.to_string(), cell(w1), ks_y.to_string()]);
        rows.push(Row { eps, dt, ks_vs_limit: ks, w1_vs_limit: w1, ks_y_uniform: ks_y, n: run.n_paths });
    }
    out.write_table("marginal.csv", &csv)?;

    let mut checks = Vec::new();
    if let Some(last) = rows.last() {
        checks.push(Check::at_most(format!("ks_vs_limit eps={}", last.eps), last.ks_vs_limit, tol.ks_max));
        checks.push(Check::at_most(format!("ks_y_uniform eps={}", last.eps), last.ks_y_uniform, tol.ks_y_max));
    }
    for w in rows.windows(2) {
        checks.push(Check::at_most(
            format!("ks nonincreasing eps={}->{}", w[0].eps, w[1].eps),
            w[1].ks_vs_limit,
            w[0].ks_vs_limit + tol.ks_noise,
        ));
    }
    let results = json!({
        "T": run.horizon,
        "start_x": run.start_x,
        "reference": if flat { "normal" } else { "ctmc" },
        "rows": rows,
    });
    CommandReport::new("marginal", out, checks, results, files).finish(out)
}
