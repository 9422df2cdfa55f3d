use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Exp1, StandardUniform};
use serde::Serialize;

use super::DiffusionError;
use crate::montecarlo::{path_rng, run_paths};
use crate::reflected::{summarize_exits, ExitObservation, ExitOutcome, ExitSide, ExitStatistics, ReflectedPathState};
use crate::scale_speed::{ScaleSpeedModel, ScaleSpeedTable};

/// Birth-death chain on a grid, absorbing at both end states.
///
/// Interior rates are `q(i → i±1) = 1 / (Δv_i |u_{i±1} - u_i|)`, the
/// off-diagonal entries of the discrete generator `D_v D_u`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CtmcModel {
    pub grid: Vec<f64>,
    pub u: Vec<f64>,
    /// `v`-measure of the midpoint cell around each node (half cells at the
    /// ends), atom included.
    pub dv: Vec<f64>,
    pub up_rate: Vec<f64>,
    pub down_rate: Vec<f64>,
    pub hold_rate: Vec<f64>,
    pub up_prob: Vec<f64>,
    pub down_prob: Vec<f64>,
    pub zero_index: usize,
}

fn check_grid(grid: &[f64]) -> Result<usize, DiffusionError> {
    if grid.len() < 3 {
        return Err(DiffusionError::InvalidInput("grid needs at least 3 points".into()));
    }
    for w in grid.windows(2) {
        if w[1] == w[0] {
            return Err(DiffusionError::DuplicateGridPoint(w[0]));
        }
        if !(w[1] > w[0]) {
            return Err(DiffusionError::NonMonotoneGrid);
        }
    }
    grid.iter().position(|&x| x == 0.0).ok_or(DiffusionError::ZeroNotOnGrid)
}

impl CtmcModel {
    /// Builds the chain from `u` on the grid and `v` at the cell edges
    /// `m_0 = x_0, m_{i+½} = (x_i + x_{i+1}) / 2, m_N = x_N`.
    pub fn from_values(grid: &[f64], u: &[f64], v_edges: &[f64]) -> Result<Self, DiffusionError> {
        let zero_index = check_grid(grid)?;
        let n = grid.len();
        if u.len() != n || v_edges.len() != n + 1 {
            return Err(DiffusionError::InvalidInput("u / v lengths do not match the grid".into()));
        }
        if let Some(i) = (1..n).find(|&i| !(u[i] > u[i - 1])) {
            return Err(DiffusionError::NonMonotoneScale(i));
        }
        let dv: Vec<f64> = (0..n).map(|i| v_edges[i + 1] - v_edges[i]).collect();
        if let Some(i) = dv.iter().position(|&d| !(d > 0.0)) {
            return Err(DiffusionError::InvalidInput(format!("non-positive speed cell at index {i}")));
        }
        let mut up_rate = vec![0.0; n];
        let mut down_rate = vec![0.0; n];
        let mut hold_rate = vec![0.0; n];
        let mut up_prob = vec![0.0; n];
        let mut down_prob = vec![0.0; n];
        for i in 1..n - 1 {
            up_rate[i] = 1.0 / (dv[i] * (u[i + 1] - u[i]));
            down_rate[i] = 1.0 / (dv[i] * (u[i] - u[i - 1]));
            hold_rate[i] = up_rate[i] + down_rate[i];
            up_prob[i] = up_rate[i] / hold_rate[i];
            down_prob[i] = 1.0 - up_prob[i];
        }
        Ok(Self { grid: grid.to_vec(), u: u.to_vec(), dv, up_rate, down_rate, hold_rate, up_prob, down_prob, zero_index })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Index of a grid point (exact match up to 1e-12 relative).
    pub fn index_of(&self, x: f64) -> Result<usize, DiffusionError> {
        let i = self.grid.partition_point(|&g| g < x);
        let tol = 1e-12 * x.abs().max(1.0);
        for j in [i.saturating_sub(1), i] {
            if j < self.grid.len() && (self.grid[j] - x).abs() <= tol {
                return Ok(j);
            }
        }
        Err(DiffusionError::NotAGridPoint(x))
    }

    /// `(L_h f)_i`, zero at the absorbing ends.
    pub fn apply_generator(&self, f: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for i in 1..n - 1 {
            let right = (f[i + 1] - f[i]) / (self.u[i + 1] - self.u[i]);
            let left = (f[i] - f[i - 1]) / (self.u[i] - self.u[i - 1]);
            out[i] = (right - left) / self.dv[i];
        }
        out
    }

    /// Row sums `Σ_j Q_ij` of the rate matrix.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.len()).map(|i| (self.down_rate[i] + self.up_rate[i]) - self.hold_rate[i]).collect()
    }

    /// Maximum relative violation of `Δv_i q(i→i+1) = Δv_{i+1} q(i+1→i)`
    /// over pairs of interior states.
    pub fn detailed_balance_defect(&self) -> f64 {
        let n = self.len();
        (1..n.saturating_sub(2))
            .map(|i| {
                let a = self.dv[i] * self.up_rate[i];
                let b = self.dv[i + 1] * self.down_rate[i + 1];
                (a - b).abs() / a.abs().max(b.abs())
            })
            .fold(0.0, f64::max)
    }

    /// Model dump: `state,x,up_prob,hold_rate,dv`.
    pub fn write_csv<W: Write>(&self, mut w: W, preamble: Option<&str>) -> io::Result<()> {
        if let Some(p) = preamble {
            writeln!(w, "{p}")?;
        }
        writeln!(w, "state,x,up_prob,hold_rate,dv")?;
        for i in 0..self.len() {
            writeln!(w, "{},{},{},{},{}", i, self.grid[i], self.up_prob[i], self.hold_rate[i], self.dv[i])?;
        }
        Ok(())
    }
}

fn cell_edges(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut e = Vec::with_capacity(n + 1);
    e.push(grid[0]);
    e.extend(grid.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    e.push(grid[n - 1]);
    e
}

/// Chain for the pair `(u, v)` of `table` on `grid`. `u` is taken from the
/// table when the grids coincide, otherwise re-evaluated from its model; `v`
/// is always evaluated at the cell edges so the atom at 0 falls in the cell
/// of the node 0.
pub fn build_ctmc(table: &ScaleSpeedTable, grid: &[f64]) -> Result<CtmcModel, DiffusionError> {
    check_grid(grid)?;
    let model = &table.model;
    let u = if table.grid == grid { table.u_values.clone() } else { model.u_at(grid)? };
    let v_edges = model.v_at(&cell_edges(grid))?;
    CtmcModel::from_values(grid, &u, &v_edges)
}

/// `n`-point grid on `[a, b]` (with `a < 0 < b`) uniform in `u` on each
/// side of 0, with 0 as a node.
pub fn scale_uniform_grid(model: &ScaleSpeedModel, a: f64, b: f64, n: usize) -> Result<Vec<f64>, DiffusionError> {
    if !(a < 0.0 && 0.0 < b) || n < 3 {
        return Err(DiffusionError::InvalidInput("need a < 0 < b and n >= 3".into()));
    }
    let ends = model.u_at(&[a, 0.0, b])?;
    let span = ends[2] - ends[0];
    let cells = n - 1;
    let left_cells = (((ends[1] - ends[0]) / span) * cells as f64).round().clamp(1.0, (cells - 1) as f64) as usize;
    let right_cells = cells - left_cells;
    let fine = (20 * n).max(4001);
    let invert = |lo: f64, hi: f64, k: usize| -> Result<Vec<f64>, DiffusionError> {
        let xs: Vec<f64> = (0..=fine).map(|i| lo + (hi - lo) * i as f64 / fine as f64).collect();
        let us = model.u_at(&xs)?;
        let (u_lo, u_hi) = (us[0], us[fine]);
        let mut out = Vec::with_capacity(k + 1);
        out.push(lo);
        for j in 1..k {
            let target = u_lo + (u_hi - u_lo) * j as f64 / k as f64;
            let i = us.partition_point(|&u| u < target).clamp(1, fine);
            let t = (target - us[i - 1]) / (us[i] - us[i - 1]);
            out.push(xs[i - 1] + t * (xs[i] - xs[i - 1]));
        }
        out.push(hi);
        Ok(out)
    };
    let mut grid = invert(a, 0.0, left_cells)?;
    grid.pop();
    grid[0] = a;
    let right = invert(0.0, b, right_cells)?;
    grid.extend(right);
    Ok(grid)
}

/// Exit probabilities and mean exit times for every state of an interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitSolution {
    pub lo_index: usize,
    pub hi_index: usize,
    pub grid: Vec<f64>,
    pub prob_right: Vec<f64>,
    pub mean_time: Vec<f64>,
}

impl ExitSolution {
    pub fn at(&self, x: f64) -> Option<(f64, f64)> {
        let i = self.grid.iter().position(|&g| (g - x).abs() <= 1e-12 * x.abs().max(1.0))?;
        Some((self.prob_right[i], self.mean_time[i]))
    }
}

/// Solves `(g_{i+1} - g_i)/Δu₊ - (g_i - g_{i-1})/Δu₋ = r_i` for the interior
/// unknowns with given end values, by the Thomas algorithm on this
/// diagonally dominant symmetric system.
fn solve_tridiagonal(u: &[f64], rhs: &[f64], g_lo: f64, g_hi: f64) -> Result<Vec<f64>, DiffusionError> {
    let n = u.len();
    let m = n - 2;
    let mut c_prime = vec![0.0; m];
    let mut d_prime = vec![0.0; m];
    for k in 0..m {
        let i = k + 1;
        let a = 1.0 / (u[i] - u[i - 1]);
        let c = 1.0 / (u[i + 1] - u[i]);
        let mut d = rhs[i];
        if i == 1 {
            d -= a * g_lo;
        }
        if i == n - 2 {
            d -= c * g_hi;
        }
        let (cp, dp) = if k == 0 { (0.0, 0.0) } else { (c_prime[k - 1], d_prime[k - 1]) };
        let sub = if k == 0 { 0.0 } else { a };
        let denom = -(a + c) - sub * cp;
        if denom == 0.0 || !denom.is_finite() {
            return Err(DiffusionError::SingularSystem(i));
        }
        c_prime[k] = c / denom;
        d_prime[k] = (d - sub * dp) / denom;
    }
    let mut g = vec![0.0; n];
    g[0] = g_lo;
    g[n - 1] = g_hi;
    let mut next = 0.0;
    for k in (0..m).rev() {
        let val = d_prime[k] - if k + 1 < m { c_prime[k] * next } else { 0.0 };
        g[k + 1] = val;
        next = val;
    }
    Ok(g)
}

fn residual(u: &[f64], rhs: &[f64], g: &[f64]) -> Vec<f64> {
    let n = u.len();
    let mut r = vec![0.0; n];
    for i in 1..n - 1 {
        let lhs = (g[i + 1] - g[i]) / (u[i + 1] - u[i]) - (g[i] - g[i - 1]) / (u[i] - u[i - 1]);
        r[i] = rhs[i] - lhs;
    }
    r
}

fn solve_refined(u: &[f64], rhs: &[f64], g_lo: f64, g_hi: f64) -> Result<Vec<f64>, DiffusionError> {
    let mut g = solve_tridiagonal(u, rhs, g_lo, g_hi)?;
    // One step of iterative refinement.
    let r = residual(u, rhs, &g);
    let corr = solve_tridiagonal(u, &r, 0.0, 0.0)?;
    for (gi, ci) in g.iter_mut().zip(&corr) {
        *gi += ci;
    }
    Ok(g)
}

/// `L_h g = -1` with zero end values (mean exit times) and `L_h g = 0` with
/// end values 0 / 1 (probability of leaving through `b`), on `[a, b]`.
pub fn exit_stats_linear_solve(model: &CtmcModel, interval: (f64, f64)) -> Result<ExitSolution, DiffusionError> {
    let lo = model.index_of(interval.0)?;
    let hi = model.index_of(interval.1)?;
    if hi < lo + 2 {
        return Err(DiffusionError::InvalidInput("interval must contain an interior state".into()));
    }
    let u = &model.u[lo..=hi];
    let rhs_time: Vec<f64> = (lo..=hi).map(|i| -model.dv[i]).collect();
    let zeros = vec![0.0; u.len()];
    let mean_time = solve_refined(u, &rhs_time, 0.0, 0.0)?;
    let prob_right = solve_refined(u, &zeros, 0.0, 1.0)?;
    Ok(ExitSolution { lo_index: lo, hi_index: hi, grid: model.grid[lo..=hi].to_vec(), prob_right, mean_time })
}

/// Exact simulation of one chain path.
pub struct CtmcPath<'a> {
    model: &'a CtmcModel,
    pub state: usize,
    pub t: f64,
}

impl<'a> CtmcPath<'a> {
    pub fn new(model: &'a CtmcModel, state: usize) -> Self {
        Self { model, state, t: 0.0 }
    }

    pub fn is_absorbed(&self) -> bool {
        self.state == 0 || self.state + 1 == self.model.len()
    }

    /// Draws the holding time at the current state and the next state;
    /// returns the holding interval `(t0, t1)` spent at the old state.
    /// Absorbed paths stay put with an infinite holding time.
    #[inline]
    pub fn jump<R: Rng + ?Sized>(&mut self, rng: &mut R) -> (usize, f64, f64) {
        let s = self.state;
        let t0 = self.t;
        if self.is_absorbed() {
            return (s, t0, f64::INFINITY);
        }
        let e: f64 = rng.sample(Exp1);
        let t1 = t0 + e / self.model.hold_rate[s];
        let coin: f64 = rng.sample(StandardUniform);
        self.state = if coin < self.model.up_prob[s] { s + 1 } else { s - 1 };
        self.t = t1;
        (s, t0, t1)
    }
}

/// Position at time `horizon` of a path started at the grid point `start`.
pub fn simulate_ctmc_marginal<R: Rng + ?Sized>(
    model: &CtmcModel,
    start: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<f64, DiffusionError> {
    let i = model.index_of(start)?;
    let mut path = CtmcPath::new(model, i);
    loop {
        let (s, _, t1) = path.jump(rng);
        if t1 > horizon {
            return Ok(model.grid[s]);
        }
    }
}

/// Absorption side and time for the interval `(a, b)` (grid points),
/// censored at `t_max`.
pub fn simulate_ctmc_exit<R: Rng + ?Sized>(
    model: &CtmcModel,
    start: f64,
    interval: (f64, f64),
    t_max: f64,
    rng: &mut R,
) -> Result<ExitOutcome, DiffusionError> {
    let (lo, hi, i) = (model.index_of(interval.0)?, model.index_of(interval.1)?, model.index_of(start)?);
    if !(lo < i && i < hi) {
        return Err(DiffusionError::InvalidInput("start must be strictly inside the interval".into()));
    }
    Ok(exit_path(model, i, lo, hi, t_max, rng))
}

fn exit_path<R: Rng + ?Sized>(model: &CtmcModel, i: usize, lo: usize, hi: usize, t_max: f64, rng: &mut R) -> ExitOutcome {
    let mut path = CtmcPath::new(model, i);
    loop {
        let (_, _, t1) = path.jump(rng);
        let state = |t: f64, j: usize| ReflectedPathState { t, ..ReflectedPathState::new(model.grid[j], 0.0) };
        if t1 > t_max {
            return ExitOutcome::Censored(state(t_max, path.state));
        }
        if path.state <= lo || path.state >= hi {
            let exit_side = if path.state >= hi { ExitSide::Right } else { ExitSide::Left };
            return ExitOutcome::Exited(ExitObservation { exit_time: t1, exit_side, final_state: state(t1, path.state) });
        }
    }
}

/// `n_paths` samples of the chain position at `horizon`.
pub fn ctmc_marginal_samples(
    model: &CtmcModel,
    start: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<f64>, DiffusionError> {
    model.index_of(start)?;
    run_paths(n_paths, workers, |k| simulate_ctmc_marginal(model, start, horizon, &mut path_rng(seed, k as u64)))
        .into_iter()
        .collect()
}

/// Exit statistics of the chain over `n_paths` paths.
pub fn ctmc_exit_statistics(
    model: &CtmcModel,
    start: f64,
    interval: (f64, f64),
    n_paths: usize,
    seed: u64,
    workers: usize,
    t_max: f64,
) -> Result<ExitStatistics, DiffusionError> {
    let (lo, hi, i) = (model.index_of(interval.0)?, model.index_of(interval.1)?, model.index_of(start)?);
    if !(lo < i && i < hi) {
        return Err(DiffusionError::InvalidInput("start must be strictly inside the interval".into()));
    }
    let outcomes = run_paths(n_paths, workers, |k| exit_path(model, i, lo, hi, t_max, &mut path_rng(seed, k as u64)));
    Ok(summarize_exits(&outcomes)?)
}

/// Single-column CSV of samples.
pub fn write_samples_csv<W: Write>(mut w: W, header: &str, samples: &[f64], preamble: Option<&str>) -> io::Result<()> {
    if let Some(p) = preamble {
        writeln!(w, "{p}")?;
    }
    writeln!(w, "{header}")?;
    for s in samples {
        writeln!(w, "{s}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BaseProfile, ExampleFamilySpec};
    use crate::scale_speed::{limiting_scale_speed, uniform_grid};

    fn limit_table(beta: f64, mu: f64, grid: &[f64]) -> ScaleSpeedTable {
        let spec = ExampleFamilySpec::new(BaseProfile::Const(1.0), beta, mu, 0.3);
        limiting_scale_speed(&spec, grid).unwrap()
    }

    #[test]
    fn flat_chain_is_second_difference() {
        let grid = uniform_grid(-1.0, 1.0, 201);
        let c = build_ctmc(&limit_table(0.0, 0.0, &grid), &grid).unwrap();
        let h = 0.01;
        for i in 1..200 {
            assert!((c.up_prob[i] - 0.5).abs() < 1e-12);
            assert!((c.hold_rate[i] * h * h - 1.0).abs() < 1e-9);
        }
        let f: Vec<f64> = grid.iter().map(|x| x * x * x).collect();
        let lf = c.apply_generator(&f);
        for i in 1..200 {
            assert!((lf[i] - 3.0 * grid[i]).abs() < 1e-8);
        }
        assert!(c.row_sums().iter().all(|&r| r == 0.0));
        assert!(c.detailed_balance_defect() < 1e-12);
    }

    #[test]
    fn rejects_bad_grids() {
        let t = limit_table(0.0, 0.0, &uniform_grid(-1.0, 1.0, 11));
        assert!(matches!(build_ctmc(&t, &[-1.0, -0.5, -0.5, 0.0, 1.0]), Err(DiffusionError::DuplicateGridPoint(_))));
        assert!(matches!(build_ctmc(&t, &[-1.0, -0.3, 0.3, 1.0]), Err(DiffusionError::ZeroNotOnGrid)));
        assert!(matches!(build_ctmc(&t, &[-1.0, 0.0, -0.5, 1.0]), Err(DiffusionError::NonMonotoneGrid)));
        let bad_u = CtmcModel::from_values(&[-1.0, 0.0, 1.0], &[0.0, 0.0, 1.0], &[0.0, 0.1, 0.2, 0.3]);
        assert!(matches!(bad_u, Err(DiffusionError::NonMonotoneScale(1))));
    }

    #[test]
    fn skew_probability_at_zero_is_two_to_one() {
        for n in [201, 2001] {
            let grid = uniform_grid(-1.0, 1.0, n);
            let c = build_ctmc(&limit_table(1.0, 0.0, &grid), &grid).unwrap();
            let z = c.zero_index;
            // Uniform x-grid: Δu₋ = 2h, Δu₊ = h.
            assert!((c.up_prob[z] / c.down_prob[z] - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sticky_hold_rate_diverges_relative_to_neighbours() {
        let ratio = |n: usize| {
            let grid = uniform_grid(-1.0, 1.0, n);
            let c = build_ctmc(&limit_table(0.0, 0.5, &grid), &grid).unwrap();
            let z = c.zero_index;
            assert!(c.hold_rate[z] < c.hold_rate[z + 1]);
            c.hold_rate[z + 1] / c.hold_rate[z]
        };
        let (r1, r2) = (ratio(201), ratio(2001));
        // Δv₀ ≈ μ + h against Δv₁ = h: the ratio grows like μ / h.
        assert!((r1 - 51.0).abs() < 1e-6 && (r2 - 501.0).abs() < 1e-6, "{r1} {r2}");
    }

    #[test]
    fn linear_solve_flat_and_sticky() {
        let grid = uniform_grid(-0.1, 0.1, 201);
        let flat = build_ctmc(&limit_table(0.0, 0.0, &grid), &grid).unwrap();
        let s = exit_stats_linear_solve(&flat, (-0.1, 0.1)).unwrap();
        for (i, &x) in s.grid.iter().enumerate() {
            assert!((s.mean_time[i] - (0.01 - x * x)).abs() < 1e-12);
            assert!((s.prob_right[i] - (x + 0.1) / 0.2).abs() < 1e-12);
        }
        let sticky = build_ctmc(&limit_table(0.0, 0.5, &grid), &grid).unwrap();
        let s = exit_stats_linear_solve(&sticky, (-0.1, 0.1)).unwrap();
        assert!((s.at(0.0).unwrap().1 - 0.06).abs() < 1e-12);
    }

    #[test]
    fn scale_uniform_grid_equalizes_u_steps() {
        let spec = ExampleFamilySpec::new(BaseProfile::Poly([1.0, 0.0, 0.5]), 1.0, 0.0, 0.3);
        let model = ScaleSpeedModel::limit(&spec);
        let g = scale_uniform_grid(&model, -0.5, 1.0, 101).unwrap();
        assert_eq!(g.len(), 101);
        assert_eq!((g[0], g[100]), (-0.5, 1.0));
        assert!(g.contains(&0.0));
        let u = model.u_at(&g).unwrap();
        let steps: Vec<f64> = u.windows(2).map(|w| w[1] - w[0]).collect();
        let (mn, mx) = steps.iter().fold((f64::MAX, 0.0f64), |(a, b), &s| (a.min(s), b.max(s)));
        assert!(mx / mn < 1.05, "{mn} {mx}");
    }

    #[test]
    fn sampled_exit_matches_solve() {
        let grid = uniform_grid(-0.2, 0.2, 81);
        let c = build_ctmc(&limit_table(1.0, 0.0, &grid), &grid).unwrap();
        let exact = exit_stats_linear_solve(&c, (-0.2, 0.2)).unwrap().at(0.0).unwrap();
        let st = ctmc_exit_statistics(&c, 0.0, (-0.2, 0.2), 4000, 11, 1, 100.0).unwrap();
        assert!(st.prob_right.z_score(exact.0).abs() < 4.0);
        assert!(st.mean_exit_time.z_score(exact.1).abs() < 4.0);
        assert!((exact.0 - 2.0 / 3.0).abs() < 1e-12);
    }
}
