//! Scale function `u` and speed measure `v` of the hat process (finite ε) and
//! of the limiting generalized diffusion, plus the gluing constants θ, p±.
//!
//! Both cases share one shape: there is a positive weight `W` with
//! `u' = 2/W` and `v' = W`, so that `D_v D_u f = ½ f'' + ½ (W'/W) f'`. For
//! finite ε the weight is `V^ε/ε`; in the limit it is `V₁` on the left and
//! `V₁ + β` on the right, with an extra atom of mass μ in `v` at 0.
//!
//! Gauge: `u(0) = 0` and `v(0-) = 0`, so `v` is right-continuous and the atom
//! shows up as `v(0) = μ`.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{BaseProfile, CrossSectionFamily, ExampleFamilySpec, GeometryError};
use crate::quadrature::{integrate_with_breaks, QuadratureError, Tolerance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScaleSpeedError {
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("grid must be strictly increasing")]
    NonMonotoneGrid,
    #[error("one-sided scale derivative at 0 must be positive (left {left}, right {right})")]
    NonPositiveDerivative { left: f64, right: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

const TABLE_TOL: f64 = 1e-9;
const HAT_TOL: f64 = 1e-8;

/// The limiting weight: `V₁(x)` for `x < 0`, `V₁(x) + β` for `x > 0`, atom μ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitProfile {
    pub v1: BaseProfile,
    pub beta: f64,
    pub mu: f64,
}

impl LimitProfile {
    pub fn from_spec(spec: &ExampleFamilySpec) -> Self {
        Self { v1: spec.v1, beta: spec.beta, mu: spec.mu }
    }

    /// Weight at `x`; at 0 the right-hand value.
    pub fn weight(&self, x: f64) -> f64 {
        self.v1.value(x) + if x >= 0.0 { self.beta } else { 0.0 }
    }

    pub fn weight_left_at0(&self) -> f64 {
        self.v1.value(0.0)
    }

    pub fn weight_right_at0(&self) -> f64 {
        self.v1.value(0.0) + self.beta
    }

    /// Drift `½ W'/W` at `x ≠ 0`; at 0 the right-hand value.
    pub fn drift(&self, x: f64) -> f64 {
        0.5 * self.v1.jet(x).d1 / self.weight(x)
    }

    pub fn drift_left_at0(&self) -> f64 {
        0.5 * self.v1.jet(0.0).d1 / self.weight_left_at0()
    }

    pub fn drift_right_at0(&self) -> f64 {
        0.5 * self.v1.jet(0.0).d1 / self.weight_right_at0()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Profile {
    Eps(CrossSectionFamily),
    Limit(LimitProfile),
}

/// Analytic description of a `(u, v)` pair. `gauge = c` represents the
/// equivalent pair `(c u, v / c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleSpeedModel {
    pub profile: Profile,
    pub gauge: f64,
}

impl ScaleSpeedModel {
    pub fn eps(family: CrossSectionFamily) -> Self {
        Self { profile: Profile::Eps(family), gauge: 1.0 }
    }

    pub fn limit(spec: &ExampleFamilySpec) -> Self {
        Self { profile: Profile::Limit(LimitProfile::from_spec(spec)), gauge: 1.0 }
    }

    pub fn regauged(mut self, c: f64) -> Self {
        self.gauge *= c;
        self
    }

    /// `W(x)`; right-continuous at 0 in the limit case.
    #[inline]
    pub fn weight(&self, x: f64) -> f64 {
        match &self.profile {
            Profile::Eps(f) => f.total(x) / f.eps(),
            Profile::Limit(p) => p.weight(x),
        }
    }

    /// Drift `½ W'/W` of the associated diffusion away from 0.
    pub fn drift(&self, x: f64) -> f64 {
        match &self.profile {
            Profile::Eps(f) => {
                let j = f.total_jet(x);
                0.5 * j.d1 / j.value
            }
            Profile::Limit(p) => p.drift(x),
        }
    }

    /// `u'(x)`.
    pub fn scale_density(&self, x: f64) -> f64 {
        2.0 * self.gauge / self.weight(x)
    }

    /// Density of the absolutely continuous part of `dv` at `x`.
    pub fn speed_density(&self, x: f64) -> f64 {
        self.weight(x) / self.gauge
    }

    /// Point masses of `dv` as `(location, mass)`.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match &self.profile {
            Profile::Limit(p) if p.mu > 0.0 => vec![(0.0, p.mu / self.gauge)],
            _ => Vec::new(),
        }
    }

    pub fn atom_mass(&self) -> f64 {
        self.atoms().iter().map(|a| a.1).sum()
    }

    /// `(u'(0-), u'(0+))`.
    pub fn scale_derivs_at0(&self) -> (f64, f64) {
        match &self.profile {
            Profile::Eps(_) => {
                let d = self.scale_density(0.0);
                (d, d)
            }
            Profile::Limit(p) => (2.0 * self.gauge / p.weight_left_at0(), 2.0 * self.gauge / p.weight_right_at0()),
        }
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.profile {
            Profile::Eps(f) => f.breakpoints(),
            Profile::Limit(_) => vec![0.0],
        }
    }

    /// Range on which the model may be evaluated.
    pub fn halfwidth(&self) -> f64 {
        match &self.profile {
            Profile::Eps(f) => f.halfwidth(),
            Profile::Limit(_) => f64::INFINITY,
        }
    }

    fn check_range(&self, x: f64) -> Result<(), ScaleSpeedError> {
        match &self.profile {
            Profile::Eps(f) => Ok(f.check_window(x)?),
            Profile::Limit(_) => Ok(()),
        }
    }

    fn segment_tol(&self, a: f64, b: f64, total_span: f64) -> Tolerance {
        Tolerance::new(TABLE_TOL * ((b - a).abs() / total_span).max(1e-6), 1e-13)
    }

    /// `u(x) = ∫₀ˣ u'`.
    pub fn u(&self, x: f64) -> Result<f64, ScaleSpeedError> {
        self.check_range(x)?;
        let brk = self.breakpoints();
        Ok(integrate_with_breaks(|s| self.scale_density(s), 0.0, x, &brk, Tolerance::new(TABLE_TOL, 1e-13))?)
    }

    /// Right-continuous `v(x)` with `v(0-) = 0`.
    pub fn v(&self, x: f64) -> Result<f64, ScaleSpeedError> {
        self.check_range(x)?;
        let brk = self.breakpoints();
        let cont = integrate_with_breaks(|s| self.speed_density(s), 0.0, x, &brk, Tolerance::new(TABLE_TOL, 1e-13))?;
        Ok(cont + self.atom_mass_up_to(x))
    }

    /// Total atom mass located in `[-∞, x]` (right-continuous), counting only
    /// atoms at nonnegative locations for `x ≥ 0` and subtracting those in
    /// `(x, 0)` for `x < 0`, consistent with `v(0-) = 0`.
    fn atom_mass_up_to(&self, x: f64) -> f64 {
        self.atoms()
            .iter()
            .map(|&(loc, m)| {
                if loc >= 0.0 && loc <= x {
                    m
                } else if loc < 0.0 && loc > x {
                    -m
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// Cumulative integral of `density` from 0 to each point of a strictly
    /// increasing list, integrating segment by segment outward from 0.
    fn cumulative(&self, points: &[f64], density: impl Fn(f64) -> f64) -> Result<Vec<f64>, ScaleSpeedError> {
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ScaleSpeedError::NonMonotoneGrid);
        }
        for &x in points {
            self.check_range(x)?;
        }
        let brk = self.breakpoints();
        let span = points.last().map(|l| l - points[0]).unwrap_or(1.0).max(1e-300);
        let mut out = vec![0.0; points.len()];
        let split = points.partition_point(|&x| x < 0.0);
        let mut acc = 0.0;
        let mut prev = 0.0;
        for i in split..points.len() {
            let x = points[i];
            acc += integrate_with_breaks(&density, prev, x, &brk, self.segment_tol(prev, x, span))?;
            out[i] = acc;
            prev = x;
        }
        acc = 0.0;
        prev = 0.0;
        for i in (0..split).rev() {
            let x = points[i];
            acc += integrate_with_breaks(&density, prev, x, &brk, self.segment_tol(prev, x, span))?;
            out[i] = acc;
            prev = x;
        }
        Ok(out)
    }

    /// `u` at each point of a strictly increasing list.
    pub fn u_at(&self, points: &[f64]) -> Result<Vec<f64>, ScaleSpeedError> {
        self.cumulative(points, |s| self.scale_density(s))
    }

    /// `v` at each point of a strictly increasing list.
    pub fn v_at(&self, points: &[f64]) -> Result<Vec<f64>, ScaleSpeedError> {
        let mut v = self.cumulative(points, |s| self.speed_density(s))?;
        for (vi, &x) in v.iter_mut().zip(points) {
            *vi += self.atom_mass_up_to(x);
        }
        Ok(v)
    }
}

/// Tabulated `(u, v)` on a grid together with the model that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleSpeedTable {
    pub grid: Vec<f64>,
    pub u_values: Vec<f64>,
    pub v_values: Vec<f64>,
    pub atom_location: f64,
    pub atom_mass: f64,
    pub u_left_deriv_at0: f64,
    pub u_right_deriv_at0: f64,
    pub model: ScaleSpeedModel,
}

impl ScaleSpeedTable {
    pub fn tabulate(model: ScaleSpeedModel, grid: &[f64]) -> Result<Self, ScaleSpeedError> {
        let u_values = model.u_at(grid)?;
        let v_values = model.v_at(grid)?;
        let (ul, ur) = model.scale_derivs_at0();
        Ok(Self {
            grid: grid.to_vec(),
            u_values,
            v_values,
            atom_location: 0.0,
            atom_mass: model.atom_mass(),
            u_left_deriv_at0: ul,
            u_right_deriv_at0: ur,
            model,
        })
    }

    /// The equivalent representation `(c u, v / c)`.
    pub fn regauged(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            u_values: self.u_values.iter().map(|u| c * u).collect(),
            v_values: self.v_values.iter().map(|v| v / c).collect(),
            atom_location: self.atom_location,
            atom_mass: self.atom_mass / c,
            u_left_deriv_at0: c * self.u_left_deriv_at0,
            u_right_deriv_at0: c * self.u_right_deriv_at0,
            model: self.model.regauged(c),
        }
    }

    /// CSV with a comment header carrying the atom and one-sided derivatives.
    pub fn write_csv<W: Write>(&self, mut w: W, preamble: Option<&str>) -> io::Result<()> {
        if let Some(p) = preamble {
            writeln!(w, "{p}")?;
        }
        writeln!(
            w,
            "# atom_location={},atom_mass={},u_left_deriv_at0={},u_right_deriv_at0={}",
            self.atom_location, self.atom_mass, self.u_left_deriv_at0, self.u_right_deriv_at0
        )?;
        writeln!(w, "x,u,v")?;
        for ((x, u), v) in self.grid.iter().zip(&self.u_values).zip(&self.v_values) {
            writeln!(w, "{x},{u},{v}")?;
        }
        Ok(())
    }
}

/// Uniform grid on `[a, b]` with `n` points.
pub fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && b > a);
    (0..n).map(|i| if i == n - 1 { b } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect()
}

pub fn compute_scale_speed_eps(
    family: &CrossSectionFamily,
    grid: &[f64],
) -> Result<ScaleSpeedTable, ScaleSpeedError> {
    ScaleSpeedTable::tabulate(ScaleSpeedModel::eps(*family), grid)
}

pub fn limiting_scale_speed(spec: &ExampleFamilySpec, grid: &[f64]) -> Result<ScaleSpeedTable, ScaleSpeedError> {
    ScaleSpeedTable::tabulate(ScaleSpeedModel::limit(spec), grid)
}

/// Gluing constants at the non-smooth point 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GluingParameters {
    pub inv_u_right: f64,
    pub inv_u_left: f64,
    pub v_jump: f64,
    pub theta: f64,
    pub p_plus: f64,
    pub p_minus: f64,
}

pub fn gluing_parameters(table: &ScaleSpeedTable) -> Result<GluingParameters, ScaleSpeedError> {
    let (left, right) = (table.u_left_deriv_at0, table.u_right_deriv_at0);
    if !(left > 0.0 && right > 0.0) || !left.is_finite() || !right.is_finite() {
        return Err(ScaleSpeedError::NonPositiveDerivative { left, right });
    }
    let inv_u_right = 1.0 / right;
    let inv_u_left = 1.0 / left;
    let total = inv_u_right + inv_u_left;
    let p_plus = inv_u_right / total;
    Ok(GluingParameters {
        inv_u_right,
        inv_u_left,
        v_jump: table.atom_mass,
        theta: table.atom_mass / total,
        p_plus,
        p_minus: 1.0 - p_plus,
    })
}

/// Expected exit time of the hat process from `(-κ, κ)` started at `x`,
/// by nested quadrature of the closed-form solution of
/// `½φ'' + ½(V'/V)φ' = -1`, `φ(±κ) = 0`.
pub fn hat_exit_time_formula(family: &CrossSectionFamily, kappa: f64, x: f64) -> Result<f64, ScaleSpeedError> {
    if !(kappa > 0.0 && kappa <= family.halfwidth()) {
        return Err(ScaleSpeedError::InvalidArgument(format!("kappa = {kappa} outside (0, window]")));
    }
    if x.abs() > kappa {
        return Err(ScaleSpeedError::InvalidArgument(format!("|x| = {} exceeds kappa", x.abs())));
    }
    if x.abs() == kappa {
        return Ok(0.0);
    }
    let eps = family.eps();
    let w = |y: f64| family.total(y) / eps;
    let brk = family.breakpoints();
    // A(y) = ∫_{-κ}^{y} W, evaluated incrementally from the nearest cached node.
    let inner_tol = Tolerance::new(1e-13, 1e-12);
    let mass = |y: f64| integrate_with_breaks(w, -kappa, y, &brk, inner_tol);
    let err_cell = std::cell::Cell::new(None::<QuadratureError>);
    let outer = |y: f64| match mass(y) {
        Ok(a) => 2.0 * a / w(y),
        Err(e) => {
            err_cell.set(Some(e));
            0.0
        }
    };
    let tol = Tolerance::new(0.25 * HAT_TOL, 1e-12);
    let inv = |y: f64| 1.0 / w(y);
    let i1_full = integrate_with_breaks(outer, -kappa, kappa, &brk, tol)?;
    let i2_full = integrate_with_breaks(inv, -kappa, kappa, &brk, tol)?;
    let i1_x = integrate_with_breaks(outer, -kappa, x, &brk, tol)?;
    let i2_x = integrate_with_breaks(inv, -kappa, x, &brk, tol)?;
    if let Some(e) = err_cell.take() {
        return Err(e.into());
    }
    Ok(-i1_x + i1_full / i2_full * i2_x)
}

/// Sup-distance between a finite-ε table and its limit on grid points with
/// `|x| ≥ exclude`. `u` is compared directly; `v` up to an additive constant
/// (increments from the first admissible point), since the two tables fix the
/// additive freedom on opposite sides of the atom.
pub fn table_discrepancy(
    eps_table: &ScaleSpeedTable,
    limit_table: &ScaleSpeedTable,
    exclude: f64,
) -> Result<(f64, f64), ScaleSpeedError> {
    if eps_table.grid != limit_table.grid {
        return Err(ScaleSpeedError::InvalidArgument("tables must share a grid".into()));
    }
    let idx: Vec<usize> = (0..eps_table.grid.len()).filter(|&i| eps_table.grid[i].abs() >= exclude).collect();
    let Some(&first) = idx.first() else {
        return Ok((0.0, 0.0));
    };
    let mut u_err: f64 = 0.0;
    let mut v_err: f64 = 0.0;
    for &i in &idx {
        u_err = u_err.max((eps_table.u_values[i] - limit_table.u_values[i]).abs());
        let de = eps_table.v_values[i] - eps_table.v_values[first];
        let dl = limit_table.v_values[i] - limit_table.v_values[first];
        v_err = v_err.max((de - dl).abs());
    }
    Ok((u_err, v_err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BaseProfile;

    fn grid() -> Vec<f64> {
        uniform_grid(-1.0, 1.0, 201)
    }

    #[test]
    fn flat_tube_scale_speed() {
        let fam = CrossSectionFamily::flat(1.0, 0.05).unwrap();
        let t = compute_scale_speed_eps(&fam, &grid()).unwrap();
        for ((x, u), v) in t.grid.iter().zip(&t.u_values).zip(&t.v_values) {
            assert!((u - 2.0 * x).abs() < 1e-12);
            assert!((v - x).abs() < 1e-12);
        }
        assert_eq!(t.atom_mass, 0.0);
    }

    #[test]
    fn doubled_tube_scale_speed() {
        let fam = CrossSectionFamily::flat(2.0, 0.001).unwrap();
        let t = compute_scale_speed_eps(&fam, &grid()).unwrap();
        for ((x, u), v) in t.grid.iter().zip(&t.u_values).zip(&t.v_values) {
            assert!((u - x).abs() < 1e-12);
            assert!((v - 2.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn limit_tables() {
        let flat = ExampleFamilySpec::flat(1.0);
        let t = limiting_scale_speed(&flat, &grid()).unwrap();
        assert!(t.grid.iter().zip(&t.u_values).all(|(x, u)| (u - 2.0 * x).abs() < 1e-12));
        assert!(t.grid.iter().zip(&t.v_values).all(|(x, v)| (v - x).abs() < 1e-12));
        assert_eq!(t.atom_mass, 0.0);

        let skew = ExampleFamilySpec::new(BaseProfile::Const(1.0), 1.0, 0.0, 0.3);
        let t = limiting_scale_speed(&skew, &grid()).unwrap();
        assert_eq!((t.u_left_deriv_at0, t.u_right_deriv_at0), (2.0, 1.0));

        let sticky = ExampleFamilySpec::new(BaseProfile::Const(1.0), 0.0, 0.5, 0.3);
        let t = limiting_scale_speed(&sticky, &grid()).unwrap();
        assert_eq!(t.atom_mass, 0.5);
        let i0 = t.grid.iter().position(|&x| x == 0.0).unwrap();
        assert_eq!(t.v_values[i0], 0.5);
        assert!((t.v_values[i0 - 1] + 0.01).abs() < 1e-12);
    }

    #[test]
    fn gluing_examples() {
        let g = |spec: ExampleFamilySpec| {
            gluing_parameters(&limiting_scale_speed(&spec, &[-0.5, 0.0, 0.5]).unwrap()).unwrap()
        };
        let skew = g(ExampleFamilySpec::new(BaseProfile::Const(1.0), 1.0, 0.0, 0.3));
        assert!((skew.p_plus - 2.0 / 3.0).abs() < 1e-15 && (skew.p_minus - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(skew.theta, 0.0);
        let sticky = g(ExampleFamilySpec::new(BaseProfile::Const(1.0), 0.0, 0.5, 0.3));
        assert_eq!((sticky.theta, sticky.p_plus, sticky.p_minus), (0.5, 0.5, 0.5));
        let wide = g(ExampleFamilySpec::flat(2.0));
        assert_eq!((wide.theta, wide.p_plus, wide.p_minus), (0.0, 0.5, 0.5));
    }

    #[test]
    fn gluing_rejects_bad_derivatives() {
        let mut t = limiting_scale_speed(&ExampleFamilySpec::flat(1.0), &[0.0, 0.5]).unwrap();
        t.u_right_deriv_at0 = 0.0;
        assert!(matches!(gluing_parameters(&t), Err(ScaleSpeedError::NonPositiveDerivative { .. })));
    }

    #[test]
    fn gauge_leaves_gluing_unchanged() {
        let spec = ExampleFamilySpec::new(BaseProfile::Const(1.3), 0.7, 0.4, 0.3);
        let t = limiting_scale_speed(&spec, &[-0.5, 0.0, 0.5]).unwrap();
        let a = gluing_parameters(&t).unwrap();
        let b = gluing_parameters(&t.regauged(3.7)).unwrap();
        assert!((a.theta - b.theta).abs() < 1e-14);
        assert!((a.p_plus - b.p_plus).abs() < 1e-15);
    }

    #[test]
    fn hat_exit_time_flat() {
        let fam = CrossSectionFamily::flat(1.0, 0.01).unwrap();
        let v0 = hat_exit_time_formula(&fam, 0.1, 0.0).unwrap();
        assert!((v0 - 0.01).abs() < 1e-10, "{v0}");
        let v1 = hat_exit_time_formula(&fam, 0.1, 0.05).unwrap();
        assert!((v1 - 0.0075).abs() < 1e-10, "{v1}");
        assert_eq!(hat_exit_time_formula(&fam, 0.1, 0.1).unwrap(), 0.0);
        assert!(hat_exit_time_formula(&fam, 0.1, 0.2).is_err());
    }

    #[test]
    fn hat_exit_time_vanishes_at_ends_and_is_positive_inside() {
        let spec = ExampleFamilySpec::new(BaseProfile::Poly([1.0, 0.3, 0.5]), 1.0, 0.3, 0.3).with_delta_scale(0.1);
        let fam = CrossSectionFamily::build(spec, 0.01).unwrap();
        let k = 0.2;
        let near = hat_exit_time_formula(&fam, k, k - 1e-12).unwrap();
        assert!(near.abs() < 1e-8);
        let near_left = hat_exit_time_formula(&fam, k, -k + 1e-12).unwrap();
        assert!(near_left.abs() < 1e-8);
        for x in [-0.15, -0.05, 0.0, 0.07, 0.19] {
            assert!(hat_exit_time_formula(&fam, k, x).unwrap() > 0.0);
        }
    }
}
