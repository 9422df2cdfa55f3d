//! `½Δφ = -1` on `{|x| < κ} ∩ D^ε`, `φ = 0` at `x = ±κ`, `∂φ/∂n = 0` on the
//! walls, on the boundary-fitted coordinates `ξ = x`,
//! `η = (y + V^l(x)) / V(x) ∈ [0, 1]`. In these coordinates
//!
//! `φ_xx + φ_yy = Φ_ξξ + 2η_x Φ_ξη + (η_x² + V⁻²) Φ_ηη + η_xx Φ_η`
//!
//! with `η_x = (V^l' - η V')/V` and `η_xx = (V^l'' - η V'' - 2 η_x V')/V`. The
//! Neumann condition becomes `Φ_η = c(ξ) Φ_ξ` on each wall, with
//! `c = V V^u'/(1 + V^u'²)` on the upper and `c = -V V^l'/(1 + V^l'²)` on the
//! lower wall, imposed through ghost rows.

use std::io::{self, Write};

use serde::Serialize;

use super::OracleError;
use crate::geometry::CrossSectionFamily;

pub const MAX_NX: usize = 513;
pub const MAX_NY: usize = 65;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdOptions {
    pub residual_tol: f64,
    pub max_refinements: usize,
    /// Largest admissible `|η_x| Δξ / Δη` before the slope warning is raised.
    pub max_shift: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self { residual_tol: 1e-8, max_refinements: 5, max_shift: 1.0 }
    }
}

/// Exit-time field on the `nx × ny` mapped grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdField {
    pub xs: Vec<f64>,
    pub etas: Vec<f64>,
    /// Row-major in `x`: `values[i * ny + j]`.
    pub values: Vec<f64>,
    /// Normwise backward error `‖b - Ax‖∞ / (‖A‖∞ ‖x‖∞ + ‖b‖∞)` of the
    /// discrete system.
    pub residual: f64,
    /// `max |η_x| Δξ / Δη` over the grid.
    pub shift: f64,
    /// Set when `shift` exceeds [`FdOptions::max_shift`]; the ghost-point
    /// scheme is then outside its validity range.
    pub slope_warning: bool,
    pub max_wall_slope: f64,
    #[serde(skip)]
    family: CrossSectionFamily,
}

impl FdField {
    pub fn nx(&self) -> usize {
        self.xs.len()
    }

    pub fn ny(&self) -> usize {
        self.etas.len()
    }

    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ny() + j]
    }

    /// Bilinear interpolation at `x` and cross-section fraction `η`.
    pub fn value_at(&self, x: f64, eta: f64) -> f64 {
        let (nx, ny) = (self.nx(), self.ny());
        let fx = ((x - self.xs[0]) / (self.xs[nx - 1] - self.xs[0]) * (nx - 1) as f64).clamp(0.0, (nx - 1) as f64);
        let fy = (eta.clamp(0.0, 1.0) * (ny - 1) as f64).clamp(0.0, (ny - 1) as f64);
        let (i, j) = ((fx.floor() as usize).min(nx - 2), (fy.floor() as usize).min(ny - 2));
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let v = |a: usize, b: usize| self.node(a, b);
        (1.0 - tx) * ((1.0 - ty) * v(i, j) + ty * v(i, j + 1)) + tx * ((1.0 - ty) * v(i + 1, j) + ty * v(i + 1, j + 1))
    }

    /// Value at the mid-point of the cross-section at `x`.
    pub fn value_at_midline(&self, x: f64) -> f64 {
        self.value_at(x, 0.5)
    }

    /// Value at the planar point `(x, y)`.
    pub fn value_at_point(&self, x: f64, y: f64) -> f64 {
        let (lo, up) = self.family.walls(x);
        self.value_at(x, (y + lo) / (lo + up))
    }

    pub fn write_csv<W: Write>(&self, mut w: W, preamble: Option<&str>) -> io::Result<()> {
        if let Some(p) = preamble {
            writeln!(w, "{p}")?;
        }
        writeln!(w, "x,y_fraction,value")?;
        for (i, x) in self.xs.iter().enumerate() {
            for (j, e) in self.etas.iter().enumerate() {
                writeln!(w, "{x},{e},{}", self.node(i, j))?;
            }
        }
        Ok(())
    }
}

/// Sparse rows of the discrete operator, for residuals.
struct Stencil {
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
}

impl Stencil {
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(row, b)| b - row.iter().map(|&(c, a)| a * x[c]).sum::<f64>())
            .collect()
    }
}

/// Banded LU with partial pivoting (column-major band storage: entry
/// `(i, j)` at `j * w + (i + kl + ku - j)`).
struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    fn width(kl: usize, ku: usize) -> usize {
        2 * kl + ku + 1
    }

    fn factor(stencil: &Stencil, kl: usize, ku: usize) -> Result<Self, OracleError> {
        let n = stencil.rows.len();
        let w = Self::width(kl, ku);
        let mut ab = vec![0.0; n * w];
        let idx = |i: usize, j: usize| j * w + (i + kl + ku - j);
        for (i, row) in stencil.rows.iter().enumerate() {
            for &(j, a) in row {
                ab[idx(i, j)] += a;
            }
        }
        let mut piv = vec![0; n];
        for j in 0..n {
            let last = (j + kl).min(n - 1);
            let mut p = j;
            let mut best = ab[idx(j, j)].abs();
            for i in j + 1..=last {
                let a = ab[idx(i, j)].abs();
                if a > best {
                    best = a;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(OracleError::NotConverged { residual: f64::INFINITY });
            }
            piv[j] = p;
            let col_end = (j + kl + ku).min(n - 1);
            if p != j {
                for c in j..=col_end {
                    ab.swap(idx(j, c), idx(p, c));
                }
            }
            let pivot = ab[idx(j, j)];
            for i in j + 1..=last {
                let l = ab[idx(i, j)] / pivot;
                ab[idx(i, j)] = l;
                if l != 0.0 {
                    for c in j + 1..=col_end {
                        ab[idx(i, c)] -= l * ab[idx(j, c)];
                    }
                }
            }
        }
        Ok(Self { n, kl, ku, ab, piv })
    }

    fn solve(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let w = Self::width(kl, ku);
        let idx = |i: usize, j: usize| j * w + (i + kl + ku - j);
        for j in 0..n {
            b.swap(j, self.piv[j]);
            let bj = b[j];
            for i in j + 1..=(j + kl).min(n - 1) {
                b[i] -= self.ab[idx(i, j)] * bj;
            }
        }
        for j in (0..n).rev() {
            let mut s = b[j];
            for c in j + 1..=(j + kl + ku).min(n - 1) {
                s -= self.ab[idx(j, c)] * b[c];
            }
            b[j] = s / self.ab[idx(j, j)];
        }
    }
}

/// Mean exit time of the planar reflected process from `{|x| < κ}`.
pub fn fd_strip_exit_time(
    family: &CrossSectionFamily,
    kappa: f64,
    nx: usize,
    ny: usize,
    opts: FdOptions,
) -> Result<FdField, OracleError> {
    if !(kappa > 0.0 && kappa <= family.halfwidth()) {
        return Err(OracleError::InvalidInput(format!("kappa = {kappa} outside (0, window]")));
    }
    if !(3..=MAX_NX).contains(&nx) || !(16..=MAX_NY).contains(&ny) {
        return Err(OracleError::InvalidInput(format!(
            "grid {nx}×{ny} outside 3..={MAX_NX} × 16..={MAX_NY}"
        )));
    }
    let hx = 2.0 * kappa / (nx - 1) as f64;
    let he = 1.0 / (ny - 1) as f64;
    let xs: Vec<f64> = (0..nx).map(|i| -kappa + hx * i as f64).collect();
    let etas: Vec<f64> = (0..ny).map(|j| he * j as f64).collect();
    let frac = family.spec().split.lower_fraction;
    let m = nx - 2;
    let n = m * ny;
    let unknown = |i: usize, j: usize| -> Option<usize> {
        if i == 0 || i == nx - 1 {
            None
        } else {
            Some((i - 1) * ny + j)
        }
    };

    let mut rows = vec![Vec::with_capacity(9); n];
    let rhs = vec![-2.0; n];
    let mut shift: f64 = 0.0;
    let mut max_wall_slope: f64 = 0.0;
    let push = |row: &mut Vec<(usize, f64)>, i: usize, j: usize, a: f64| {
        if let Some(c) = unknown(i, j) {
            row.push((c, a));
        }
    };
    for i in 1..nx - 1 {
        let x = xs[i];
        let v = family.total_jet(x);
        let (vl1, vl2) = (frac * v.d1, frac * v.d2);
        let (vu1, vu2) = ((1.0 - frac) * v.d1, (1.0 - frac) * v.d2);
        max_wall_slope = max_wall_slope.max(vl1.abs()).max(vu1.abs());
        for j in 0..ny {
            let eta = etas[j];
            let ex = (vl1 - eta * v.d1) / v.value;
            let exx = (vl2 - eta * v.d2 - 2.0 * ex * v.d1) / v.value;
            shift = shift.max(ex.abs() * hx / he);
            let cyy = ex * ex + 1.0 / (v.value * v.value);
            let k = (i - 1) * ny + j;
            let row = &mut rows[k];
            // Φ_ξξ
            push(row, i - 1, j, 1.0 / (hx * hx));
            push(row, i, j, -2.0 / (hx * hx));
            push(row, i + 1, j, 1.0 / (hx * hx));
            if j > 0 && j < ny - 1 {
                push(row, i, j - 1, cyy / (he * he) - exx / (2.0 * he));
                push(row, i, j, -2.0 * cyy / (he * he));
                push(row, i, j + 1, cyy / (he * he) + exx / (2.0 * he));
                let cx = 2.0 * ex / (4.0 * hx * he);
                push(row, i + 1, j + 1, cx);
                push(row, i + 1, j - 1, -cx);
                push(row, i - 1, j + 1, -cx);
                push(row, i - 1, j - 1, cx);
            } else {
                // Wall row: Φ_η = c Φ_ξ, Φ_ξη = c' Φ_ξ + c Φ_ξξ.
                let (s, s1, sign, inward) = if j == 0 { (vl1, vl2, -1.0, 1usize) } else { (vu1, vu2, 1.0, ny - 2) };
                let q = 1.0 + s * s;
                let c = sign * v.value * s / q;
                let c1 = sign * (v.d1 * s / q + v.value * s1 * (1.0 - s * s) / (q * q));
                // Coefficient of Φ_ξ: from η_xx Φ_η, 2η_x c' Φ_ξ and the ghost
                // term of Φ_ηη.
                let ghost = if j == 0 { -2.0 / he } else { 2.0 / he };
                let a_xi = exx * c + 2.0 * ex * c1 + cyy * ghost * c;
                let a_xixi = 2.0 * ex * c;
                push(row, i - 1, j, -a_xi / (2.0 * hx) + a_xixi / (hx * hx));
                push(row, i, j, -2.0 * a_xixi / (hx * hx));
                push(row, i + 1, j, a_xi / (2.0 * hx) + a_xixi / (hx * hx));
                push(row, i, j, -2.0 * cyy / (he * he));
                push(row, i, inward, 2.0 * cyy / (he * he));
            }
        }
    }
    let stencil = Stencil { rows, rhs };
    let kl = ny + 1;
    let lu = BandLu::factor(&stencil, kl, kl)?;
    let mut x = stencil.rhs.clone();
    lu.solve(&mut x);
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let a_norm = stencil.rows.iter().map(|row| row.iter().map(|e| e.1.abs()).sum::<f64>()).fold(0.0, f64::max);
    let b_norm = norm(&stencil.rhs);
    let backward = |r: &[f64], x: &[f64]| norm(r) / (a_norm * norm(x) + b_norm);
    let mut res = stencil.residual(&x);
    let mut residual = backward(&res, &x);
    for _ in 0..opts.max_refinements {
        if residual <= opts.residual_tol {
            break;
        }
        lu.solve(&mut res);
        for (xi, d) in x.iter_mut().zip(&res) {
            *xi += d;
        }
        res = stencil.residual(&x);
        residual = backward(&res, &x);
    }
    if !(residual <= opts.residual_tol) {
        return Err(OracleError::NotConverged { residual });
    }
    let mut values = vec![0.0; nx * ny];
    for i in 1..nx - 1 {
        for j in 0..ny {
            values[i * ny + j] = x[(i - 1) * ny + j];
        }
    }
    Ok(FdField {
        xs,
        etas,
        values,
        residual,
        shift,
        slope_warning: shift > opts.max_shift,
        max_wall_slope,
        family: *family,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BaseProfile, ExampleFamilySpec, WallSplit};
    use crate::scale_speed::hat_exit_time_formula;

    #[test]
    fn flat_tube_is_parabola() {
        let fam = CrossSectionFamily::flat(1.0, 0.02).unwrap();
        let f = fd_strip_exit_time(&fam, 0.1, 257, 33, FdOptions::default()).unwrap();
        for i in 0..f.nx() {
            let x = f.xs[i];
            for j in 0..f.ny() {
                assert!((f.node(i, j) - (0.01 - x * x)).abs() < 1e-9);
            }
        }
        assert!(!f.slope_warning);
        assert!(f.residual <= 1e-8);
    }

    #[test]
    fn slowly_varying_tube_matches_hat_formula() {
        // V = ε(1 + x²/2): the planar exit time is the hat-process one up to
        // O(ε²) corrections.
        let spec = ExampleFamilySpec::new(BaseProfile::Poly([1.0, 0.0, 0.5]), 0.0, 0.0, 0.3)
            .with_split(WallSplit::SYMMETRIC);
        let fam = CrossSectionFamily::build(spec, 0.02).unwrap();
        let f = fd_strip_exit_time(&fam, 0.2, 129, 17, FdOptions::default()).unwrap();
        for x in [-0.1, 0.0, 0.05] {
            let hat = hat_exit_time_formula(&fam, 0.2, x).unwrap();
            let fd = f.value_at_midline(x);
            assert!((fd - hat).abs() < 1e-4 * hat.max(1e-3) + 2e-6, "x={x}: {fd} vs {hat}");
        }
    }

    #[test]
    fn rejects_oversized_grid() {
        let fam = CrossSectionFamily::flat(1.0, 0.02).unwrap();
        assert!(fd_strip_exit_time(&fam, 0.1, 1025, 33, FdOptions::default()).is_err());
        assert!(fd_strip_exit_time(&fam, 0.1, 65, 8, FdOptions::default()).is_err());
    }

    #[test]
    fn csv_has_one_line_per_node() {
        let fam = CrossSectionFamily::flat(1.0, 0.02).unwrap();
        let f = fd_strip_exit_time(&fam, 0.1, 9, 16, FdOptions::default()).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf, Some("# test")).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 2 + 9 * 16);
        assert!((f.value_at_point(0.0, 0.0) - 0.01).abs() < 1e-9);
    }
}
