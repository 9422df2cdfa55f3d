use super::OracleError;
use crate::quadrature::{integrate_with_breaks, Tolerance};
use crate::scale_speed::{ScaleSpeedError, ScaleSpeedTable};

const TOL: f64 = 1e-9;

/// Solution at `x` of `D_v D_u g = -ψ` on `(a, b)` with `g(a) = φ_a`,
/// `g(b) = φ_b`:
///
/// `g(x) = (u(b)-u(x))/(u(b)-u(a)) [φ_a + ∫_a^x (u(y)-u(a)) ψ dv]
///       + (u(x)-u(a))/(u(b)-u(a)) [φ_b + ∫_x^b (u(b)-u(y)) ψ dv]`.
///
/// The `dv` integrals split at the breakpoints of the model and add the
/// atoms explicitly, with right-continuous `v` (an atom at `x` itself is
/// counted in the left integral; both weights agree there).
pub fn green_bvp_solve(
    table: &ScaleSpeedTable,
    a: f64,
    b: f64,
    x: f64,
    psi: impl Fn(f64) -> f64,
    phi_a: f64,
    phi_b: f64,
) -> Result<f64, OracleError> {
    if !(a < x && x < b) {
        return Err(OracleError::OutsideInterval { x, a, b });
    }
    if let (Some(lo), Some(hi)) = (table.grid.first(), table.grid.last()) {
        if a < *lo || b > *hi {
            return Err(OracleError::InvalidInput(format!("[{a}, {b}] exceeds the table range [{lo}, {hi}]")));
        }
    }
    let model = &table.model;
    let brk = model.breakpoints();
    let tol = Tolerance::new(TOL, 1e-12);
    let u = |y: f64| model.u(y);
    let (ua, ub, ux) = (u(a)?, u(b)?, u(x)?);
    let span = ub - ua;
    if !(span > 0.0) {
        return Err(OracleError::InvalidInput("u(b) <= u(a)".into()));
    }

    // u(y) by quadrature from the nearer of the cached endpoints.
    let err = std::cell::Cell::new(None);
    let u_from = |base: f64, ubase: f64, y: f64| match integrate_with_breaks(|s| model.scale_density(s), base, y, &brk, tol) {
        Ok(d) => ubase + d,
        Err(e) => {
            err.set(Some(e));
            0.0
        }
    };
    let left = integrate_with_breaks(|y| (u_from(a, ua, y) - ua) * psi(y) * model.speed_density(y), a, x, &brk, tol).map_err(ScaleSpeedError::from)?;
    let right = integrate_with_breaks(|y| (ub - u_from(b, ub, y)) * psi(y) * model.speed_density(y), x, b, &brk, tol).map_err(ScaleSpeedError::from)?;
    if let Some(e) = err.take() {
        return Err(ScaleSpeedError::from(e).into());
    }
    let (mut left, mut right) = (left, right);
    for (loc, m) in model.atoms() {
        if a < loc && loc <= x {
            left += (u(loc)? - ua) * psi(loc) * m;
        } else if x < loc && loc < b {
            right += (ub - u(loc)?) * psi(loc) * m;
        }
    }
    Ok((ub - ux) / span * (phi_a + left) + (ux - ua) / span * (phi_b + right))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BaseProfile, ExampleFamilySpec};
    use crate::scale_speed::{limiting_scale_speed, uniform_grid};

    fn table(v1: BaseProfile, beta: f64, mu: f64) -> ScaleSpeedTable {
        let spec = ExampleFamilySpec::new(v1, beta, mu, 0.3);
        limiting_scale_speed(&spec, &uniform_grid(-1.0, 1.0, 21)).unwrap()
    }

    #[test]
    fn harmonic_case_is_scale_ratio() {
        let t = table(BaseProfile::Const(1.0), 1.0, 0.3);
        for x in [-0.15, -0.05, 0.0, 0.1] {
            let g = green_bvp_solve(&t, -0.2, 0.2, x, |_| 0.0, 0.0, 1.0).unwrap();
            let u = |y: f64| t.model.u(y).unwrap();
            let expect = (u(x) - u(-0.2)) / (u(0.2) - u(-0.2));
            assert!((g - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_and_sticky_exit_times() {
        let flat = table(BaseProfile::Const(1.0), 0.0, 0.0);
        let g = green_bvp_solve(&flat, -0.1, 0.1, 0.0, |_| 1.0, 0.0, 0.0).unwrap();
        assert!((g - 0.01).abs() < 1e-10);
        let g = green_bvp_solve(&flat, -0.1, 0.1, 0.05, |_| 1.0, 0.0, 0.0).unwrap();
        assert!((g - 0.0075).abs() < 1e-10);

        let sticky = table(BaseProfile::Const(1.0), 0.0, 0.5);
        let g = green_bvp_solve(&sticky, -0.1, 0.1, 0.0, |_| 1.0, 0.0, 0.0).unwrap();
        assert!((g - 0.06).abs() < 1e-9, "{g}");
    }

    #[test]
    fn linear_in_source_and_boundary_data() {
        let t = table(BaseProfile::Poly([1.0, 0.2, 0.5]), 1.0, 0.3);
        let solve = |psi: &dyn Fn(f64) -> f64, pa: f64, pb: f64| green_bvp_solve(&t, -0.3, 0.4, 0.1, psi, pa, pb).unwrap();
        let g1 = solve(&|y| 1.0 + y, 0.2, 0.0);
        let g2 = solve(&|y| y * y, 0.0, -0.7);
        let g12 = solve(&|y| 1.0 + y + 2.0 * y * y, 0.2, -1.4);
        assert!((g12 - (g1 + 2.0 * g2)).abs() < 1e-9);
    }

    #[test]
    fn rejects_points_outside() {
        let t = table(BaseProfile::Const(1.0), 0.0, 0.0);
        assert!(matches!(
            green_bvp_solve(&t, -0.1, 0.1, 0.1, |_| 1.0, 0.0, 0.0),
            Err(OracleError::OutsideInterval { .. })
        ));
    }
}
