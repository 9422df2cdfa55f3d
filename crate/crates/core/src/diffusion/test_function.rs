use rand::Rng;
use serde::Serialize;

use super::DiffusionError;
use crate::geometry::StepShape;
use crate::montecarlo::path_rng;
use crate::scale_speed::{GluingParameters, LimitProfile};

/// `c0 + d x + s x²/2 + a3 x³` on one side of 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SideCubic {
    pub c0: f64,
    pub d: f64,
    pub s: f64,
    pub a3: f64,
}

impl SideCubic {
    fn jet(&self, x: f64) -> [f64; 3] {
        [
            self.c0 + x * (self.d + x * (0.5 * self.s + x * self.a3)),
            self.d + x * (self.s + 3.0 * self.a3 * x),
            self.s + 6.0 * self.a3 * x,
        ]
    }
}

/// Piecewise cubic times a C³ cutoff equal to 1 on `|x| ≤ inner` and 0 on
/// `|x| ≥ outer`, built to lie in the domain of the limiting operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DomainTestFunction {
    pub left: SideCubic,
    pub right: SideCubic,
    pub inner: f64,
    pub outer: f64,
    pub profile: LimitProfile,
    pub gluing: GluingParameters,
}

const INNER: f64 = 0.15;
const OUTER: f64 = 0.45;

impl DomainTestFunction {
    fn cutoff(&self, x: f64) -> [f64; 3] {
        let a = x.abs();
        if a <= self.inner {
            return [1.0, 0.0, 0.0];
        }
        if a >= self.outer {
            return [0.0, 0.0, 0.0];
        }
        let m = 0.5 * (self.inner + self.outer);
        let w = 0.5 * (self.outer - self.inner);
        let j = StepShape::Poly.jet((a - m) / w);
        let sign = x.signum();
        [1.0 - j.value, -sign * j.d1 / w, -j.d2 / (w * w)]
    }

    /// `(f, f', f'')` at `x`; at 0 the right-hand derivatives.
    pub fn jet(&self, x: f64) -> [f64; 3] {
        let p = if x >= 0.0 { self.right.jet(x) } else { self.left.jet(x) };
        let c = self.cutoff(x);
        [p[0] * c[0], p[1] * c[0] + p[0] * c[1], p[2] * c[0] + 2.0 * p[1] * c[1] + p[0] * c[2]]
    }

    pub fn value(&self, x: f64) -> f64 {
        self.jet(x)[0]
    }

    /// `f` vanishes for `|x| ≥` this radius.
    pub fn support_radius(&self) -> f64 {
        self.outer
    }

    /// `Lf(0-)`, the value used for `Lf(0)`.
    pub fn generator_at0(&self) -> f64 {
        0.5 * self.left.s + self.profile.drift_left_at0() * self.left.d
    }

    pub fn generator_at0_right(&self) -> f64 {
        0.5 * self.right.s + self.profile.drift_right_at0() * self.right.d
    }

    /// `Lf = ½ f'' + ½ (W'/W) f'` away from 0.
    pub fn generator(&self, x: f64) -> f64 {
        if x == 0.0 {
            return self.generator_at0();
        }
        let j = self.jet(x);
        0.5 * j[2] + self.profile.drift(x) * j[1]
    }

    /// `[u'(0+)]⁻¹ f'(0+) - [u'(0-)]⁻¹ f'(0-) - (v(0+) - v(0-)) Lf(0)`.
    pub fn gluing_residual(&self) -> f64 {
        let g = &self.gluing;
        g.inv_u_right * self.right.d - g.inv_u_left * self.left.d - g.v_jump * self.generator_at0()
    }

    /// `Lf(0+) - Lf(0-)`.
    pub fn generator_jump(&self) -> f64 {
        self.generator_at0_right() - self.generator_at0()
    }

    /// Copy with `f'(0+)` shifted by `shift`, breaking the gluing condition.
    pub fn violating(&self, shift: f64) -> Self {
        let mut f = *self;
        f.right.d += shift;
        f
    }
}

/// Random domain test function: `f(0)`, `f'(0-)`, `f''(0-)` and the cubic
/// terms come from `seed`; `f'(0+)` and `f''(0+)` are solved from the gluing
/// condition and continuity of `Lf` at 0.
pub fn build_domain_test_function(
    params: &GluingParameters,
    profile: &LimitProfile,
    seed: u64,
) -> Result<DomainTestFunction, DiffusionError> {
    let (ir, il) = (params.inv_u_right, params.inv_u_left);
    if !(ir > 0.0 && il > 0.0) || !(ir + il).is_finite() {
        return Err(DiffusionError::DegenerateGluing(format!("inverse scale derivatives ({il}, {ir})")));
    }
    let (wl, wr) = (profile.weight_left_at0(), profile.weight_right_at0());
    if (ir / il - wr / wl).abs() > 1e-9 * (wr / wl) {
        return Err(DiffusionError::DegenerateGluing("parameters do not match the profile".into()));
    }
    let mut rng = path_rng(seed, u64::MAX);
    let mut draw = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let c0 = draw(0.5, 1.5);
    let dl = draw(-1.0, 1.0);
    let sl = draw(-2.0, 2.0);
    let a3l = draw(-2.0, 2.0);
    let a3r = draw(-2.0, 2.0);
    let lam = 0.5 * sl + profile.drift_left_at0() * dl;
    let dr = (il * dl + params.v_jump * lam) / ir;
    let sr = 2.0 * (lam - profile.drift_right_at0() * dr);
    let f = DomainTestFunction {
        left: SideCubic { c0, d: dl, s: sl, a3: a3l },
        right: SideCubic { c0, d: dr, s: sr, a3: a3r },
        inner: INNER,
        outer: OUTER,
        profile: *profile,
        gluing: *params,
    };
    debug_assert!(f.gluing_residual().abs() < 1e-10);
    Ok(f)
}
