//! Narrow tube domains `D^ε = {(x, y) : -V^l(x) ≤ y ≤ V^u(x)}`.
//!
//! The only family built here is the three-term construction
//! `V^ε(x) = ε V₁(x) + ε β S(x/δ) + (ε/δ) μ B(x/δ)` where `S` is a smoothed
//! unit step and `B` a unit-mass bump. All derivatives up to third order are
//! closed-form, since the growth quantity ξ^ε needs them exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("x = {x} lies outside the validity window |x| <= {halfwidth}")]
    OutsideWindow { x: f64, halfwidth: f64 },
    #[error("width parameter eps = {0} must lie in (0, 1)")]
    InvalidEps(f64),
    #[error("delta exponent r = {0} must lie in (0, 1/3)")]
    InvalidDeltaExponent(f64),
    #[error("base profile is not strictly positive on the window (min {0})")]
    NonPositiveBase(f64),
    #[error("invalid family parameter: {0}")]
    InvalidParameter(String),
}

/// Value and first three derivatives of a scalar function at one point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Jet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl Jet {
    pub const ZERO: Jet = Jet { value: 0.0, d1: 0.0, d2: 0.0, d3: 0.0 };

    pub fn scale(self, c: f64) -> Jet {
        Jet { value: c * self.value, d1: c * self.d1, d2: c * self.d2, d3: c * self.d3 }
    }

    /// Jet of `g(x / delta)` given the jet of `g` at `x / delta`.
    fn rescale_argument(self, delta: f64) -> Jet {
        Jet {
            value: self.value,
            d1: self.d1 / delta,
            d2: self.d2 / (delta * delta),
            d3: self.d3 / (delta * delta * delta),
        }
    }
}

impl std::ops::Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet { value: self.value + o.value, d1: self.d1 + o.d1, d2: self.d2 + o.d2, d3: self.d3 + o.d3 }
    }
}

/// The smooth, strictly positive leading profile `V₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BaseProfile {
    Const(f64),
    /// `c0 + c1 x + c2 x²`
    Poly([f64; 3]),
}

impl BaseProfile {
    pub fn jet(&self, x: f64) -> Jet {
        match *self {
            BaseProfile::Const(c) => Jet { value: c, ..Jet::ZERO },
            BaseProfile::Poly([c0, c1, c2]) => Jet {
                value: c0 + x * (c1 + x * c2),
                d1: c1 + 2.0 * c2 * x,
                d2: 2.0 * c2,
                d3: 0.0,
            },
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.jet(x).value
    }

    /// Minimum over `[-h, h]`.
    pub fn min_on(&self, h: f64) -> f64 {
        match *self {
            BaseProfile::Const(c) => c,
            BaseProfile::Poly([_, c1, c2]) => {
                let mut m = self.value(-h).min(self.value(h));
                if c2 != 0.0 {
                    let xc = -c1 / (2.0 * c2);
                    if xc.abs() <= h {
                        m = m.min(self.value(xc));
                    }
                }
                m
            }
        }
    }
}

/// Smoothed unit step `S`, rising from 0 (s → -∞) to 1 (s → +∞).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepShape {
    /// `(1 + tanh s) / 2`
    Tanh,
    /// C³ septic smoothstep on `[-1, 1]`, exactly 0 / 1 outside.
    Poly,
}

impl StepShape {
    pub fn jet(self, s: f64) -> Jet {
        match self {
            StepShape::Tanh => {
                let t = s.tanh();
                let sech2 = 1.0 - t * t;
                Jet {
                    value: 0.5 * (1.0 + t),
                    d1: 0.5 * sech2,
                    d2: -t * sech2,
                    d3: sech2 * (3.0 * t * t - 1.0),
                }
            }
            StepShape::Poly => {
                if s <= -1.0 {
                    return Jet::ZERO;
                }
                if s >= 1.0 {
                    return Jet { value: 1.0, ..Jet::ZERO };
                }
                // p(t) = 35t⁴ - 84t⁵ + 70t⁶ - 20t⁷ with t = (s + 1) / 2.
                let t = 0.5 * (s + 1.0);
                let t2 = t * t;
                let t3 = t2 * t;
                let p = t3 * t * (35.0 + t * (-84.0 + t * (70.0 - 20.0 * t)));
                let p1 = t3 * (140.0 + t * (-420.0 + t * (420.0 - 140.0 * t)));
                let p2 = t2 * (420.0 + t * (-1680.0 + t * (2100.0 - 840.0 * t)));
                let p3 = t * (840.0 + t * (-5040.0 + t * (8400.0 - 4200.0 * t)));
                Jet { value: p, d1: 0.5 * p1, d2: 0.25 * p2, d3: 0.125 * p3 }
            }
        }
    }

    /// Half-width (in units of δ) outside which the step is flat to within
    /// double precision for practical purposes.
    pub fn feature_radius(self) -> f64 {
        match self {
            StepShape::Tanh => 8.0,
            StepShape::Poly => 1.0,
        }
    }

    /// Bound on `|S(s) - 1{s > 0}|` for `|s| >= r`.
    pub fn tail_bound(self, r: f64) -> f64 {
        match self {
            StepShape::Tanh => 0.5 * (1.0 - r.abs().tanh()),
            StepShape::Poly => {
                if r.abs() >= 1.0 {
                    0.0
                } else {
                    0.5
                }
            }
        }
    }
}

/// Unit-mass bump `B` supported on `[-1, 1]`, C³ at the support edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BumpShape {
    /// `(4/3) cos⁴(πs/2)`
    Cosine,
    /// `(315/256) (1 - s²)⁴`
    Quartic,
}

impl BumpShape {
    pub fn jet(self, s: f64) -> Jet {
        if s.abs() >= 1.0 {
            return Jet::ZERO;
        }
        match self {
            BumpShape::Cosine => {
                let k = 0.5 * std::f64::consts::PI;
                let (sn, c) = (k * s).sin_cos();
                let c2 = c * c;
                let norm = 4.0 / 3.0;
                Jet {
                    value: norm * c2 * c2,
                    d1: norm * (-4.0 * k * c2 * c * sn),
                    d2: norm * (-4.0 * k * k * (c2 * c2 - 3.0 * c2 * sn * sn)),
                    d3: norm * (4.0 * k * k * k * (10.0 * c2 * c * sn - 6.0 * c * sn * sn * sn)),
                }
            }
            BumpShape::Quartic => {
                let norm = 315.0 / 256.0;
                let w = 1.0 - s * s;
                let w2 = w * w;
                let w3 = w2 * w;
                // d/ds w = -2s
                let d1 = 4.0 * w3 * (-2.0 * s);
                let d2 = 12.0 * w2 * (4.0 * s * s) + 4.0 * w3 * (-2.0);
                let d3 = 24.0 * w * (-2.0 * s) * (4.0 * s * s)
                    + 12.0 * w2 * (8.0 * s)
                    + 12.0 * w2 * (-2.0 * s) * (-2.0);
                Jet { value: norm * w2 * w2, d1: norm * d1, d2: norm * d2, d3: norm * d3 }
            }
        }
    }
}

/// How the total cross-section is apportioned between the two walls.
/// `lower = fraction · V`, `upper = (1 - fraction) · V`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallSplit {
    pub lower_fraction: f64,
}

impl WallSplit {
    pub const UPPER_ONLY: WallSplit = WallSplit { lower_fraction: 0.0 };
    pub const SYMMETRIC: WallSplit = WallSplit { lower_fraction: 0.5 };
}

impl Default for WallSplit {
    fn default() -> Self {
        Self::UPPER_ONLY
    }
}

/// Parameters of the three-term example family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleFamilySpec {
    pub v1: BaseProfile,
    pub beta: f64,
    pub mu: f64,
    /// `r` in `δ(ε) = delta_scale · ε^r`.
    pub delta_exponent: f64,
    /// Constant prefactor of `δ(ε)`; the mollifier support is `[-δ, δ]`.
    pub delta_scale: f64,
    pub step: StepShape,
    pub bump: BumpShape,
    pub split: WallSplit,
    pub halfwidth: f64,
}

impl ExampleFamilySpec {
    pub const DEFAULT_HALFWIDTH: f64 = 1.0;

    pub fn new(v1: BaseProfile, beta: f64, mu: f64, delta_exponent: f64) -> Self {
        Self {
            v1,
            beta,
            mu,
            delta_exponent,
            delta_scale: 1.0,
            step: StepShape::Tanh,
            bump: BumpShape::Cosine,
            split: WallSplit::UPPER_ONLY,
            halfwidth: Self::DEFAULT_HALFWIDTH,
        }
    }

    /// Straight tube with `V^ε ≡ c ε`.
    pub fn flat(c: f64) -> Self {
        Self::new(BaseProfile::Const(c), 0.0, 0.0, 0.3)
    }

    pub fn with_delta_scale(mut self, scale: f64) -> Self {
        self.delta_scale = scale;
        self
    }

    pub fn with_split(mut self, split: WallSplit) -> Self {
        self.split = split;
        self
    }

    pub fn with_halfwidth(mut self, h: f64) -> Self {
        self.halfwidth = h;
        self
    }

    pub fn with_shapes(mut self, step: StepShape, bump: BumpShape) -> Self {
        self.step = step;
        self.bump = bump;
        self
    }

    /// `α = V₁(0)`.
    pub fn alpha(&self) -> f64 {
        self.v1.value(0.0)
    }

    pub fn delta(&self, eps: f64) -> f64 {
        self.delta_scale * eps.powf(self.delta_exponent)
    }

    fn validate_common(&self) -> Result<(), GeometryError> {
        let finite = [self.beta, self.mu, self.delta_scale, self.halfwidth, self.split.lower_fraction];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidParameter("non-finite parameter".into()));
        }
        if self.beta < 0.0 {
            return Err(GeometryError::InvalidParameter(format!("beta = {} < 0", self.beta)));
        }
        if self.mu < 0.0 {
            return Err(GeometryError::InvalidParameter(format!("mu = {} < 0", self.mu)));
        }
        if self.delta_scale <= 0.0 {
            return Err(GeometryError::InvalidParameter("delta_scale must be positive".into()));
        }
        if self.halfwidth <= 0.0 {
            return Err(GeometryError::InvalidParameter("halfwidth must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.split.lower_fraction) {
            return Err(GeometryError::InvalidParameter("lower_fraction must lie in [0, 1]".into()));
        }
        let m = self.v1.min_on(self.halfwidth);
        if !(m > 0.0) {
            return Err(GeometryError::NonPositiveBase(m));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        self.validate_common()?;
        let r = self.delta_exponent;
        if !(r > 0.0 && r < 1.0 / 3.0) {
            return Err(GeometryError::InvalidDeltaExponent(r));
        }
        Ok(())
    }
}

/// Lower, upper and total cross-section jets at one abscissa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossSection {
    pub lower: Jet,
    pub upper: Jet,
    pub total: Jet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wall {
    Upper,
    Lower,
}

/// One member `D^ε` of a tube family. Immutable once built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossSectionFamily {
    spec: ExampleFamilySpec,
    eps: f64,
    delta: f64,
}

impl CrossSectionFamily {
    /// Builds the family member at `eps`, enforcing `r < 1/3`.
    pub fn build(spec: ExampleFamilySpec, eps: f64) -> Result<Self, GeometryError> {
        spec.validate()?;
        Self::assemble(spec, eps)
    }

    /// Like [`build`](Self::build) but accepts any `r ∈ (0, 1)`. Only the
    /// assumption checker needs this, to diagnose deliberately bad exponents.
    pub fn build_relaxed(spec: ExampleFamilySpec, eps: f64) -> Result<Self, GeometryError> {
        spec.validate_common()?;
        let r = spec.delta_exponent;
        if !(r > 0.0 && r < 1.0) {
            return Err(GeometryError::InvalidDeltaExponent(r));
        }
        Self::assemble(spec, eps)
    }

    /// Straight tube of width `c ε`.
    pub fn flat(c: f64, eps: f64) -> Result<Self, GeometryError> {
        Self::build(ExampleFamilySpec::flat(c), eps)
    }

    fn assemble(spec: ExampleFamilySpec, eps: f64) -> Result<Self, GeometryError> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(GeometryError::InvalidEps(eps));
        }
        Ok(Self { spec, eps, delta: spec.delta(eps) })
    }

    pub fn spec(&self) -> &ExampleFamilySpec {
        &self.spec
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn halfwidth(&self) -> f64 {
        self.spec.halfwidth
    }

    pub fn has_step(&self) -> bool {
        self.spec.beta > 0.0
    }

    pub fn has_bump(&self) -> bool {
        self.spec.mu > 0.0
    }

    /// Half-width in x of the region where the mollifiers are not flat.
    pub fn feature_radius(&self) -> f64 {
        let mut r: f64 = 0.0;
        if self.has_step() {
            r = r.max(self.spec.step.feature_radius());
        }
        if self.has_bump() {
            r = r.max(1.0);
        }
        r * self.delta
    }

    /// Points where quadrature should split: 0 and the mollifier edges.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = vec![0.0];
        if self.has_step() || self.has_bump() {
            let d = self.delta;
            pts.extend([-d, d, -0.5 * d, 0.5 * d]);
            let r = self.feature_radius();
            if r > d {
                pts.extend([-r, r, -0.5 * r, 0.5 * r]);
            }
        }
        pts
    }

    pub fn check_window(&self, x: f64) -> Result<(), GeometryError> {
        if x.abs() <= self.spec.halfwidth {
            Ok(())
        } else {
            Err(GeometryError::OutsideWindow { x, halfwidth: self.spec.halfwidth })
        }
    }

    /// Jet of `V^ε` without the window check.
    pub fn total_jet(&self, x: f64) -> Jet {
        let eps = self.eps;
        let mut jet = self.spec.v1.jet(x).scale(eps);
        if self.has_step() {
            let s = self.spec.step.jet(x / self.delta).rescale_argument(self.delta);
            jet = jet + s.scale(eps * self.spec.beta);
        }
        if self.has_bump() {
            let b = self.spec.bump.jet(x / self.delta).rescale_argument(self.delta);
            jet = jet + b.scale(eps * self.spec.mu / self.delta);
        }
        jet
    }

    /// `V^ε(x)` without the window check.
    #[inline]
    pub fn total(&self, x: f64) -> f64 {
        let eps = self.eps;
        let mut v = eps * self.spec.v1.value(x);
        if self.has_step() {
            v += eps * self.spec.beta * self.spec.step.jet(x / self.delta).value;
        }
        if self.has_bump() {
            v += eps * self.spec.mu / self.delta * self.spec.bump.jet(x / self.delta).value;
        }
        v
    }

    /// `(V^l(x), V^u(x))` without the window check.
    #[inline]
    pub fn walls(&self, x: f64) -> (f64, f64) {
        let v = self.total(x);
        let lo = self.spec.split.lower_fraction * v;
        (lo, v - lo)
    }

    /// `(V^l_x(x), V^u_x(x))` without the window check.
    pub fn wall_slopes(&self, x: f64) -> (f64, f64) {
        let d = self.total_jet(x).d1;
        let f = self.spec.split.lower_fraction;
        (f * d, (1.0 - f) * d)
    }

    /// Mid-point of the cross-section at `x`.
    pub fn midline(&self, x: f64) -> f64 {
        let (lo, up) = self.walls(x);
        0.5 * (up - lo)
    }

    pub fn eval(&self, x: f64) -> Result<CrossSection, GeometryError> {
        self.check_window(x)?;
        let total = self.total_jet(x);
        let f = self.spec.split.lower_fraction;
        Ok(CrossSection { lower: total.scale(f), upper: total.scale(1.0 - f), total })
    }

    pub fn inward_normal(&self, x: f64, wall: Wall) -> Result<[f64; 2], GeometryError> {
        self.check_window(x)?;
        Ok(self.inward_normal_unchecked(x, wall))
    }

    #[inline]
    pub fn inward_normal_unchecked(&self, x: f64, wall: Wall) -> [f64; 2] {
        let (sl, su) = self.wall_slopes(x);
        match wall {
            Wall::Upper => {
                let n = (1.0 + su * su).sqrt();
                [su / n, -1.0 / n]
            }
            Wall::Lower => {
                let n = (1.0 + sl * sl).sqrt();
                [sl / n, 1.0 / n]
            }
        }
    }
}

pub fn eval_cross_section(family: &CrossSectionFamily, x: f64) -> Result<CrossSection, GeometryError> {
    family.eval(x)
}

pub fn build_example_family(spec: ExampleFamilySpec, eps: f64) -> Result<CrossSectionFamily, GeometryError> {
    CrossSectionFamily::build(spec, eps)
}

/// Thresholds for [`check_assumptions`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConfig {
    pub zeta: f64,
    /// Region `K = [k_lo, k_hi]`, mirrored to `[-k_hi, -k_lo]`, must exclude 0.
    pub region: (f64, f64),
    pub derivative_bound: f64,
    /// Allowed relative increase of ξ^ε from one ε to the next.
    pub xi_slack: f64,
}

impl Default for AssumptionConfig {
    fn default() -> Self {
        Self { zeta: 0.1, region: (0.5, 1.0), derivative_bound: 10.0, xi_slack: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub eps: f64,
    pub zeta_min: f64,
    pub xi_eps: f64,
    pub derivative_bound_ratio: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionSweep {
    pub reports: Vec<AssumptionReport>,
    pub xi_decreasing: bool,
    pub passed: bool,
}

fn xi_of(j: Jet, eps: f64) -> f64 {
    (j.d1 * j.d1 * j.d1 / eps).abs() + (j.d1 * j.d2).abs() + (eps * j.d3).abs()
}

/// Assumption diagnostics for one family member, without the sweep verdict.
pub fn assumption_report(family: &CrossSectionFamily, cfg: &AssumptionConfig) -> AssumptionReport {
    let eps = family.eps();
    let h = family.halfwidth().min(1.0);
    let mut grid: Vec<f64> = (0..4001).map(|i| -h + 2.0 * h * i as f64 / 4000.0).collect();
    let r = family.feature_radius().min(h);
    if r > 0.0 {
        grid.extend((0..401).map(|i| -r + 2.0 * r * i as f64 / 400.0));
    }
    let f = family.spec().split.lower_fraction;
    let mut zeta_min = f64::INFINITY;
    let mut xi_eps: f64 = 0.0;
    for &x in &grid {
        let total = family.total_jet(x);
        zeta_min = zeta_min.min(total.value / eps);
        let lower = total.scale(f);
        let upper = total.scale(1.0 - f);
        xi_eps = xi_eps.max(xi_of(total, eps) + xi_of(lower, eps) + xi_of(upper, eps));
    }

    let (k_lo, k_hi) = cfg.region;
    let k_hi = k_hi.min(family.halfwidth());
    let mut ratio: f64 = 0.0;
    for i in 0..=1000 {
        let x = k_lo + (k_hi - k_lo) * i as f64 / 1000.0;
        for xs in [x, -x] {
            let t = family.total_jet(xs);
            let sum = t.d1.abs() + t.d2.abs() + t.d3.abs();
            // |lower-derivs| + |upper-derivs| = (f + (1 - f)) · |total-derivs|
            ratio = ratio.max(sum / eps);
        }
    }
    let passed = zeta_min > cfg.zeta && ratio <= cfg.derivative_bound;
    AssumptionReport { eps, zeta_min, xi_eps, derivative_bound_ratio: ratio, passed }
}

/// Runs the assumption checks over a strictly decreasing ε sweep. A failing
/// check is reported in the returned data, never as an error.
pub fn check_assumptions(
    families: &[CrossSectionFamily],
    cfg: &AssumptionConfig,
) -> Result<AssumptionSweep, GeometryError> {
    if families.windows(2).any(|w| w[1].eps() >= w[0].eps()) {
        return Err(GeometryError::InvalidParameter("eps list must be strictly decreasing".into()));
    }
    let (k_lo, k_hi) = cfg.region;
    if !(k_lo > 0.0 && k_hi > k_lo) {
        return Err(GeometryError::InvalidParameter("region K must satisfy 0 < k_lo < k_hi".into()));
    }
    let mut reports: Vec<AssumptionReport> = families.iter().map(|f| assumption_report(f, cfg)).collect();
    let mut xi_decreasing = true;
    for i in 1..reports.len() {
        let prev = reports[i - 1].xi_eps;
        let ok = reports[i].xi_eps <= prev * (1.0 + cfg.xi_slack);
        if !ok {
            reports[i].passed = false;
            xi_decreasing = false;
        }
    }
    let passed = reports.iter().all(|r| r.passed);
    Ok(AssumptionSweep { reports, xi_decreasing, passed })
}
