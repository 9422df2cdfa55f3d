//! Adaptive Gauss–Kronrod (7/15) quadrature.
//!
//! The integrands handled here (reciprocal cross-sections, speed densities)
//! are smooth but carry sharp features of width δ around the gluing point,
//! so callers pass explicit breakpoints and the integrator never straddles
//! them.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature did not converge on [{a}, {b}]: estimated error {error:e} after {intervals} subintervals")]
    NotConverged {
        a: f64,
        b: f64,
        error: f64,
        intervals: usize,
    },
    #[error("non-finite integrand value at x = {0}")]
    NonFinite(f64),
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 4000;

/// Tolerance pair: a subinterval is accepted when its error estimate is below
/// `max(abs, rel * |I|)` scaled by its share of the total length.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const fn absolute(abs: f64) -> Self {
        Self { abs, rel: 0.0 }
    }

    pub const fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel }
    }
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<(f64, f64), QuadratureError> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    if !fc.is_finite() {
        return Err(QuadratureError::NonFinite(center));
    }
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let x1 = center - dx;
        let x2 = center + dx;
        let f1 = f(x1);
        let f2 = f(x2);
        if !f1.is_finite() {
            return Err(QuadratureError::NonFinite(x1));
        }
        if !f2.is_finite() {
            return Err(QuadratureError::NonFinite(x2));
        }
        kronrod += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    Ok((value, error))
}

/// Integrates `f` over `[a, b]`. Reversed limits give the negated integral.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    tol: Tolerance,
) -> Result<f64, QuadratureError> {
    integrate_with_breaks(f, a, b, &[], tol)
}

/// Integrates `f` over `[a, b]`, forcing subdivision at every breakpoint that
/// falls strictly inside the interval.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: Tolerance,
) -> Result<f64, QuadratureError> {
    if a == b {
        return Ok(0.0);
    }
    if a > b {
        return integrate_with_breaks(f, b, a, breaks, tol).map(|v| -v);
    }
    let mut cuts = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&p| p > a && p < b).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    cuts.extend(inner);
    cuts.push(b);

    let total_len = b - a;
    let mut stack: Vec<(f64, f64)> = cuts.windows(2).rev().map(|w| (w[0], w[1])).collect();
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut processed = 0usize;
    // Crude global magnitude estimate for the relative criterion.
    let mut magnitude = 0.0f64;
    while let Some((lo, hi)) = stack.pop() {
        processed += 1;
        let (value, error) = gk15(&f, lo, hi)?;
        magnitude = magnitude.max(value.abs() * total_len / (hi - lo));
        let share = (hi - lo) / total_len;
        let allowed = tol.abs.max(tol.rel * magnitude) * share;
        let mid = 0.5 * (lo + hi);
        let splittable = mid > lo && mid < hi;
        if error <= allowed || !splittable || error <= 1e-15 * value.abs() {
            if !splittable && error > allowed {
                return Err(QuadratureError::NotConverged {
                    a: lo,
                    b: hi,
                    error,
                    intervals: processed,
                });
            }
            let y = value - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        } else {
            if processed + stack.len() > MAX_INTERVALS {
                return Err(QuadratureError::NotConverged {
                    a: lo,
                    b: hi,
                    error,
                    intervals: processed,
                });
            }
            stack.push((mid, hi));
            stack.push((lo, mid));
        }
    }
    Ok(sum)
}
