use statrs::function::erf::erfc;

use super::OracleError;

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Two-sample statistic `sup_t |F_a(t) - F_b(t)|` of the empirical CDFs,
/// evaluated exactly at every jump (ties advance both samples together).
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64, OracleError> {
    if a.is_empty() || b.is_empty() {
        return Err(OracleError::EmptySample);
    }
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// One-sample statistic against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64, OracleError> {
    if samples.is_empty() {
        return Err(OracleError::EmptySample);
    }
    let s = sorted(samples);
    let n = s.len() as f64;
    Ok(s.iter().enumerate().fold(0.0f64, |d, (k, &x)| {
        let f = cdf(x);
        d.max((k as f64 + 1.0) / n - f).max(f - k as f64 / n)
    }))
}

/// CDF of `N(mean, sd²)`.
pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    0.5 * erfc(-(x - mean) / (sd * std::f64::consts::SQRT_2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_disjoint() {
        let a = [0.3, 0.1, 0.2, 0.2];
        assert_eq!(ks_statistic(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_statistic(&a, &[1.0, 2.0]).unwrap(), 1.0);
        assert!(matches!(ks_statistic(&[], &a), Err(OracleError::EmptySample)));
    }

    #[test]
    fn hand_computed_with_ties() {
        // F_a: 1/3 at 1, 2/3 at 2, 1 at 3; F_b: 1/2 at 2, 1 at 4.
        let d = ks_statistic(&[1.0, 2.0, 3.0], &[2.0, 4.0]).unwrap();
        assert!((d - 0.5).abs() < 1e-15, "{d}");
    }

    #[test]
    fn one_sample_against_uniform() {
        let s = [0.1, 0.4, 0.7];
        let d = ks_one_sample(&s, |x| x.clamp(0.0, 1.0)).unwrap();
        // Largest gap is at 0.7: 1 - 0.7 = 0.3, or 0.4 - 1/3 at 0.4.
        assert!((d - 0.3).abs() < 1e-15);
    }

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(0.0, 0.0, 1.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(1.959_963_984_540_054, 0.0, 1.0) - 0.975).abs() < 1e-10);
        assert!((normal_cdf(-3.0, 1.0, 2.0) - normal_cdf(-2.0, 0.0, 1.0)).abs() < 1e-16);
    }
}
