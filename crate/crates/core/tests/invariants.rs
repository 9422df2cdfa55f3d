use narrowtube_core::diffusion::{build_ctmc, exit_stats_linear_solve, CtmcModel};
use narrowtube_core::oracles::{ks_one_sample, ks_statistic};
use narrowtube_core::reflected::TubeStepper;
use narrowtube_core::scale_speed::uniform_grid;
use narrowtube_core::{
    gluing_parameters, limiting_scale_speed, run_paths, BaseProfile, BumpShape, CrossSectionFamily, ExampleFamilySpec,
    ReflectedPathState, StepShape, WallSplit,
};
use proptest::prelude::*;

/// Grid on [-1, 1] with 0 as a node, from positive gaps.
fn grid_from_gaps(left: &[f64], right: &[f64]) -> Vec<f64> {
    let scale = |g: &[f64]| g.iter().sum::<f64>();
    let (sl, sr) = (scale(left), scale(right));
    let mut xs = vec![0.0];
    let mut x = 0.0;
    for g in left {
        x -= g / sl;
        xs.push(x);
    }
    xs.reverse();
    *xs.first_mut().unwrap() = -1.0;
    let mut x = 0.0;
    for (i, g) in right.iter().enumerate() {
        x += g / sr;
        xs.push(if i + 1 == right.len() { 1.0 } else { x });
    }
    xs
}

fn cumulative(start: f64, incs: &[f64]) -> Vec<f64> {
    let mut out = vec![start];
    for d in incs {
        let last = *out.last().unwrap();
        out.push(last + d);
    }
    out
}

prop_compose! {
    fn random_chain()(
        left in prop::collection::vec(0.1f64..1.0, 3..12),
        right in prop::collection::vec(0.1f64..1.0, 3..12),
        seedu in prop::collection::vec(0.01f64..2.0, 24),
        seedv in prop::collection::vec(0.01f64..2.0, 25),
        atom in 0.0f64..1.0,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let grid = grid_from_gaps(&left, &right);
        let n = grid.len();
        let u = cumulative(-1.0, &seedu[..n - 1]);
        let mut dv = seedv[..n].to_vec();
        let zero = grid.iter().position(|&x| x == 0.0).unwrap();
        dv[zero] += atom;
        let v_edges = cumulative(0.0, &dv);
        (grid, u, v_edges)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generator_rows_sum_to_zero((grid, u, v) in random_chain()) {
        let m = CtmcModel::from_values(&grid, &u, &v).unwrap();
        for (i, s) in m.row_sums().iter().enumerate() {
            prop_assert!(s.abs() <= 1e-12 * m.hold_rate[i].max(1.0), "row {i}: {s}");
        }
        prop_assert!(m.detailed_balance_defect() <= 1e-12);
        for i in 1..m.len() - 1 {
            prop_assert_eq!(m.up_prob[i] + m.down_prob[i], 1.0);
        }
    }

    #[test]
    fn chain_is_gauge_invariant((grid, u, v) in random_chain(), c in 0.01f64..100.0) {
        let m = CtmcModel::from_values(&grid, &u, &v).unwrap();
        let cu: Vec<f64> = u.iter().map(|x| c * x).collect();
        let cv: Vec<f64> = v.iter().map(|x| x / c).collect();
        let g = CtmcModel::from_values(&grid, &cu, &cv).unwrap();
        for i in 1..m.len() - 1 {
            prop_assert!(rel(m.up_prob[i], g.up_prob[i]) <= 1e-12);
            prop_assert!(rel(m.hold_rate[i], g.hold_rate[i]) <= 1e-12);
        }
    }

    #[test]
    fn exit_probabilities_follow_scale((grid, u, v) in random_chain()) {
        let m = CtmcModel::from_values(&grid, &u, &v).unwrap();
        let sol = exit_stats_linear_solve(&m, (-1.0, 1.0)).unwrap();
        for (k, p) in sol.prob_right.iter().enumerate() {
            let expect = (u[k] - u[0]) / (u[u.len() - 1] - u[0]);
            prop_assert!((p - expect).abs() <= 1e-12, "{p} vs {expect}");
            prop_assert!(sol.mean_time[k] >= 0.0);
        }
    }

    #[test]
    fn gluing_probabilities_are_complementary(alpha in 0.2f64..3.0, beta in 0.0f64..3.0, mu in 0.0f64..2.0) {
        let spec = ExampleFamilySpec::new(BaseProfile::Const(alpha), beta, mu, 0.3);
        let t = limiting_scale_speed(&spec, &uniform_grid(-1.0, 1.0, 11)).unwrap();
        let g = gluing_parameters(&t).unwrap();
        prop_assert_eq!(g.p_plus + g.p_minus, 1.0);
        prop_assert!((g.p_plus - (alpha + beta) / (2.0 * alpha + beta)).abs() < 1e-12);
        prop_assert!((g.theta - mu / (alpha + 0.5 * beta)).abs() < 1e-12);
    }

    #[test]
    fn ks_is_bounded_and_symmetric(
        a in prop::collection::vec(-5.0f64..5.0, 1..40),
        b in prop::collection::vec(-5.0f64..5.0, 1..40),
    ) {
        let d = ks_statistic(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, ks_statistic(&b, &a).unwrap());
        prop_assert_eq!(ks_statistic(&a, &a).unwrap(), 0.0);
        let one = ks_one_sample(&a, |x| ((x + 5.0) / 10.0).clamp(0.0, 1.0)).unwrap();
        prop_assert!((0.0..=1.0).contains(&one));
    }

    #[test]
    fn reflection_keeps_paths_inside(
        x in -0.5f64..0.5,
        q in 0.0f64..1.0,
        steps in prop::collection::vec((-4.0f64..4.0, -4.0f64..4.0), 1..30),
        sticky in any::<bool>(),
    ) {
        let spec = if sticky {
            ExampleFamilySpec::new(BaseProfile::Const(1.0), 0.0, 0.5, 0.3)
        } else {
            ExampleFamilySpec::new(BaseProfile::Poly([1.0, 0.1, 0.5]), 1.0, 0.3, 0.3)
        };
        let spec = spec.with_delta_scale(0.05).with_shapes(StepShape::Poly, BumpShape::Cosine).with_split(WallSplit::SYMMETRIC);
        let family = CrossSectionFamily::build(spec, 0.02).unwrap();
        let dt = 1e-6;
        let stepper = TubeStepper::new(&family, dt).unwrap();
        let (lo, up) = family.walls(x);
        let mut s = ReflectedPathState::new(x, -lo + q * (lo + up));
        for (zx, zy) in steps {
            let before = s;
            stepper.advance_by(&mut s, zx * dt.sqrt(), zy * dt.sqrt()).unwrap();
            prop_assert!(stepper.contains(s.x, s.y), "left the tube at ({}, {})", s.x, s.y);
            prop_assert!(s.local_time_proxy >= before.local_time_proxy);
            prop_assert!(s.reflections >= before.reflections);
        }
    }
}

#[test]
fn limit_chain_gauge_from_table() {
    let spec = ExampleFamilySpec::new(BaseProfile::Const(1.0), 1.0, 0.3, 0.3);
    let grid = uniform_grid(-1.0, 1.0, 41);
    let t = limiting_scale_speed(&spec, &grid).unwrap();
    let a = build_ctmc(&t, &grid).unwrap();
    let b = build_ctmc(&t.regauged(3.7), &grid).unwrap();
    for i in 1..a.len() - 1 {
        assert!(rel(a.up_prob[i], b.up_prob[i]) <= 1e-12);
        assert!(rel(a.hold_rate[i], b.hold_rate[i]) <= 1e-12);
    }
}

#[test]
fn parallel_runs_match_sequential() {
    let f = |k: usize| {
        use rand::Rng;
        narrowtube_core::path_rng(42, k as u64).random::<u64>()
    };
    let seq = run_paths(257, 1, f);
    assert_eq!(seq, run_paths(257, 3, f));
    assert_eq!(seq, run_paths(257, 8, f));
}
