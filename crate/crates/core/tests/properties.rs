use std::f64::consts::LN_2;

use morseflow::lyapunov::{lyap_value, monotonicity_profile, profile_violations, LyapunovField};
use morseflow::morse::build_decomposition;
use morseflow::{
    sample_wiener, CellSet, CocycleSystem, ExtendedTime, Filtration, NoisePath, PairContext,
    Partition, Point, PullbackSchedule, SearchWindow, SetRule, StateBox, TimeGrid,
};
use proptest::prelude::*;

fn line() -> std::sync::Arc<Partition> {
    Partition::new(StateBox::interval(-1.0, 1.0).unwrap(), 200).unwrap()
}

fn rule(p: &std::sync::Arc<Partition>, ivs: &[(f64, f64)]) -> SetRule {
    let mut s = CellSet::empty(p);
    for &(a, b) in ivs {
        s = s.union(&CellSet::interval(p, a, b).unwrap()).unwrap();
    }
    SetRule::Fixed(s)
}

fn window() -> SearchWindow {
    SearchWindow::new(-20.0, 20.0, 0.01, 40).unwrap()
}

#[test]
fn wiener_paths_grow_sublinearly() {
    let t = 1000.0;
    let grid = TimeGrid::new(0.0, t, 0.1).unwrap();
    let small = (0..1000u64)
        .filter(|&seed| (sample_wiener(grid, seed).evaluate(t).unwrap() / t).abs() < 0.2)
        .count();
    assert!(small >= 990, "{small}");
}

#[test]
fn lyap_value_at_minus_ln2() {
    assert!((lyap_value(ExtendedTime::exact(-LN_2)) - 0.25).abs() < 1e-15);
}

#[test]
fn upper_fixed_point_sits_on_the_second_plateau() {
    let p = line();
    let sys = CocycleSystem::exact_double_well();
    let calm = vec![NoisePath::zero(TimeGrid::symmetric(45.0, 0.01).unwrap(), 0)];
    let f = Filtration::new(
        &p,
        vec![
            rule(&p, &[(-1.0, -1.0)]),
            rule(&p, &[(-1.0, -1.0), (1.0, 1.0)]),
        ],
        vec![
            rule(&p, &[(-1.0, -0.5)]),
            rule(&p, &[(-1.0, -0.5), (0.5, 1.0)]),
        ],
    )
    .unwrap();
    let sched = PullbackSchedule::new(vec![0.0, 2.0, 5.0, 10.0, 20.0], 0.05, 5, 0.02).unwrap();
    let d = build_decomposition(&f, &sys, &calm, &sched, 0.95).unwrap();
    let field = d.filtration.lyapunov_context(window()).unwrap();
    let v = field
        .evaluate(&sys, &calm[0], Point::scalar(1.0))
        .unwrap()
        .value;
    assert_eq!(v, 8.0 / 9.0);
}

#[test]
fn calm_orbit_profile_follows_the_entrance_time() {
    let p = line();
    let sys = CocycleSystem::exact_double_well();
    let calm = NoisePath::zero(TimeGrid::symmetric(45.0, 0.01).unwrap(), 0);
    let ctx = PairContext::new(
        rule(&p, &[(1.0, 1.0)]),
        rule(&p, &[(-1.0, 0.0)]),
        rule(&p, &[(0.5, 1.0)]),
        window(),
    )
    .unwrap();
    let times = [0.0, 0.5, 1.0, 1.5];
    let prof = monotonicity_profile(&ctx, &sys, &calm, Point::scalar(0.1), &times).unwrap();
    let tau0 = 0.5 * 33f64.ln();
    for (q, t) in prof.iter().zip(times) {
        assert!(
            (q.value - lyap_value(ExtendedTime::exact(tau0 - t))).abs() < 1e-6,
            "{t}: {}",
            q.value
        );
    }
    let (bad, skipped) = profile_violations(&prof, true);
    assert!(bad.is_empty() && skipped == 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_flow_preserves_order(seed in 0u64..500, a in -1.0f64..1.0, b in -1.0f64..1.0, t in -4.0f64..4.0) {
        prop_assume!(a != b);
        let (x, y) = if a < b { (a, b) } else { (b, a) };
        let sys = CocycleSystem::exact_double_well();
        let path = sample_wiener(TimeGrid::symmetric(5.0, 0.01).unwrap(), seed);
        let fx = sys.flow(t, &path, Point::scalar(x)).unwrap().x();
        let fy = sys.flow(t, &path, Point::scalar(y)).unwrap().x();
        prop_assert!(fx <= fy, "{x} -> {fx}, {y} -> {fy}");
    }
}
