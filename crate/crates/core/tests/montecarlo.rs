mod common;

use percolab::estimator::{
    compare_to_paper, find_threshold, ThresholdConfig, ThresholdFlag, Trend,
};
use percolab::lattice::Dimension;
use percolab::montecarlo::{
    coupled_sweep, estimate_theta, run_trial_bfs, run_trial_union_find, sweep_theta,
    theta_line_exact, BallLattice, Scratch, TrialSpec,
};
use proptest::prelude::*;

fn dim(d: usize) -> Dimension {
    Dimension::new(d).unwrap()
}

#[test]
fn line_formula_matches_config_sum() {
    for k in 1..=4 {
        for i in 1..10 {
            let p = i as f64 / 10.0;
            assert!((theta_line_exact(p, k) - common::exact_theta(1, k, p)).abs() < 1e-12);
        }
    }
}

#[test]
fn small_balls_match_config_sum() {
    for &(d, k) in &[(2usize, 1u64), (2, 2), (3, 1)] {
        for &p in &[0.3, 0.5, 0.7] {
            let exact = common::exact_theta(d, k, p);
            let est = estimate_theta(&TrialSpec::new(dim(d), k, p, 40_000, 11)).unwrap();
            let sigma = (exact * (1.0 - exact) / 40_000.0).sqrt();
            assert!(
                (est.point - exact).abs() <= 4.0 * sigma.max(1e-4),
                "d={d} k={k} p={p}: {} vs {exact}",
                est.point
            );
        }
    }
}

#[test]
fn line_estimates_within_three_sigma() {
    for &k in &[2u64, 8] {
        for &p in &[0.3, 0.6, 0.9] {
            let est = estimate_theta(&TrialSpec::new(dim(1), k, p, 20_000, 5)).unwrap();
            let exact = theta_line_exact(p, k);
            assert!((est.point - exact).abs() <= 3.0 * est.wilson_sigma().max(1e-4));
        }
    }
}

#[test]
fn unconditioned_scales_by_p() {
    let p = 0.6;
    let mut cond = TrialSpec::new(dim(2), 4, p, 20_000, 9);
    let c = estimate_theta(&cond).unwrap();
    cond.condition_origin_open = false;
    let u = estimate_theta(&cond).unwrap();
    let sigma = u.wilson_sigma().hypot(p * c.wilson_sigma());
    assert!((u.point - p * c.point).abs() <= 3.0 * sigma);
}

#[test]
fn endpoints_of_probability_range() {
    for d in 1..=3 {
        let zero = estimate_theta(&TrialSpec::new(dim(d), 3, 0.0, 100, 1)).unwrap();
        let one = estimate_theta(&TrialSpec::new(dim(d), 3, 1.0, 100, 1)).unwrap();
        assert_eq!(zero.successes, 0);
        assert_eq!(one.successes, 100);
    }
}

#[test]
fn invalid_specs_rejected() {
    assert!(estimate_theta(&TrialSpec::new(dim(2), 3, 1.5, 10, 1)).is_err());
    assert!(estimate_theta(&TrialSpec::new(dim(2), 3, f64::NAN, 10, 1)).is_err());
    assert!(estimate_theta(&TrialSpec::new(dim(2), 3, 0.5, 0, 1)).is_err());
}

#[test]
fn sweep_is_monotone_under_coupling() {
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let base = TrialSpec::new(dim(2), 16, 0.0, 300, 2024);
    let rows = coupled_sweep(&base, &grid).unwrap();
    for trial in &rows {
        for w in trial.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }
}

#[test]
fn sweep_reproducible() {
    let grid = [0.2, 0.5, 0.8];
    let base = TrialSpec::new(dim(2), 6, 0.0, 500, 77);
    let a = sweep_theta(&base, &grid).unwrap();
    let b = sweep_theta(&base, &grid).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.same_outcome(y)));
}

#[test]
fn estimates_identical_across_pools() {
    let spec = TrialSpec::new(dim(2), 10, 0.55, 3000, 31);
    let run = |n: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| estimate_theta(&spec).unwrap())
    };
    let a = run(1);
    assert!(a.same_outcome(&run(4)));
    assert!(a.same_outcome(&run(7)));
}

#[test]
fn line_thresholds_near_root() {
    for &k in &[4u64, 8, 16] {
        let cfg = ThresholdConfig::new(0.005, 100 + k);
        let r = find_threshold(dim(1), k, &cfg).unwrap();
        let root = common::line_root(k, 0.5);
        let sigma = (r.ci_high - r.ci_low) / (2.0 * 1.959_963_984_540_054);
        assert!(
            (r.p_star - root).abs() <= 0.005f64.max(3.0 * sigma),
            "k={k}: {} vs {root}",
            r.p_star
        );
        assert!(r.ci_low <= r.p_star && r.p_star <= r.ci_high);
        assert_ne!(r.flag, ThresholdFlag::BudgetExhausted);
    }
}

#[test]
fn threshold_reproducible_across_pools() {
    let cfg = ThresholdConfig::new(0.01, 8);
    let run = |n: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| find_threshold(dim(2), 6, &cfg).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn threshold_respects_step_cap() {
    let mut cfg = ThresholdConfig::new(1e-9, 4);
    cfg.max_steps = 3;
    let r = find_threshold(dim(1), 4, &cfg).unwrap();
    assert_eq!(r.flag, ThresholdFlag::BudgetExhausted);
    assert_eq!(r.bisection_steps, 3);
}

#[test]
fn comparison_report_is_consistent() {
    let results: Vec<_> = [2u64, 4, 8]
        .iter()
        .map(|&k| find_threshold(dim(1), k, &ThresholdConfig::new(0.02, k)).unwrap())
        .collect();
    let rep = compare_to_paper(&results).unwrap();
    assert_eq!(rep.rows.len(), 3);
    assert!((rep.paper_prediction - 1.0).abs() < 1e-15);
    for (row, r) in rep.rows.iter().zip(&results) {
        assert_eq!(row.consistent, r.ci_low <= 1.0 && 1.0 <= r.ci_high);
    }
    // On the line p*(k) rises towards 1 with k.
    assert_eq!(rep.trend, Trend::Increasing);
    assert!(rep.to_text().contains("increasing"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bfs_and_union_find_agree(d in 1usize..=3, k in 1u64..=6, p in 0.0f64..=1.0, seed in any::<u64>(), open in any::<bool>()) {
        let ball = BallLattice::new(dim(d), k).unwrap();
        let mut spec = TrialSpec::new(dim(d), k, p, 50, seed);
        spec.condition_origin_open = open;
        let mut scratch = Scratch::default();
        for t in 0..50 {
            prop_assert_eq!(run_trial_bfs(&ball, &spec, t, &mut scratch), run_trial_union_find(&ball, &spec, t));
        }
    }

    #[test]
    fn success_monotone_in_p(k in 1u64..=8, seed in any::<u64>(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let ball = BallLattice::new(dim(2), k).unwrap();
        let mut scratch = Scratch::default();
        let s_lo = TrialSpec::new(dim(2), k, lo, 40, seed);
        let s_hi = TrialSpec::new(dim(2), k, hi, 40, seed);
        for t in 0..40 {
            let x = run_trial_bfs(&ball, &s_lo, t, &mut scratch);
            let y = run_trial_bfs(&ball, &s_hi, t, &mut scratch);
            prop_assert!(!x || y);
        }
    }
}
