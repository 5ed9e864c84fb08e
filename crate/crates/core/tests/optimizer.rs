mod common;

use common::*;
use isoc_core::model::FeasibleSet;
use isoc_core::objective::Objective;
use isoc_core::optimizer::{
    compute_alpha, distance_filter, draw_samples, local_solve, pure_multistart, pure_multistart_from, roa_filter,
    sampling_success_probability, trlwaroa, trlwaroa_from, FilterTag, LocalSolverConfig, RunRecord, TrlConfig,
    CONVERGENCE_LEVEL,
};
use proptest::prelude::*;

fn well() -> DoubleWell {
    DoubleWell { dim: 3, p: 0.1, q: 0.8 }
}

fn trl_cfg(k_max: usize, gamma: f64, v: f64, seed: u64) -> TrlConfig {
    TrlConfig { k_max, gamma, v, seed, workers: 1, stop_on_convergence: false }
}

fn timeless(mut r: RunRecord) -> RunRecord {
    r.elapsed_secs = 0.0;
    r
}

#[test]
fn alpha_matches_high_precision_value() {
    // 0.6 (12! · 2^24)^{1/24}, evaluated to 50 digits
    let u = FeasibleSet::new(vec![0.0; 24], vec![2.0; 24]).unwrap();
    let want = 2.759_700_503_951_022;
    assert!((compute_alpha(0.6, &u) - want).abs() <= 1e-14 * want);
    let want = 3.219_650_587_942_859;
    assert!((compute_alpha(0.7, &u) - want).abs() <= 1e-14 * want);
}

#[test]
fn alpha_scales_with_box_width_and_survives_large_dimensions() {
    for dim in [2usize, 24, 400] {
        let u = FeasibleSet::new(vec![0.0; dim], vec![1.0; dim]).unwrap();
        let base = compute_alpha(0.6, &u);
        assert!(base.is_finite() && base > 0.0);
        for c in [0.5, 3.0, 1e3] {
            let uc = FeasibleSet::new(vec![-1.0; dim], vec![c - 1.0; dim]).unwrap();
            assert!((compute_alpha(0.6, &uc) - c * base).abs() <= 1e-12 * c * base, "dim {dim} c {c}");
        }
    }
}

#[test]
fn success_probability_values() {
    assert_eq!(sampling_success_probability(0.3, 1), 0.3);
    // the miss probability is about e^-352, below double resolution
    assert_eq!(sampling_success_probability(0.0346, 10_000), 1.0);
    let p = sampling_success_probability(1e-12, 1000);
    assert!((p - 1e-9).abs() < 1e-15);
}

#[test]
fn distance_filter_cases() {
    let samples = vec![vec![0.0, 0.0], vec![0.3, 0.0], vec![0.0, 1.0]];
    assert_eq!(distance_filter(0, &samples, &[1.0, 2.0, 3.0]), f64::INFINITY);
    assert!((distance_filter(1, &samples, &[1.0, 2.0, 3.0]) - 0.3).abs() < 1e-15);
    // nearest strictly better predecessor
    assert!((distance_filter(2, &samples, &[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
    // best so far
    assert_eq!(distance_filter(2, &samples, &[1.0, 2.0, 0.5]), f64::INFINITY);
    // equal values are not better
    assert_eq!(distance_filter(1, &samples, &[1.0, 1.0, 0.5]), f64::INFINITY);
}

#[test]
fn roa_filter_cases() {
    let minima = vec![(vec![0.0, 0.0], 2.0)];
    assert!(!roa_filter(&[0.0, 0.0], &minima, 0.0));
    assert!(roa_filter(&[0.0, 0.0], &minima, 0.5));
    // ‖θ − θ_min‖ = v δ exactly passes
    assert!(!roa_filter(&[1.0, 0.0], &minima, 0.5));
    assert!(roa_filter(&[0.999, 0.0], &minima, 0.5));
    assert!(!roa_filter(&[1.0, 0.0], &[], 0.9));
}

#[test]
fn config_validation() {
    assert!(trl_cfg(0, 0.6, 0.7, 1).validate().is_err());
    assert!(trl_cfg(10, -0.1, 0.7, 1).validate().is_err());
    assert!(trl_cfg(10, 0.6, 1.0, 1).validate().is_err());
    assert!(TrlConfig { workers: 0, ..trl_cfg(10, 0.6, 0.5, 1) }.validate().is_err());
    assert!(trl_cfg(10, 0.0, 0.0, 1).validate().is_ok());
    let w = well();
    let outside = vec![vec![1.5, 0.0, 0.0]];
    assert!(pure_multistart_from(&w, &w.bounds(), outside, 0, &LocalSolverConfig::default()).is_err());
    assert!(pure_multistart_from(&w, &w.bounds(), vec![], 0, &LocalSolverConfig::default()).is_err());
}

#[test]
fn local_solver_stays_in_its_basin_on_the_double_well() {
    let w = well();
    let u = w.bounds();
    let cfg = LocalSolverConfig::default();
    for theta in draw_samples(&u, 200, 3) {
        let res = local_solve(&w, &theta, &u, &cfg);
        assert!(u.contains(&res.theta_min));
        assert!(res.j_min <= w.value(&theta) + 1e-12);
        assert!(res.j_min <= CONVERGENCE_LEVEL, "{theta:?} → {res:?}");
        assert_eq!(w.at_target(&res.theta_min), w.in_target_basin(&theta), "{theta:?}");
    }
    let root = vec![w.p; 3];
    let res = local_solve(&w, &root, &u, &cfg);
    assert_eq!(res.theta_min, root);
}

#[test]
fn local_solver_from_the_ground_truth_stays_put() {
    let (setup, problem) = reaching_problem(20);
    let th = setup.theta_true.clone().unwrap().to_flat();
    let res = local_solve(&problem, &th, &setup.feasible, &LocalSolverConfig::default());
    assert_eq!(res.j_min, -1.0);
    assert!(res.status.converged());
    let moved = res.theta_min.iter().zip(&th).map(|(a, b)| (a - b).abs() / b.abs().max(1e-12)).fold(0.0, f64::max);
    assert!(moved < 1e-6, "moved {moved}");
}

#[test]
fn local_solver_recovers_from_a_small_perturbation() {
    let (setup, problem) = reaching_problem(20);
    let th = setup.theta_true.clone().unwrap().to_flat();
    let start: Vec<f64> =
        th.iter().enumerate().map(|(i, t)| if *t > 0.0 { t * if i % 2 == 0 { 1.05 } else { 0.95 } } else { 0.01 }).collect();
    let start = setup.feasible.clamp(&start);
    let j0 = problem.value(&start);
    assert!(j0 > CONVERGENCE_LEVEL);
    let res = local_solve(&problem, &start, &setup.feasible, &LocalSolverConfig::default());
    assert!(res.j_min <= CONVERGENCE_LEVEL, "j_min {}", res.j_min);
    assert!(res.j_min <= j0);
}

#[test]
fn single_start_at_the_ground_truth() {
    let (setup, problem) = reaching_problem(20);
    let th = setup.theta_true.clone().unwrap().to_flat();
    let run = pure_multistart_from(&problem, &setup.feasible, vec![th.clone()], 0, &LocalSolverConfig::default()).unwrap();
    assert_eq!(run.j_opt, -1.0);
    assert_eq!(run.n_starts(), 1);
    assert!(run.converged());
}

#[test]
fn inert_filters_reduce_to_pure_multistart() {
    let w = well();
    let solver = LocalSolverConfig::default();
    for seed in 0..5 {
        let pms = pure_multistart(&w, &w.bounds(), 40, seed, &solver).unwrap();
        let trl = trlwaroa(&w, &w.bounds(), &trl_cfg(40, 0.0, 0.0, seed), &solver).unwrap();
        assert_eq!(trl.alpha, 0.0);
        let ks = |r: &RunRecord| r.starts.iter().map(|s| s.k).collect::<Vec<_>>();
        assert_eq!(ks(&pms), ks(&trl));
        assert_eq!(pms.starts, trl.starts);
        assert_eq!(pms.theta_opt, trl.theta_opt);
        assert_eq!(pms.j_opt.to_bits(), trl.j_opt.to_bits());
    }
}

#[test]
fn stop_on_convergence_skips_the_rest() {
    let w = well();
    let cfg = TrlConfig { stop_on_convergence: true, ..trl_cfg(30, 0.0, 0.0, 2) };
    let run = trlwaroa(&w, &w.bounds(), &cfg, &LocalSolverConfig::default()).unwrap();
    // every start on this landscape converges, so only the first runs
    assert_eq!(run.n_starts(), 1);
    assert!(run.filtered_by[1..].iter().all(|t| *t == FilterTag::Skipped));
    assert!(run.converged());
}

#[test]
fn resuming_from_persisted_samples_reproduces_the_run() {
    let w = well();
    let solver = LocalSolverConfig::default();
    let cfg = trl_cfg(60, 0.3, 0.5, 9);
    let run = trlwaroa(&w, &w.bounds(), &cfg, &solver).unwrap();
    let samples: Vec<Vec<f64>> = run.samples.iter().map(|s| s.theta.clone()).collect();
    let j: Vec<f64> = run.samples.iter().map(|s| s.j.unwrap()).collect();
    let again = trlwaroa_from(&w, &w.bounds(), samples.clone(), Some(j), &cfg, &solver).unwrap();
    assert_eq!(timeless(run.clone()), timeless(again));
    assert!(trlwaroa_from(&w, &w.bounds(), samples, Some(vec![0.0]), &cfg, &solver).is_err());
}

fn check_run_invariants(run: &RunRecord, w: &DoubleWell) -> Result<(), TestCaseError> {
    let js: Vec<f64> = run.samples.iter().map(|s| s.j.unwrap()).collect();
    prop_assert_eq!(run.filtered_by.len(), run.samples.len());
    prop_assert_eq!(run.filtered_by.iter().filter(|t| **t == FilterTag::None).count(), run.n_starts());
    let best = run.starts.iter().map(|s| s.j_min).fold(f64::INFINITY, f64::min);
    prop_assert_eq!(run.j_opt, best);
    for s in &run.starts {
        let d = s.theta_min.iter().zip(&run.samples[s.k].theta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assert_eq!(s.delta_roa, d);
        prop_assert_eq!(run.filtered_by[s.k], FilterTag::None);
        prop_assert!(w.bounds().contains(&s.theta_min));
    }
    for h in run.incumbent_history.windows(2) {
        prop_assert!(h[1] <= h[0]);
    }
    prop_assert_eq!(*run.incumbent_history.last().unwrap(), run.j_opt);
    let mut best_so_far = f64::INFINITY;
    for (k, j) in js.iter().enumerate() {
        if *j < best_so_far {
            prop_assert_ne!(run.filtered_by[k], FilterTag::Distance);
            best_so_far = *j;
        }
    }
    if run.config.v == 0.0 {
        prop_assert!(run.filtered_by.iter().all(|t| *t != FilterTag::Roa));
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn sequential_runs_satisfy_the_invariants(seed in any::<u64>(), gamma in 0.0..1.0f64, v in prop_oneof![Just(0.0), 0.0..0.99f64]) {
        let w = well();
        let cfg = trl_cfg(40, gamma, v, seed);
        let solver = LocalSolverConfig::default();
        let run = trlwaroa(&w, &w.bounds(), &cfg, &solver).unwrap();
        check_run_invariants(&run, &w)?;
        let again = trlwaroa(&w, &w.bounds(), &cfg, &solver).unwrap();
        prop_assert_eq!(timeless(run), timeless(again));
    }

    #[test]
    fn parallel_runs_satisfy_the_invariants(seed in any::<u64>(), gamma in 0.0..0.5f64, v in 0.0..0.99f64) {
        let w = well();
        let cfg = TrlConfig { workers: 3, ..trl_cfg(30, gamma, v, seed) };
        let run = trlwaroa(&w, &w.bounds(), &cfg, &LocalSolverConfig::default()).unwrap();
        check_run_invariants(&run, &w)?;
        prop_assert!(run.starts.windows(2).all(|s| s[0].k < s[1].k));
        for s in &run.starts {
            prop_assert!(s.minima_known <= run.starts.iter().filter(|o| o.k < s.k).count());
        }
        let seq = trlwaroa(&w, &w.bounds(), &TrlConfig { workers: 1, ..cfg }, &LocalSolverConfig::default()).unwrap();
        prop_assert_eq!(run.samples, seq.samples);
        prop_assert!((run.j_opt - seq.j_opt).abs() < 1e-12);
    }
}
