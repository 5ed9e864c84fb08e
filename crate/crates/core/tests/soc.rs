mod common;

use common::*;
use isoc_core::error::Error;
use isoc_core::linalg::min_eigenvalue;
use isoc_core::model::{assemble_cost, assemble_noise, ThetaLayout, ThetaVector};
use isoc_core::simulator::simulate_batch;
use isoc_core::soc::{control_pass, evaluate_expected_cost, filter_pass, solve_ao, AoConfig, AoInit};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn theta(s: &[f64], sigma: &[f64]) -> ThetaVector {
    ThetaVector::new(DVector::from_column_slice(s), DVector::from_column_slice(sigma))
}

#[test]
fn lqg_case_matches_riccati_and_kalman_after_one_sweep() {
    for seed in 0..5 {
        let sys = random_system(seed, 25);
        let cs = basic_cost(&sys);
        let th = theta(&[1.0, 0.5, 0.2, 0.1, 0.3], &[0.1, 0.2, 0.05, 0.3, 0.2, 0.0, 0.0]);
        let costs = assemble_cost(&th, &cs).unwrap();
        let noise = assemble_noise(&th, &sys).unwrap();
        let (gains, report) = solve_ao(&sys, &costs, &noise, &AoInit::LqgKalman, &AoConfig::default()).unwrap();
        assert_eq!(report.sweeps, 1, "seed {seed}");
        let (l_ref, k_ref) = (lqr_oracle(&sys, &costs), kalman_oracle(&sys, &noise));
        for t in 0..sys.horizon() {
            assert!(rel_err(&gains.l[t], &l_ref[t]) < 1e-9, "L seed {seed} t {t}");
            assert!(rel_err(&gains.k[t], &k_ref[t]) < 1e-9, "K seed {seed} t {t}");
        }
    }
}

#[test]
fn nothing_to_regulate_gives_zero_control_gains() {
    let sys = toy_system(10, 0.1);
    let cs = basic_cost(&sys);
    let th = theta(&[0.0, 0.0, 0.0, 1.0], &[0.1, 0.1, 0.2, 0.2, 0.3, 0.1]);
    let costs = assemble_cost(&th, &cs).unwrap();
    let noise = assemble_noise(&th, &sys).unwrap();
    let k = vec![DMatrix::zeros(2, 2); 10];
    let (l, vm) = control_pass(&sys, &costs, &noise, &k).unwrap();
    assert!(l.iter().all(|lt| lt.amax() == 0.0));
    assert_eq!(vm.zx[10], costs.q_terminal);
    assert!(vm.ze[10].amax() == 0.0);
}

#[test]
fn no_uncertainty_gives_zero_filter_gains() {
    let sys = toy_system(10, 0.0);
    let cs = basic_cost(&sys);
    // Σ^α = 0, σ^u = 0, x0_cov = 0; sensory noise present but irrelevant
    let th = theta(&[1.0, 1.0, 0.1, 1.0], &[0.0, 0.0, 0.2, 0.2, 0.0, 0.3]);
    let noise = assemble_noise(&th, &sys).unwrap();
    let costs = assemble_cost(&th, &cs).unwrap();
    let (l, _) = control_pass(&sys, &costs, &noise, &vec![DMatrix::zeros(2, 2); 10]).unwrap();
    let (k, fc) = filter_pass(&sys, &noise, &l).unwrap();
    assert!(k.iter().all(|kt| kt.amax() == 0.0));
    assert!(fc.pe.iter().all(|p| p.amax() == 0.0));
}

#[test]
fn precondition_errors() {
    let sys = toy_system(5, 0.0);
    let cs = basic_cost(&sys);
    let zero_r = theta(&[1.0, 1.0, 0.1, 0.0], &[0.1, 0.1, 0.2, 0.2, 0.0, 0.0]);
    let costs = assemble_cost(&zero_r, &cs).unwrap();
    let noise = assemble_noise(&zero_r, &sys).unwrap();
    let res = solve_ao(&sys, &costs, &noise, &AoInit::LqgKalman, &AoConfig::default());
    assert!(matches!(res, Err(Error::Precondition(_))));
    let no_sensor_noise = theta(&[1.0, 1.0, 0.1, 1.0], &[0.1, 0.1, 0.0, 0.2, 0.0, 0.0]);
    let costs = assemble_cost(&no_sensor_noise, &cs).unwrap();
    let noise = assemble_noise(&no_sensor_noise, &sys).unwrap();
    let res = solve_ao(&sys, &costs, &noise, &AoInit::LqgKalman, &AoConfig::default());
    assert!(matches!(res, Err(Error::Precondition(_))));
}

#[test]
fn sweep_cap_reports_non_convergence() {
    let setup = reaching(20);
    let th = setup.theta_true.clone().unwrap();
    let costs = assemble_cost(&th, &setup.cost).unwrap();
    let noise = assemble_noise(&th, &setup.system).unwrap();
    let cfg = AoConfig { max_sweeps: 1, ..AoConfig::default() };
    match solve_ao(&setup.system, &costs, &noise, &AoInit::Zero, &cfg) {
        Err(Error::NonConvergence { report }) => assert_eq!(report.sweeps, 1),
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn zero_and_kalman_initializations_reach_the_same_fixed_point() {
    let setup = reaching(50);
    let th = setup.theta_true.clone().unwrap();
    let costs = assemble_cost(&th, &setup.cost).unwrap();
    let noise = assemble_noise(&th, &setup.system).unwrap();
    let cfg = AoConfig::default();
    let (a, _) = solve_ao(&setup.system, &costs, &noise, &AoInit::LqgKalman, &cfg).unwrap();
    let (b, _) = solve_ao(&setup.system, &costs, &noise, &AoInit::Zero, &cfg).unwrap();
    for t in 0..50 {
        assert!((&a.l[t] - &b.l[t]).amax() / a.l[t].amax().max(1.0) < 1e-8, "L t {t}");
        assert!((&a.k[t] - &b.k[t]).amax() / a.k[t].amax().max(1.0) < 1e-8, "K t {t}");
    }
}

#[test]
fn converged_gains_are_a_fixed_point() {
    let setup = reaching(50);
    let th = setup.theta_true.clone().unwrap();
    let costs = assemble_cost(&th, &setup.cost).unwrap();
    let noise = assemble_noise(&th, &setup.system).unwrap();
    let cfg = AoConfig::default();
    let (g, report) = solve_ao(&setup.system, &costs, &noise, &AoInit::LqgKalman, &cfg).unwrap();
    assert!(report.converged && report.sweeps > 1);
    let (l, _) = control_pass(&setup.system, &costs, &noise, &g.k).unwrap();
    let (k, _) = filter_pass(&setup.system, &noise, &l).unwrap();
    for t in 0..50 {
        assert!((&l[t] - &g.l[t]).amax() / g.l[t].amax().max(1.0) < cfg.tol_gains);
        assert!((&k[t] - &g.k[t]).amax() / g.k[t].amax().max(1.0) < cfg.tol_gains);
    }
}

#[test]
fn deterministic_zero_start_costs_nothing() {
    let mut sys = toy_system(10, 0.0);
    sys = sys.with_initial(DVector::zeros(2), DMatrix::zeros(2, 2)).unwrap();
    let cs = basic_cost(&sys);
    let th = theta(&[1.0, 1.0, 0.1, 1.0], &[0.0, 0.0, 0.2, 0.2, 0.0, 0.0]);
    let costs = assemble_cost(&th, &cs).unwrap();
    let noise = assemble_noise(&th, &sys).unwrap();
    let (g, _) = solve_ao(&sys, &costs, &noise, &AoInit::LqgKalman, &AoConfig::default()).unwrap();
    assert_eq!(evaluate_expected_cost(&sys, &costs, &noise, &g).unwrap(), 0.0);
}

#[test]
fn expected_cost_matches_monte_carlo_average() {
    let sys = random_system(3, 20);
    let cs = basic_cost(&sys);
    let th = theta(&[1.0, 0.5, 0.2, 0.1, 0.3], &[0.1, 0.2, 0.05, 0.3, 0.2, 0.4, 0.2]);
    let costs = assemble_cost(&th, &cs).unwrap();
    let noise = assemble_noise(&th, &sys).unwrap();
    let (g, _) = solve_ao(&sys, &costs, &noise, &AoInit::LqgKalman, &AoConfig::default()).unwrap();
    let exact = evaluate_expected_cost(&sys, &costs, &noise, &g).unwrap();

    let n_roll = 100_000;
    let batch = simulate_batch(&sys, &noise, &g, n_roll, 11).unwrap();
    let horizon = sys.horizon();
    let quad = |q: &DMatrix<f64>, v: &[f64]| {
        let v = DVector::from_column_slice(v);
        (v.transpose() * q * &v)[(0, 0)]
    };
    let per_rollout: Vec<f64> = (0..n_roll)
        .map(|r| {
            let mut c = quad(&costs.q_terminal, batch.state(r, horizon));
            for t in 0..horizon {
                let u = -&g.l[t] * DVector::from_column_slice(batch.estimate(r, t));
                c += quad(costs.q(t), batch.state(r, t)) + (u.transpose() * &costs.r * &u)[(0, 0)];
            }
            c
        })
        .collect();
    let mean = per_rollout.iter().sum::<f64>() / n_roll as f64;
    let var = per_rollout.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n_roll - 1) as f64;
    let se = (var / n_roll as f64).sqrt();
    assert!((mean - exact).abs() < 3.0 * se, "exact {exact}, sample {mean} ± {se}");
}

fn reaching_theta_strategy() -> impl Strategy<Value = u64> {
    any::<u64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn ao_cost_is_monotone_and_value_matrices_symmetric(seed in reaching_theta_strategy()) {
        let setup = reaching(15);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat = uniform_in(&setup.feasible, &mut rng);
        let th = ThetaVector::from_flat(&flat, &ThetaLayout::new(&setup.system, &setup.cost)).unwrap();
        let costs = assemble_cost(&th, &setup.cost).unwrap();
        let noise = assemble_noise(&th, &setup.system).unwrap();
        let (g, report) = solve_ao(&setup.system, &costs, &noise, &AoInit::LqgKalman, &AoConfig::default()).unwrap();
        let h = &report.expected_cost_history;
        for w in h.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-8 * w[0].abs().max(1.0), "cost rose: {:?}", h);
        }
        let (_, vm) = control_pass(&setup.system, &costs, &noise, &g.k).unwrap();
        prop_assert!(vm.max_asymmetry < 1e-10 * vm.zx[0].amax().max(1.0));
        let (_, fc) = filter_pass(&setup.system, &noise, &g.l).unwrap();
        for t in 0..fc.pe.len() {
            let scale = fc.pe[t].amax().max(fc.pxh[t].amax()).max(1.0);
            prop_assert!(min_eigenvalue(&fc.pe[t]) >= -1e-10 * scale);
            prop_assert!(min_eigenvalue(&fc.pxh[t]) >= -1e-10 * scale);
        }
    }
}
