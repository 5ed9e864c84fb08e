mod common;

use common::*;
use isoc_core::model::{assemble_cost, assemble_noise, LqsSystem, NoiseParams, ThetaVector};
use isoc_core::moments::{propagate_moments, Selector};
use isoc_core::simulator::{estimate_moments, simulate_batch};
use isoc_core::soc::{solve_ao, AoConfig, AoInit, GainSchedule};
use nalgebra::DVector;

fn setup(sigma: &[f64]) -> (LqsSystem, NoiseParams, GainSchedule) {
    let sys = random_system(9, 10);
    let th = ThetaVector::new(DVector::from_vec(vec![1.0, 0.5, 0.2, 0.1, 0.3]), DVector::from_column_slice(sigma));
    let cs = basic_cost(&sys);
    let costs = assemble_cost(&th, &cs).unwrap();
    let noise = assemble_noise(&th, &sys).unwrap();
    let (gains, _) = solve_ao(&sys, &costs, &noise, &AoInit::LqgKalman, &AoConfig::default()).unwrap();
    (sys, noise, gains)
}

#[test]
fn silent_system_rolls_out_the_mean_trajectory() {
    let (sys, noise, gains) = setup(&[0.1, 0.2, 0.05, 0.3, 0.2, 0.4, 0.2]);
    let sys = sys.with_initial(sys.x0_mean().clone(), nalgebra::DMatrix::zeros(3, 3)).unwrap();
    let mut silent = noise.clone();
    silent.sigma_alpha.fill(0.0);
    silent.sigma_beta.fill(0.0);
    silent.sigma_u.fill(0.0);
    silent.sigma_x.fill(0.0);
    let mt = propagate_moments(&sys, &silent, &gains).unwrap();
    let batch = simulate_batch(&sys, &silent, &gains, 4, 1).unwrap();
    for r in 0..4 {
        for t in 0..=10 {
            let x = DVector::from_column_slice(batch.state(r, t));
            assert!((&x - &mt.mean_x[t]).amax() < 1e-13);
        }
    }
    let (_, cov) = estimate_moments(&batch, &Selector::identity(3)).unwrap();
    assert!(cov.iter().all(|c| c.amax() < 1e-26));
}

#[test]
fn batches_are_reproducible_and_seed_dependent() {
    let (sys, noise, gains) = setup(&[0.1, 0.2, 0.05, 0.3, 0.2, 0.4, 0.2]);
    let a = simulate_batch(&sys, &noise, &gains, 50, 4).unwrap();
    let b = simulate_batch(&sys, &noise, &gains, 50, 4).unwrap();
    assert_eq!(a, b);
    let c = simulate_batch(&sys, &noise, &gains, 50, 5).unwrap();
    assert_ne!(a.states, c.states);
    // rollout r does not depend on how many rollouts are drawn
    let d = simulate_batch(&sys, &noise, &gains, 10, 4).unwrap();
    assert_eq!(&a.states[..d.states.len()], d.states.as_slice());
}

#[cfg(feature = "parallel")]
#[test]
fn batches_do_not_depend_on_thread_count() {
    let (sys, noise, gains) = setup(&[0.1, 0.2, 0.05, 0.3, 0.2, 0.4, 0.2]);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_batch(&sys, &noise, &gains, 64, 8).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn mean_error_shrinks_like_one_over_sqrt_n() {
    let (sys, noise, gains) = setup(&[0.1, 0.2, 0.05, 0.3, 0.2, 0.4, 0.2]);
    let mt = propagate_moments(&sys, &noise, &gains).unwrap();
    let sel = Selector::identity(3);
    let avg_err = |n: usize| {
        let reps = 40;
        (0..reps)
            .map(|s| {
                let batch = simulate_batch(&sys, &noise, &gains, n, 1000 + s).unwrap();
                let (m, _) = estimate_moments(&batch, &sel).unwrap();
                (1..=10).map(|t| (&m[t] - &mt.mean_x[t]).norm()).sum::<f64>()
            })
            .sum::<f64>()
            / reps as f64
    };
    let ratio = avg_err(4000) / avg_err(1000);
    assert!((0.4..=0.6).contains(&ratio), "ratio {ratio}");
}
