//! Shared fixtures and textbook oracles, written independently of the
//! library recursions.
#![allow(dead_code)]

use isoc_core::experiment::{generate_gt, GtMode, Setup};
use isoc_core::model::{CostMatrices, CostStructure, FeasibleSet, LqsSystem, NoiseParams, SystemParts};
use isoc_core::objective::{IsocProblem, Objective};
use isoc_core::reaching::ReachingConfig;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Double integrator with position/velocity sensing.
pub fn toy_system(horizon: usize, x0_cov: f64) -> LqsSystem {
    LqsSystem::new(SystemParts {
        a: vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0])],
        b: vec![DMatrix::from_row_slice(2, 1, &[0.0, 0.1])],
        h: vec![DMatrix::identity(2, 2)],
        f_list: vec![DMatrix::identity(1, 1)],
        g_list: vec![DMatrix::identity(2, 2)],
        alpha_dim: 2,
        alpha_pattern: vec![(0, 0), (1, 1)],
        beta_dim: 2,
        beta_pattern: vec![(0, 0), (1, 1)],
        horizon,
        x0_mean: DVector::from_vec(vec![1.0, -0.5]),
        x0_cov: DMatrix::identity(2, 2) * x0_cov,
    })
    .unwrap()
}

/// Random 3-state, 2-input, 2-output system with one control- and one
/// state-noise shape.
pub fn random_system(seed: u64, horizon: usize) -> LqsSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mat = |r: usize, c: usize, s: f64| DMatrix::from_fn(r, c, |_, _| s * (2.0 * rng.random::<f64>() - 1.0));
    let a = DMatrix::identity(3, 3) + mat(3, 3, 0.15);
    let b = mat(3, 2, 0.5);
    let h = mat(2, 3, 1.0) + DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let f = mat(2, 2, 1.0);
    let g = mat(3, 3, 1.0);
    let x0_mean = DVector::from_iterator(3, mat(3, 1, 1.0).iter().copied());
    let l0 = mat(3, 3, 0.3);
    LqsSystem::new(SystemParts {
        a: vec![a],
        b: vec![b],
        h: vec![h],
        f_list: vec![f],
        g_list: vec![g],
        alpha_dim: 3,
        alpha_pattern: vec![(0, 0), (1, 1), (2, 2)],
        beta_dim: 2,
        beta_pattern: vec![(0, 0), (1, 1)],
        horizon,
        x0_mean,
        x0_cov: &l0 * l0.transpose(),
    })
    .unwrap()
}

/// Cost with two terminal terms, one running term and one effort term per
/// input.
pub fn basic_cost(sys: &LqsSystem) -> CostStructure {
    let n = sys.n_states();
    let m = sys.n_inputs();
    let unit = |len: usize, i: usize| {
        let mut v = DVector::zeros(len);
        v[i] = 1.0;
        v
    };
    CostStructure::new(
        sys,
        vec![unit(n, 0), unit(n, 1)],
        vec![vec![DVector::from_element(n, 1.0 / (n as f64).sqrt())]],
        (0..m).map(|i| unit(m, i)).collect(),
    )
    .unwrap()
}

pub fn reaching(horizon: usize) -> Setup {
    Setup::reaching(&ReachingConfig { horizon, ..ReachingConfig::default() }).unwrap()
}

pub fn reaching_problem(horizon: usize) -> (Setup, IsocProblem) {
    let setup = reaching(horizon);
    let gt = generate_gt(&setup, GtMode::Analytic).unwrap().build().unwrap();
    let problem = setup.problem(gt).unwrap();
    (setup, problem)
}

/// Separable least-squares landscape on `[0, 1]^dim` with value
/// `Σ ((θ_i − p)(θ_i − q))² − 1`. Every corner of `{p, q}^dim` is a global
/// minimum at −1. Damped Gauss–Newton steps never cross the critical point
/// `(p + q)/2` of a coordinate, so the solver's region of attraction of
/// `(p, …, p)` is exactly `[0, (p + q)/2)^dim`.
pub struct DoubleWell {
    pub dim: usize,
    pub p: f64,
    pub q: f64,
}

impl DoubleWell {
    pub fn bounds(&self) -> FeasibleSet {
        FeasibleSet::new(vec![0.0; self.dim], vec![1.0; self.dim]).unwrap()
    }

    /// Fraction of the box that drains into `(p, …, p)`.
    pub fn target_basin_ratio(&self) -> f64 {
        (0.5 * (self.p + self.q)).powi(self.dim as i32)
    }

    pub fn at_target(&self, theta: &[f64]) -> bool {
        theta.iter().all(|t| (t - self.p).abs() < 1e-6)
    }

    pub fn in_target_basin(&self, theta: &[f64]) -> bool {
        theta.iter().all(|t| *t < 0.5 * (self.p + self.q))
    }
}

impl Objective for DoubleWell {
    fn dim(&self) -> usize {
        self.dim
    }

    fn try_value(&self, theta: &[f64]) -> Option<f64> {
        Some(self.residuals(theta)?.norm_squared() - 1.0)
    }

    fn residuals(&self, theta: &[f64]) -> Option<DVector<f64>> {
        Some(DVector::from_iterator(self.dim, theta.iter().map(|t| (t - self.p) * (t - self.q))))
    }

    fn residual_offset(&self) -> f64 {
        -1.0
    }
}

pub fn uniform_in(u: &FeasibleSet, rng: &mut ChaCha8Rng) -> Vec<f64> {
    u.lower().iter().zip(u.upper()).map(|(a, b)| a + (b - a) * rng.random::<f64>()).collect()
}

/// Finite-horizon LQR gains by the textbook Riccati recursion.
pub fn lqr_oracle(sys: &LqsSystem, costs: &CostMatrices) -> Vec<DMatrix<f64>> {
    let horizon = sys.horizon();
    let mut p = costs.q_terminal.clone();
    let mut gains = vec![DMatrix::zeros(0, 0); horizon];
    for t in (0..horizon).rev() {
        let (a, b) = (sys.a(t), sys.b(t));
        let s = &costs.r + b.transpose() * &p * b;
        let l = s.try_inverse().unwrap() * b.transpose() * &p * a;
        p = costs.q(t) + a.transpose() * &p * (a - b * &l);
        p = 0.5 * (&p + p.transpose());
        gains[t] = l;
    }
    gains
}

/// Predictor-form Kalman gains `K_t = A P Hᵀ (H P Hᵀ + Ω^ω)⁻¹` with
/// `P_{t+1} = Ω^ξ + (A − K H) P Aᵀ`, `P_0 = Σ_0`.
pub fn kalman_oracle(sys: &LqsSystem, noise: &NoiseParams) -> Vec<DMatrix<f64>> {
    let omega_xi = &noise.sigma_alpha * noise.sigma_alpha.transpose();
    let omega_om = &noise.sigma_beta * noise.sigma_beta.transpose();
    let mut p = sys.x0_cov().clone();
    let mut gains = Vec::with_capacity(sys.horizon());
    for t in 0..sys.horizon() {
        let (a, h) = (sys.a(t), sys.h(t));
        let s = h * &p * h.transpose() + &omega_om;
        let k = a * &p * h.transpose() * s.try_inverse().unwrap();
        p = &omega_xi + (a - &k * h) * &p * a.transpose();
        p = 0.5 * (&p + p.transpose());
        gains.push(k);
    }
    gains
}

/// Mean and covariance of `[x; x̂]` for additive noise only:
/// `z_{t+1} = 𝒜_t z_t + [ξ_t; K_t ω_t]`.
pub fn lqg_moment_oracle(
    sys: &LqsSystem,
    noise: &NoiseParams,
    l: &[DMatrix<f64>],
    k: &[DMatrix<f64>],
) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
    let n = sys.n_states();
    let omega_xi = &noise.sigma_alpha * noise.sigma_alpha.transpose();
    let omega_om = &noise.sigma_beta * noise.sigma_beta.transpose();
    let mut mean = DVector::zeros(2 * n);
    mean.rows_mut(0, n).copy_from(sys.x0_mean());
    mean.rows_mut(n, n).copy_from(sys.x0_mean());
    let mut cov = DMatrix::zeros(2 * n, 2 * n);
    cov.view_mut((0, 0), (n, n)).copy_from(sys.x0_cov());
    let (mut means, mut covs) = (vec![mean.clone()], vec![cov.clone()]);
    for t in 0..sys.horizon() {
        let (a, b, h) = (sys.a(t), sys.b(t), sys.h(t));
        let mut cl = DMatrix::zeros(2 * n, 2 * n);
        cl.view_mut((0, 0), (n, n)).copy_from(a);
        cl.view_mut((0, n), (n, n)).copy_from(&(-(b * &l[t])));
        cl.view_mut((n, 0), (n, n)).copy_from(&(&k[t] * h));
        cl.view_mut((n, n), (n, n)).copy_from(&(a - &k[t] * h - b * &l[t]));
        let mut add = DMatrix::zeros(2 * n, 2 * n);
        add.view_mut((0, 0), (n, n)).copy_from(&omega_xi);
        add.view_mut((n, n), (n, n)).copy_from(&(&k[t] * &omega_om * k[t].transpose()));
        mean = &cl * mean;
        cov = &cl * cov * cl.transpose() + add;
        means.push(mean.clone());
        covs.push(cov.clone());
    }
    (means, covs)
}

/// VAF computed straight from the definition, one channel at a time.
pub fn vaf_oracle(pred: &[f64], gt: &[f64]) -> f64 {
    let mean = gt.iter().sum::<f64>() / gt.len() as f64;
    let sse: f64 = pred.iter().zip(gt).map(|(p, g)| (p - g).powi(2)).sum();
    let sst: f64 = gt.iter().map(|g| (g - mean).powi(2)).sum();
    1.0 - sse / sst
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Least-squares fit of a full bivariate polynomial of total degree
/// `degree`; returns R².
pub fn poly_fit_r2(points: &[(f64, f64, f64)], degree: usize) -> f64 {
    let mx = centre(points.iter().map(|p| p.0)).unwrap();
    let my = centre(points.iter().map(|p| p.1)).unwrap();
    let terms: Vec<(i32, i32)> = (0..=degree as i32).flat_map(|d| (0..=d).map(move |i| (d - i, i))).collect();
    let design = DMatrix::from_fn(points.len(), terms.len(), |r, c| {
        let (x, y) = ((points[r].0 - mx.0) / mx.1, (points[r].1 - my.0) / my.1);
        x.powi(terms[c].0) * y.powi(terms[c].1)
    });
    let z = DVector::from_iterator(points.len(), points.iter().map(|p| p.2));
    let coef = design.clone().svd(true, true).solve(&z, 1e-14).unwrap();
    let resid = &z - &design * coef;
    let mean = z.mean();
    1.0 - resid.norm_squared() / z.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
}

/// Midpoint and half-range, used to map a coordinate to [-1, 1].
fn centre(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    lo.is_finite().then(|| ((lo + hi) / 2.0, ((hi - lo) / 2.0).max(1e-300)))
}
