//! Planar point-to-point reaching with a point-mass hand.
//!
//! State `x = [p_x, p_y, v_x, v_y, f_x, f_y, g_x, g_y]` (position, velocity,
//! muscle force, target), output `y = [p, v, f]`, two control inputs that
//! drive the force through a first-order low-pass filter. The measured
//! channels are position and velocity. The cost has six terminal terms
//! (position error to target, velocity, force; two axes each) and two
//! control-effort terms; noise enters through diagonal `Σ^α` (8 entries),
//! diagonal `Σ^β` (6 entries), one control-dependent and one
//! state-dependent scaling. This gives the 24-dimensional θ.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{assemble_cost, assemble_noise, CostStructure, FeasibleSet, LqsSystem, SystemParts, ThetaVector};
use crate::moments::{propagate_moments, restrict_moments, Selector};
use crate::objective::{GroundTruthData, IsocProblem};
use crate::soc::{solve_ao, AoConfig, AoInit};

/// Physical and discretization constants of the reaching task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachingConfig {
    pub horizon: usize,
    /// Seconds per step.
    pub dt: f64,
    /// Hand mass in kg.
    pub mass: f64,
    /// Muscle time constant in seconds.
    pub tau: f64,
    /// Target position in metres.
    pub target: [f64; 2],
    /// Common upper bound `b_i` of the feasible box.
    pub upper_bound: f64,
}

impl Default for ReachingConfig {
    fn default() -> Self {
        Self {
            horizon: 50,
            dt: 0.01,
            mass: 1.0,
            tau: 0.04,
            target: [0.1, 0.05],
            upper_bound: 2.0,
        }
    }
}

impl ReachingConfig {
    /// Shorter horizon used for desk-scale identification runs.
    pub fn scaled() -> Self {
        Self { horizon: 30, ..Self::default() }
    }
}

/// Fully instantiated identification problem for the reaching task.
#[derive(Clone, Debug)]
pub struct ReachingExample {
    pub config: ReachingConfig,
    pub system: LqsSystem,
    pub cost: CostStructure,
    pub theta_true: ThetaVector,
    pub feasible: FeasibleSet,
    pub selector: Selector,
    pub w_m: DVector<f64>,
    pub w_v: DVector<f64>,
}

pub const N_STATES: usize = 8;

fn unit(n: usize, i: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[i] = 1.0;
    v
}

/// Ground-truth cost weights `s*`.
pub fn true_cost_weights() -> Vec<f64> {
    let r = 1e-5 / 42.0;
    vec![1.0, 1.0, 0.04, 0.04, 0.0004, 0.0004, r, r]
}

/// Ground-truth noise scalings `σ*`.
pub fn true_noise_scalings() -> Vec<f64> {
    let mut sigma = vec![0.0; 8];
    sigma.extend([0.02, 0.02, 0.2, 0.2, 1.0, 1.0, 0.5, 0.1]);
    sigma
}

/// Lower bounds `a_i`: `1e-10` where positive definiteness of `R` and
/// `Σ^β Σ^βᵀ` needs strictly positive values, zero elsewhere.
pub fn lower_bounds() -> Vec<f64> {
    (1..=24)
        .map(|i| if i == 7 || i == 8 || (17..=22).contains(&i) { 1e-10 } else { 0.0 })
        .collect()
}

pub fn build_reaching_example(config: &ReachingConfig) -> Result<ReachingExample> {
    let n = N_STATES;
    let dt = config.dt;
    let mut a = DMatrix::identity(n, n);
    for axis in 0..2 {
        a[(axis, 2 + axis)] = dt;
        a[(2 + axis, 4 + axis)] = dt / config.mass;
        a[(4 + axis, 4 + axis)] = 1.0 - dt / config.tau;
    }
    let mut b = DMatrix::zeros(n, 2);
    b[(4, 0)] = dt / config.tau;
    b[(5, 1)] = dt / config.tau;
    let mut h = DMatrix::zeros(6, n);
    for i in 0..6 {
        h[(i, i)] = 1.0;
    }
    let mut x0_mean = DVector::zeros(n);
    x0_mean[6] = config.target[0];
    x0_mean[7] = config.target[1];

    let system = LqsSystem::new(SystemParts {
        a: vec![a],
        b: vec![b],
        h: vec![h],
        f_list: vec![DMatrix::identity(2, 2)],
        g_list: vec![DMatrix::identity(n, n)],
        alpha_dim: n,
        alpha_pattern: (0..n).map(|i| (i, i)).collect(),
        beta_dim: 6,
        beta_pattern: (0..6).map(|i| (i, i)).collect(),
        horizon: config.horizon,
        x0_mean,
        x0_cov: DMatrix::zeros(n, n),
    })?;

    let mut terminal = Vec::with_capacity(6);
    for axis in 0..2 {
        let mut q = unit(n, axis);
        q[6 + axis] = -1.0;
        terminal.push(q);
    }
    terminal.push(unit(n, 2));
    terminal.push(unit(n, 3));
    terminal.push(unit(n, 4));
    terminal.push(unit(n, 5));
    let control = vec![unit(2, 0), unit(2, 1)];
    let cost = CostStructure::new(&system, terminal, vec![], control)?;

    let theta_true = ThetaVector::new(
        DVector::from_vec(true_cost_weights()),
        DVector::from_vec(true_noise_scalings()),
    );
    let feasible = FeasibleSet::new(lower_bounds(), vec![config.upper_bound; 24])?;
    let selector = Selector::new(n, vec![0, 1, 2, 3])?;
    let w_m = DVector::from_element(4, 0.9);
    let mut w_v = DVector::zeros(16);
    for i in 0..4 {
        w_v[i * 4 + i] = 0.1;
    }
    Ok(ReachingExample {
        config: config.clone(),
        system,
        cost,
        theta_true,
        feasible,
        selector,
        w_m,
        w_v,
    })
}

impl ReachingExample {
    /// Exact model moments at `theta` on the measured channels, with the
    /// example's fit weights.
    pub fn ground_truth_at(&self, theta: &ThetaVector) -> Result<GroundTruthData> {
        let costs = assemble_cost(theta, &self.cost)?;
        let noise = assemble_noise(theta, &self.system)?;
        let ao = AoConfig { track_cost: false, ..AoConfig::default() };
        let (gains, _) = solve_ao(&self.system, &costs, &noise, &AoInit::LqgKalman, &ao)?;
        let mt = propagate_moments(&self.system, &noise, &gains)?;
        let (m, om) = restrict_moments(&mt, &self.selector)?;
        GroundTruthData::new(self.selector.clone(), m, om, self.w_m.clone(), self.w_v.clone())
    }

    /// Exact ground-truth moments at θ*.
    pub fn analytic_ground_truth(&self) -> Result<GroundTruthData> {
        self.ground_truth_at(&self.theta_true)
    }

    /// Identification problem against analytic ground truth.
    pub fn problem(&self) -> Result<IsocProblem> {
        IsocProblem::new(self.system.clone(), self.cost.clone(), self.analytic_ground_truth()?)
    }
}
