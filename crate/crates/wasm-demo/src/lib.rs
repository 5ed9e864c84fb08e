//! Browser bindings for the reaching example.
//!
//! A [`Demo`] holds the scaled reaching model and analytic ground truth at
//! θ*. The page edits θ and calls one of three operations:
//!
//! - [`Demo::moments`]: mean hand path with standard deviations, plus
//!   `J_ISOC` against the ground truth,
//! - [`Demo::rollouts`]: simulated hand paths,
//! - [`Demo::slice`]: `J_ISOC` on a grid in the plane of two θ components.
//!
//! All results are flat `f64` arrays so they cross into JavaScript as
//! `Float64Array` without serialization.

use isoc_core::experiment::{self, generate_gt, GtMode, Setup};
use isoc_core::model::ThetaVector;
use isoc_core::objective::{IsocProblem, Objective};
use isoc_core::reaching::ReachingConfig;
use isoc_core::simulator::simulate_batch;
use wasm_bindgen::prelude::*;

/// Values per time step in [`Demo::moments`]: `p_x, p_y, sd_x, sd_y`.
pub const MOMENT_STRIDE: usize = 4;

#[wasm_bindgen]
pub struct Demo {
    setup: Setup,
    problem: IsocProblem,
}

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Demo {
    /// Reaching example over `horizon` steps of 10 ms.
    #[wasm_bindgen(constructor)]
    pub fn new(horizon: usize) -> Result<Demo, JsError> {
        let cfg = ReachingConfig { horizon, ..ReachingConfig::default() };
        let setup = Setup::reaching(&cfg).map_err(err)?;
        let gt = generate_gt(&setup, GtMode::Analytic).map_err(err)?.build().map_err(err)?;
        let problem = setup.problem(gt).map_err(err)?;
        Ok(Demo { setup, problem })
    }

    pub fn horizon(&self) -> usize {
        self.setup.system.horizon()
    }

    #[wasm_bindgen(js_name = thetaTrue)]
    pub fn theta_true(&self) -> Vec<f64> {
        self.setup.theta_true.as_ref().map(ThetaVector::to_flat).unwrap_or_default()
    }

    #[wasm_bindgen(js_name = lowerBounds)]
    pub fn lower_bounds(&self) -> Vec<f64> {
        self.setup.feasible.lower().to_vec()
    }

    #[wasm_bindgen(js_name = upperBounds)]
    pub fn upper_bounds(&self) -> Vec<f64> {
        self.setup.feasible.upper().to_vec()
    }

    /// `J_ISOC(θ)`; NaN where the forward problem fails.
    pub fn objective(&self, theta: &[f64]) -> f64 {
        self.problem.try_value(theta).unwrap_or(f64::NAN)
    }

    /// Mean position and its standard deviation per axis for
    /// `t = 0..=N`, [`MOMENT_STRIDE`] values per step.
    pub fn moments(&self, theta: &[f64]) -> Result<Vec<f64>, JsError> {
        let theta = ThetaVector::from_flat(theta, &self.setup.layout()).map_err(err)?;
        let mt = self.setup.forward(&theta).map_err(err)?.moments;
        let mut out = Vec::with_capacity(mt.len() * MOMENT_STRIDE);
        for t in 0..mt.len() {
            let cov = mt.cov_x(t);
            out.extend([mt.mean_x[t][0], mt.mean_x[t][1], cov[(0, 0)].max(0.0).sqrt(), cov[(1, 1)].max(0.0).sqrt()]);
        }
        Ok(out)
    }

    /// `n` simulated hand paths, rollout-major, `(p_x, p_y)` per step.
    pub fn rollouts(&self, theta: &[f64], n: usize, seed: u32) -> Result<Vec<f64>, JsError> {
        let theta = ThetaVector::from_flat(theta, &self.setup.layout()).map_err(err)?;
        let fwd = self.setup.forward(&theta).map_err(err)?;
        let batch = simulate_batch(&self.setup.system, &fwd.noise, &fwd.gains, n, u64::from(seed)).map_err(err)?;
        let mut out = Vec::with_capacity(n * (batch.horizon + 1) * 2);
        for r in 0..n {
            for t in 0..=batch.horizon {
                out.extend_from_slice(&batch.state(r, t)[..2]);
            }
        }
        Ok(out)
    }

    /// `J_ISOC` on a `steps × steps` grid in the plane of components `i`
    /// and `j` (1-based) through θ*, row-major in `i`; NaN marks failures.
    pub fn slice(&self, i: usize, j: usize, steps: usize) -> Result<Vec<f64>, JsError> {
        if i == 0 || j == 0 {
            return Err(JsError::new("components are 1-based"));
        }
        let grid = experiment::slice_scan(&self.problem, &self.theta_true(), i - 1, j - 1, steps).map_err(err)?;
        Ok(grid.j.into_iter().flatten().map(|v| v.unwrap_or(f64::NAN)).collect())
    }

    /// Axis values of component `i` (1-based) used by [`Demo::slice`].
    #[wasm_bindgen(js_name = sliceAxis)]
    pub fn slice_axis(&self, i: usize, steps: usize) -> Vec<f64> {
        if i == 0 || i > self.problem.dim() {
            return Vec::new();
        }
        experiment::slice_axis(&self.theta_true(), i - 1, steps)
    }
}
