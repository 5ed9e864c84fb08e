//! Box-constrained local solvers with finite-difference derivatives.
//!
//! Both methods fix the variables that sit on a bound with the gradient
//! pushing outward and step on the free ones, projecting every trial point
//! back into the box.
//!
//! - Levenberg–Marquardt, for objectives of the form `‖r(θ)‖² + c`:
//!   `(JᵀJ + μ diag(JᵀJ)) δ = −Jᵀr` with a forward-difference Jacobian and
//!   Nielsen's damping update. The diagonal scaling makes steps invariant to
//!   the units of each θ_i, which matters when parameters differ by many
//!   orders of magnitude.
//! - Projected BFGS for general objectives: a quasi-Newton direction and
//!   Armijo backtracking along `P(θ + t d)`, with the inverse-Hessian
//!   estimate reset when the direction fails to descend or the search stalls.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::FeasibleSet;
use crate::objective::{finite_diff_gradient, Objective, WarmStart};

/// Local search method; least squares falls back to BFGS when the
/// objective exposes no residuals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalMethod {
    #[default]
    LevenbergMarquardt,
    ProjectedBfgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalSolverConfig {
    /// Stop when the projected gradient's ∞-norm falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step moves no component by more than this
    /// (absolute for BFGS, relative to `|θ_i|` for Levenberg–Marquardt).
    pub step_tol: f64,
    /// Stop when an accepted step lowers the minimized function by less
    /// than `f_tol · max(1, |f|)`.
    pub f_tol: f64,
    pub max_iters: usize,
    /// Backtracking halvings per line search (BFGS) or rejected damping
    /// increases per iteration (Levenberg–Marquardt).
    pub max_backtracks: usize,
    pub method: LocalMethod,
    /// Absolute floor of the forward-difference step in the
    /// Levenberg–Marquardt Jacobian; the step is
    /// `max(1e-6 |θ_i|, jacobian_floor)`.
    pub jacobian_floor: f64,
}

impl Default for LocalSolverConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            step_tol: 1e-10,
            f_tol: 1e-9,
            max_iters: 300,
            max_backtracks: 40,
            method: LocalMethod::LevenbergMarquardt,
            jacobian_floor: 1e-12,
        }
    }
}

impl LocalSolverConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.grad_tol > 0.0 && self.step_tol > 0.0 && self.f_tol > 0.0 && self.jacobian_floor > 0.0 && self.max_iters > 0 {
            Ok(())
        } else {
            Err(crate::Error::Precondition("local solver tolerances must be positive".into()))
        }
    }
}

/// Why the local solver stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalStatus {
    GradientTolerance,
    StepTolerance,
    FunctionTolerance,
    IterationLimit,
    /// No descent along the projected steepest-descent path.
    LineSearchFailed,
    /// The starting point itself is infeasible for the lower level.
    InfeasibleStart,
}

impl LocalStatus {
    /// True for the first-order and small-progress stops.
    pub fn converged(self) -> bool {
        matches!(self, Self::GradientTolerance | Self::StepTolerance | Self::FunctionTolerance)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalResult {
    pub theta_min: Vec<f64>,
    pub j_min: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LocalStatus,
}

/// `x − P(x − g)`: zero exactly at first-order points of the box problem.
fn projected_gradient(x: &[f64], g: &[f64], u: &FeasibleSet) -> Vec<f64> {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (xi, gi))| xi - (xi - gi).clamp(u.lower()[i], u.upper()[i]))
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Variables held at a bound because the gradient points out of the box.
fn active_set(x: &[f64], g: &[f64], u: &FeasibleSet) -> Vec<bool> {
    (0..x.len())
        .map(|i| (x[i] <= u.lower()[i] && g[i] > 0.0) || (x[i] >= u.upper()[i] && g[i] < 0.0))
        .collect()
}

/// Minimizes `obj` over `u` from `theta0` (clamped into `u` first).
pub fn local_solve(obj: &dyn Objective, theta0: &[f64], u: &FeasibleSet, cfg: &LocalSolverConfig) -> LocalResult {
    if cfg.method == LocalMethod::LevenbergMarquardt {
        let x = u.clamp(theta0);
        if let Some(r) = obj.residuals(&x) {
            return levenberg_marquardt(obj, x, r, u, cfg);
        }
    }
    projected_bfgs(obj, theta0, u, cfg)
}

/// Share of the remaining distance to a bound one step may cover.
const BOUNDARY_FRACTION: f64 = 0.99;

/// `x + δ`, truncated so that it covers at most [`BOUNDARY_FRACTION`] of
/// the distance to the bound it moves toward. Bounds are then approached
/// geometrically, as interior-point iterates do, instead of being hit in a
/// single jump across several orders of magnitude. A variable already on a
/// bound may leave it freely.
fn fraction_to_boundary(x: f64, delta: f64, lo: f64, hi: f64) -> f64 {
    if delta < 0.0 {
        (x + delta).max(lo + (1.0 - BOUNDARY_FRACTION) * (x - lo))
    } else {
        (x + delta).min(hi - (1.0 - BOUNDARY_FRACTION) * (hi - x))
    }
}

fn levenberg_marquardt(
    obj: &dyn Objective,
    mut x: Vec<f64>,
    mut r: DVector<f64>,
    u: &FeasibleSet,
    cfg: &LocalSolverConfig,
) -> LocalResult {
    let dim = x.len();
    let offset = obj.residual_offset();
    let mut f = r.norm_squared();
    let mut evaluations = 1;
    let mut iterations = 0;
    let mut mu = 1e-3;
    let mut nu = 2.0;
    // Running maximum of the Jacobian column norms. Letting the scale of a
    // column shrink when it turns insensitive would let round-off in that
    // column drive huge steps.
    let mut col_scale = vec![0.0f64; dim];
    let mut warm: WarmStart = None;

    let status = 'outer: loop {
        if iterations >= cfg.max_iters {
            break LocalStatus::IterationLimit;
        }
        let Some((r_lin, jac)) = obj.linearize(&x, u, cfg.jacobian_floor, &mut warm) else {
            break LocalStatus::LineSearchFailed;
        };
        evaluations += dim + 1;
        r = r_lin;
        f = r.norm_squared();
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let grad: Vec<f64> = g.iter().map(|v| 2.0 * v).collect();
        if inf_norm(&projected_gradient(&x, &grad, u)) <= cfg.grad_tol {
            break LocalStatus::GradientTolerance;
        }
        let active = active_set(&x, &grad, u);
        let free: Vec<usize> = (0..dim).filter(|&i| !active[i] && jtj[(i, i)] > 0.0).collect();
        if free.is_empty() {
            break LocalStatus::GradientTolerance;
        }
        // With `D` the column scales, the damped system is
        // `(ĴᵀĴ + μI) z = −Ĵᵀr`, `Ĵ = J D⁻¹`, `δ = D⁻¹ z`; it stays well
        // conditioned when column norms span many decades.
        for (i, c) in col_scale.iter_mut().enumerate() {
            *c = c.max(jtj[(i, i)].sqrt());
        }
        let scale: Vec<f64> = free.iter().map(|&i| col_scale[i]).collect();
        let mut jac_f = jac.select_columns(&free);
        for (c, d) in scale.iter().enumerate() {
            jac_f.column_mut(c).unscale_mut(*d);
        }
        let c_mat = jac_f.transpose() * &jac_f;
        let rhs = -(jac_f.transpose() * &r);

        let mut rejected = 0;
        loop {
            let mut lhs = c_mat.clone();
            for i in 0..free.len() {
                lhs[(i, i)] += mu;
            }
            let step = lhs
                .cholesky()
                .map(|c| c.solve(&rhs))
                .map(|z| DVector::from_iterator(z.len(), z.iter().zip(&scale).map(|(v, d)| v / d)));
            let mut trial = x.clone();
            if let Some(delta) = &step {
                for (idx, &i) in free.iter().enumerate() {
                    trial[i] = fraction_to_boundary(x[i], delta[idx], u.lower()[i], u.upper()[i]);
                }
            }
            let s = DVector::from_iterator(dim, trial.iter().zip(&x).map(|(a, b)| a - b));
            let predicted = f - (&r + &jac * &s).norm_squared();
            let trial_r = if step.is_some() && s.amax() > 0.0 { obj.residuals_from(&trial, &warm) } else { None };
            evaluations += 1;
            match trial_r {
                Some(tr) if predicted > 0.0 && tr.norm_squared() < f => {
                    let f_new = tr.norm_squared();
                    let rho = (f - f_new) / predicted;
                    mu *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
                    mu = mu.max(1e-15);
                    nu = 2.0;
                    iterations += 1;
                    let decrease = f - f_new;
                    let relative = s.iter().zip(&x).map(|(d, v)| d.abs() / (v.abs() + cfg.jacobian_floor)).fold(0.0, f64::max);
                    x = trial;
                    f = f_new;
                    if relative <= cfg.step_tol {
                        break 'outer LocalStatus::StepTolerance;
                    }
                    if decrease <= cfg.f_tol * f.abs().max(1.0) {
                        break 'outer LocalStatus::FunctionTolerance;
                    }
                    break;
                }
                _ => {
                    rejected += 1;
                    mu *= nu;
                    nu *= 2.0;
                    if rejected >= cfg.max_backtracks || !mu.is_finite() {
                        break 'outer LocalStatus::LineSearchFailed;
                    }
                }
            }
        }
    };
    // Values along the path may come from seeded lower-level solves; report
    // the reference evaluation at the end point.
    let j_min = obj.try_value(&x).unwrap_or(f + offset);
    LocalResult { theta_min: x, j_min, iterations, evaluations: evaluations + 1, status }
}

fn projected_bfgs(obj: &dyn Objective, theta0: &[f64], u: &FeasibleSet, cfg: &LocalSolverConfig) -> LocalResult {
    let dim = theta0.len();
    let mut x = u.clamp(theta0);
    let mut evaluations = 1;
    let Some(mut f) = obj.try_value(&x) else {
        let j_min = obj.value(&x);
        return LocalResult { theta_min: x, j_min, iterations: 0, evaluations, status: LocalStatus::InfeasibleStart };
    };
    let grad = |x: &[f64], f: f64, evals: &mut usize| {
        let g = finite_diff_gradient(obj, x, f, Some(u));
        *evals += g.evaluations;
        g.grad
    };
    let mut g = grad(&x, f, &mut evaluations);
    let mut h_inv = DMatrix::<f64>::identity(dim, dim);
    let mut fresh = true;
    let mut iterations = 0;

    let status = loop {
        if inf_norm(&projected_gradient(&x, &g, u)) <= cfg.grad_tol {
            break LocalStatus::GradientTolerance;
        }
        if iterations >= cfg.max_iters {
            break LocalStatus::IterationLimit;
        }
        let active = active_set(&x, &g, u);
        let free_g = DVector::from_iterator(dim, g.iter().zip(&active).map(|(gi, a)| if *a { 0.0 } else { *gi }));
        let mut d = -(&h_inv * &free_g);
        for i in 0..dim {
            if active[i] {
                d[i] = 0.0;
            }
        }
        if d.dot(&free_g) >= 0.0 {
            h_inv.fill_with_identity();
            fresh = true;
            d = -free_g.clone();
        }
        if fresh {
            // First step after a reset: move at most 10% of the widest box side.
            let widest = u.widths().into_iter().fold(0.0f64, f64::max);
            let scale = 0.1 * widest / d.amax().max(1e-300);
            if scale < 1.0 {
                d *= scale;
            }
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let trial: Vec<f64> = (0..dim).map(|i| (x[i] + step * d[i]).clamp(u.lower()[i], u.upper()[i])).collect();
            let moved: f64 = (0..dim).map(|i| g[i] * (trial[i] - x[i])).sum();
            evaluations += 1;
            if let Some(f_trial) = obj.try_value(&trial) {
                if f_trial <= f + 1e-4 * moved && f_trial < f {
                    accepted = Some((trial, f_trial));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if fresh {
                break LocalStatus::LineSearchFailed;
            }
            h_inv.fill_with_identity();
            fresh = true;
            continue;
        };
        iterations += 1;

        let s = DVector::from_iterator(dim, x_new.iter().zip(&x).map(|(a, b)| a - b));
        let decrease = f - f_new;
        x = x_new;
        f = f_new;
        if inf_norm(s.as_slice()) <= cfg.step_tol {
            break LocalStatus::StepTolerance;
        }
        if decrease <= cfg.f_tol * f.abs().max(1.0) {
            break LocalStatus::FunctionTolerance;
        }
        let g_new = grad(&x, f, &mut evaluations);
        let y = DVector::from_iterator(dim, g_new.iter().zip(&g).map(|(a, b)| a - b));
        g = g_new;

        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if fresh {
                // Shanno scaling of the initial inverse Hessian.
                h_inv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ, expanded.
            h_inv.ger(-rho, &hy, &s, 1.0);
            h_inv.ger(-rho, &s, &hy, 1.0);
            h_inv.ger(rho * rho * yhy + rho, &s, &s, 1.0);
            fresh = false;
        }
    };
    LocalResult { theta_min: x, j_min: f, iterations, evaluations, status }
}
