//! VAF fit metrics and the ISOC objective
//!
//! ```text
//! J_ISOC(θ) = −(w_mᵀ m^VAF + w_vᵀ vec(Ω^VAF)) / (‖w_m‖₁ + ‖w_v‖₁)
//! ```
//!
//! evaluated as θ → gains → moments → measured moments → VAF scores.
//! `vec` flattens the n̄×n̄ VAF matrix row-major.

use std::any::Any;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{structure, Error, Result};
use crate::model::{assemble_cost, assemble_noise, CostStructure, FeasibleSet, LqsSystem, ThetaLayout, ThetaVector};
use crate::moments::{propagate_moments, restrict_moments, Selector};
use crate::soc::{solve_ao, AoConfig, AoInit, GainSchedule};

/// Value reported for θ where the lower level fails.
pub const INFEASIBLE_PENALTY: f64 = 1.0;

/// Target moments of the measured channels plus fit weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthData {
    selector: Selector,
    m_hat: Vec<DVector<f64>>,
    om_hat: Vec<DMatrix<f64>>,
    w_m: DVector<f64>,
    w_v: DVector<f64>,
}

fn channel_stats(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (sum, count) = values.clone().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    let mean = sum / count as f64;
    let mut it = values.clone();
    let first = it.next();
    if first.is_some_and(|f| it.all(|v| v == f)) {
        // exact zero; the rounded mean need not equal the constant
        return (first.unwrap_or(0.0), 0.0);
    }
    let ss = values.map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, ss)
}

impl GroundTruthData {
    pub fn new(
        selector: Selector,
        m_hat: Vec<DVector<f64>>,
        om_hat: Vec<DMatrix<f64>>,
        w_m: DVector<f64>,
        w_v: DVector<f64>,
    ) -> Result<Self> {
        let k = selector.n_measured();
        if m_hat.len() < 2 || m_hat.len() != om_hat.len() {
            return Err(structure("ground-truth means and covariances need equal length ≥ 2"));
        }
        if m_hat.iter().any(|m| m.len() != k) || om_hat.iter().any(|o| o.shape() != (k, k)) {
            return Err(structure(format!("ground-truth moments must have {k} channels")));
        }
        if m_hat.iter().any(|m| m.iter().any(|v| !v.is_finite()))
            || om_hat.iter().any(|o| o.iter().any(|v| !v.is_finite()))
        {
            return Err(structure("ground-truth moments must be finite"));
        }
        if w_m.len() != k || w_v.len() != k * k {
            return Err(structure(format!("weights must have lengths {k} and {}", k * k)));
        }
        if w_m.iter().chain(w_v.iter()).any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(structure("weights must be nonnegative"));
        }
        if w_m.iter().chain(w_v.iter()).all(|w| *w == 0.0) {
            return Err(structure("weights must not all be zero"));
        }
        let gt = Self { selector, m_hat, om_hat, w_m, w_v };
        for i in 0..k {
            if gt.w_m[i] > 0.0 && gt.mean_channel_spread(i) <= 0.0 {
                return Err(Error::DegenerateChannel { channel: format!("mean[{i}]") });
            }
            for j in 0..k {
                if gt.w_v[i * k + j] > 0.0 && gt.cov_channel_spread(i, j) <= 0.0 {
                    return Err(Error::DegenerateChannel { channel: format!("cov[{i},{j}]") });
                }
            }
        }
        Ok(gt)
    }

    fn mean_channel_spread(&self, i: usize) -> f64 {
        channel_stats(self.m_hat.iter().map(|m| m[i])).1
    }

    fn cov_channel_spread(&self, i: usize, j: usize) -> f64 {
        channel_stats(self.om_hat.iter().map(|o| o[(i, j)])).1
    }

    pub fn selector(&self) -> &Selector {
        &self.selector
    }
    pub fn m_hat(&self) -> &[DVector<f64>] {
        &self.m_hat
    }
    pub fn om_hat(&self) -> &[DMatrix<f64>] {
        &self.om_hat
    }
    pub fn w_m(&self) -> &DVector<f64> {
        &self.w_m
    }
    pub fn w_v(&self) -> &DVector<f64> {
        &self.w_v
    }
    /// Number of time points, `N + 1`.
    pub fn len(&self) -> usize {
        self.m_hat.len()
    }
    pub fn is_empty(&self) -> bool {
        self.m_hat.is_empty()
    }
}

/// Result of one objective evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub j_isoc: f64,
    pub m_vaf: DVector<f64>,
    pub om_vaf: DMatrix<f64>,
    pub feasible: bool,
    pub failure_reason: Option<String>,
}

impl ObjectiveValue {
    fn infeasible(k: usize, reason: String) -> Self {
        Self {
            j_isoc: INFEASIBLE_PENALTY,
            m_vaf: DVector::from_element(k, f64::NAN),
            om_vaf: DMatrix::from_element(k, k, f64::NAN),
            feasible: false,
            failure_reason: Some(reason),
        }
    }
}

/// `1 − Σ_t (pred − gt)² / Σ_t (gt − mean(gt))²`; `None` if the denominator is 0.
fn vaf_channel(pred: impl Iterator<Item = f64>, gt: impl Iterator<Item = f64> + Clone) -> Option<f64> {
    let (_, denom) = channel_stats(gt.clone());
    let num: f64 = pred.zip(gt).map(|(p, g)| (p - g) * (p - g)).sum();
    (denom > 0.0).then(|| 1.0 - num / denom)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(structure(format!("prediction has {a} time points, ground truth {b}")));
    }
    Ok(())
}

/// Per-channel VAF of mean trajectories.
pub fn vaf_mean(pred: &[DVector<f64>], gt: &[DVector<f64>]) -> Result<DVector<f64>> {
    check_lengths(pred.len(), gt.len())?;
    let k = gt[0].len();
    if pred.iter().chain(gt).any(|v| v.len() != k) {
        return Err(structure("mean channels differ in size"));
    }
    let mut out = DVector::zeros(k);
    for i in 0..k {
        out[i] = vaf_channel(pred.iter().map(|p| p[i]), gt.iter().map(|g| g[i]))
            .ok_or_else(|| Error::DegenerateChannel { channel: format!("mean[{i}]") })?;
    }
    Ok(out)
}

/// Entrywise VAF of covariance trajectories.
pub fn vaf_cov(pred: &[DMatrix<f64>], gt: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    check_lengths(pred.len(), gt.len())?;
    let shape = gt[0].shape();
    if pred.iter().chain(gt).any(|m| m.shape() != shape) {
        return Err(structure("covariance channels differ in size"));
    }
    let mut out = DMatrix::zeros(shape.0, shape.1);
    for i in 0..shape.0 {
        for j in 0..shape.1 {
            out[(i, j)] = vaf_channel(pred.iter().map(|p| p[(i, j)]), gt.iter().map(|g| g[(i, j)]))
                .ok_or_else(|| Error::DegenerateChannel { channel: format!("cov[{i},{j}]") })?;
        }
    }
    Ok(out)
}

/// Weighted score of measured moments against ground truth. Channels whose
/// weight is zero and whose ground truth is constant are reported as NaN and
/// left out of the sum.
pub fn score_moments(pred_m: &[DVector<f64>], pred_om: &[DMatrix<f64>], gt: &GroundTruthData) -> Result<ObjectiveValue> {
    check_lengths(pred_m.len(), gt.len())?;
    check_lengths(pred_om.len(), gt.len())?;
    let k = gt.selector.n_measured();
    let mut m_vaf = DVector::zeros(k);
    let mut om_vaf = DMatrix::zeros(k, k);
    let mut weighted = 0.0;
    for i in 0..k {
        let v = vaf_channel(pred_m.iter().map(|p| p[i]), gt.m_hat.iter().map(|g| g[i])).unwrap_or(f64::NAN);
        m_vaf[i] = v;
        if gt.w_m[i] > 0.0 {
            weighted += gt.w_m[i] * v;
        }
    }
    for i in 0..k {
        for j in 0..k {
            let v = vaf_channel(pred_om.iter().map(|p| p[(i, j)]), gt.om_hat.iter().map(|g| g[(i, j)]))
                .unwrap_or(f64::NAN);
            om_vaf[(i, j)] = v;
            let w = gt.w_v[i * k + j];
            if w > 0.0 {
                weighted += w * v;
            }
        }
    }
    let norm = gt.w_m.iter().sum::<f64>() + gt.w_v.iter().sum::<f64>();
    let j_isoc = -weighted / norm;
    if !j_isoc.is_finite() {
        return Ok(ObjectiveValue::infeasible(k, "non-finite VAF score".into()));
    }
    Ok(ObjectiveValue { j_isoc, m_vaf, om_vaf, feasible: true, failure_reason: None })
}

/// Measured moments `(M E[x_t], M Ω^x_t Mᵀ)` predicted at θ.
type Prediction = (Vec<DVector<f64>>, Vec<DMatrix<f64>>);

/// Runs θ → gains → moments → measured moments. The inner `Err` carries the
/// reason a numerically failed θ is infeasible; the outer one is reserved
/// for structural mismatches.
pub fn predict_measured(
    theta: &ThetaVector,
    sys: &LqsSystem,
    cs: &CostStructure,
    gt: &GroundTruthData,
    ao: &AoConfig,
) -> Result<std::result::Result<Prediction, String>> {
    Ok(predict_with_gains(theta, sys, cs, gt, ao, &AoInit::LqgKalman)?.map(|(p, _)| p))
}

fn predict_with_gains(
    theta: &ThetaVector,
    sys: &LqsSystem,
    cs: &CostStructure,
    gt: &GroundTruthData,
    ao: &AoConfig,
    init: &AoInit,
) -> Result<std::result::Result<(Prediction, GainSchedule), String>> {
    if gt.len() != sys.horizon() + 1 {
        return Err(structure(format!(
            "ground truth has {} time points, system horizon needs {}",
            gt.len(),
            sys.horizon() + 1
        )));
    }
    if gt.selector.n_states() != sys.n_states() {
        return Err(structure("selector does not match the state dimension"));
    }
    let costs = assemble_cost(theta, cs)?;
    let noise = assemble_noise(theta, sys)?;
    if theta.s.iter().chain(theta.sigma.iter()).any(|v| !v.is_finite()) {
        return Ok(Err("non-finite theta".into()));
    }
    let gains = match solve_ao(sys, &costs, &noise, init, ao) {
        Ok((gains, _)) => gains,
        Err(Error::Structure(msg)) => return Err(Error::Structure(msg)),
        Err(e) => return Ok(Err(e.to_string())),
    };
    let mt = match propagate_moments(sys, &noise, &gains) {
        Ok(mt) => mt,
        Err(Error::Structure(msg)) => return Err(Error::Structure(msg)),
        Err(e) => return Ok(Err(e.to_string())),
    };
    Ok(Ok((restrict_moments(&mt, &gt.selector)?, gains)))
}

/// Full lower-level evaluation of `J_ISOC(θ)`.
///
/// Numerical failures of the SOC solve or the moment propagation are
/// returned as an infeasible value with `j_isoc = INFEASIBLE_PENALTY`;
/// only structural mismatches are errors.
pub fn evaluate_j_isoc(
    theta: &ThetaVector,
    sys: &LqsSystem,
    cs: &CostStructure,
    gt: &GroundTruthData,
    ao: &AoConfig,
) -> Result<ObjectiveValue> {
    match predict_measured(theta, sys, cs, gt, ao)? {
        Ok((m, om)) => score_moments(&m, &om, gt),
        Err(reason) => Ok(ObjectiveValue::infeasible(gt.selector.n_measured(), reason)),
    }
}

/// Weighted fit residuals with `‖r‖² = J_ISOC + 1`.
///
/// Every weighted channel `c` (weight `w_c`, ground-truth spread `SST_c`)
/// contributes `sqrt(w_c / (W SST_c)) (pred_{c,t} − gt_{c,t})` for each `t`,
/// `W = ‖w_m‖₁ + ‖w_v‖₁`. Means come first, then covariance entries
/// row-major.
pub fn fit_residuals(pred_m: &[DVector<f64>], pred_om: &[DMatrix<f64>], gt: &GroundTruthData) -> Result<DVector<f64>> {
    check_lengths(pred_m.len(), gt.len())?;
    check_lengths(pred_om.len(), gt.len())?;
    let k = gt.selector.n_measured();
    let norm = gt.w_m.iter().sum::<f64>() + gt.w_v.iter().sum::<f64>();
    let mut out = Vec::new();
    for i in 0..k {
        let w = gt.w_m[i];
        if w > 0.0 {
            let scale = (w / (norm * gt.mean_channel_spread(i))).sqrt();
            out.extend(pred_m.iter().zip(&gt.m_hat).map(|(p, g)| scale * (p[i] - g[i])));
        }
    }
    for i in 0..k {
        for j in 0..k {
            let w = gt.w_v[i * k + j];
            if w > 0.0 {
                let scale = (w / (norm * gt.cov_channel_spread(i, j))).sqrt();
                out.extend(pred_om.iter().zip(&gt.om_hat).map(|(p, g)| scale * (p[(i, j)] - g[(i, j)])));
            }
        }
    }
    Ok(DVector::from_vec(out))
}

/// Opaque per-solve state an objective may carry between evaluations.
pub type WarmStart = Option<Box<dyn Any + Send>>;

/// Anything the local and global solvers can minimize.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    /// Objective value, or `None` where the lower level fails.
    fn try_value(&self, theta: &[f64]) -> Option<f64>;

    /// Residuals `r` with `value = ‖r‖² + offset` for least-squares
    /// objectives; `None` if the objective has no such form or θ fails.
    fn residuals(&self, _theta: &[f64]) -> Option<DVector<f64>> {
        None
    }

    /// Constant `c` in `value = ‖r‖² + c`.
    fn residual_offset(&self) -> f64 {
        0.0
    }

    /// Residuals at `theta` and their Jacobian, for least-squares solvers.
    /// The default is [`fd_residual_jacobian`]. Implementations may reuse
    /// work between probes and leave state in `warm` for later calls along
    /// the same solver path.
    fn linearize(
        &self,
        theta: &[f64],
        bounds: &FeasibleSet,
        floor: f64,
        _warm: &mut WarmStart,
    ) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let r0 = self.residuals(theta)?;
        let jac = fd_residual_jacobian(|x: &[f64]| self.residuals(x), theta, &r0, bounds, floor);
        Some((r0, jac))
    }

    /// [`Objective::residuals`], optionally seeded from `warm`.
    fn residuals_from(&self, theta: &[f64], _warm: &WarmStart) -> Option<DVector<f64>> {
        self.residuals(theta)
    }

    /// Total function: failed points map to [`INFEASIBLE_PENALTY`].
    ///
    /// Feasible values are unbounded above, so solvers that compare values
    /// should use [`Objective::try_value`] and reject failed points.
    fn value(&self, theta: &[f64]) -> f64 {
        self.try_value(theta).unwrap_or(INFEASIBLE_PENALTY)
    }
}

/// The ISOC objective bound to a model and ground-truth data.
#[derive(Clone, Debug)]
pub struct IsocProblem {
    pub system: LqsSystem,
    pub cost: CostStructure,
    pub gt: GroundTruthData,
    pub ao: AoConfig,
    layout: ThetaLayout,
}

impl IsocProblem {
    pub fn new(system: LqsSystem, cost: CostStructure, gt: GroundTruthData) -> Result<Self> {
        if gt.len() != system.horizon() + 1 {
            return Err(structure("ground truth length does not match the horizon"));
        }
        if gt.selector.n_states() != system.n_states() {
            return Err(structure("selector does not match the state dimension"));
        }
        let layout = ThetaLayout::new(&system, &cost);
        let ao = AoConfig { track_cost: false, ..AoConfig::default() };
        Ok(Self { system, cost, gt, ao, layout })
    }

    pub fn layout(&self) -> &ThetaLayout {
        &self.layout
    }

    pub fn evaluate(&self, theta: &[f64]) -> Result<ObjectiveValue> {
        let theta = ThetaVector::from_flat(theta, &self.layout)?;
        evaluate_j_isoc(&theta, &self.system, &self.cost, &self.gt, &self.ao)
    }
}

impl Objective for IsocProblem {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn try_value(&self, theta: &[f64]) -> Option<f64> {
        match self.evaluate(theta) {
            Ok(v) if v.feasible && v.j_isoc.is_finite() => Some(v.j_isoc),
            _ => None,
        }
    }

    fn residuals(&self, theta: &[f64]) -> Option<DVector<f64>> {
        let theta = ThetaVector::from_flat(theta, &self.layout).ok()?;
        let (m, om) = predict_measured(&theta, &self.system, &self.cost, &self.gt, &self.ao).ok()?.ok()?;
        fit_residuals(&m, &om, &self.gt).ok().filter(|r| r.iter().all(|v| v.is_finite()))
    }

    fn residual_offset(&self) -> f64 {
        -1.0
    }

    /// Solves the base point to a tight gain tolerance (seeded from the
    /// previous base point's filter gains when available) and warm-starts
    /// every probe from the result. Probes then need a handful of sweeps
    /// instead of a full solve, and the difference quotients are not
    /// polluted by the stopping tolerance.
    fn linearize(
        &self,
        theta: &[f64],
        bounds: &FeasibleSet,
        floor: f64,
        warm: &mut WarmStart,
    ) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let tight = AoConfig { tol_gains: LINEARIZE_TOL, max_sweeps: 10 * self.ao.max_sweeps, ..self.ao };
        let base = ThetaVector::from_flat(theta, &self.layout).ok()?;
        let seeded = warm_gains(warm)
            .and_then(|k| predict_with_gains(&base, &self.system, &self.cost, &self.gt, &tight, &AoInit::Gains(k)).ok()?.ok());
        let solved = match seeded {
            Some(v) => Some(v),
            None => predict_with_gains(&base, &self.system, &self.cost, &self.gt, &tight, &AoInit::LqgKalman).ok()?.ok(),
        };
        let Some(((m, om), gains)) = solved else {
            let r0 = self.residuals(theta)?;
            let jac = fd_residual_jacobian(|x: &[f64]| self.residuals(x), theta, &r0, bounds, floor);
            return Some((r0, jac));
        };
        let r0 = fit_residuals(&m, &om, &self.gt).ok().filter(|r| r.iter().all(|v| v.is_finite()))?;
        let init = AoInit::Gains(gains.k.clone());
        let probe = |x: &[f64]| -> Option<DVector<f64>> {
            let th = ThetaVector::from_flat(x, &self.layout).ok()?;
            let ((m, om), _) = predict_with_gains(&th, &self.system, &self.cost, &self.gt, &tight, &init).ok()?.ok()?;
            fit_residuals(&m, &om, &self.gt).ok().filter(|r| r.iter().all(|v| v.is_finite()))
        };
        let jac = fd_residual_jacobian(probe, theta, &r0, bounds, floor);
        *warm = Some(Box::new(gains.k));
        Some((r0, jac))
    }

    fn residuals_from(&self, theta: &[f64], warm: &WarmStart) -> Option<DVector<f64>> {
        let Some(k) = warm_gains(warm) else {
            return self.residuals(theta);
        };
        let th = ThetaVector::from_flat(theta, &self.layout).ok()?;
        match predict_with_gains(&th, &self.system, &self.cost, &self.gt, &self.ao, &AoInit::Gains(k)).ok()? {
            Ok(((m, om), _)) => fit_residuals(&m, &om, &self.gt).ok().filter(|r| r.iter().all(|v| v.is_finite())),
            Err(_) => self.residuals(theta),
        }
    }
}

fn warm_gains(warm: &WarmStart) -> Option<Vec<DMatrix<f64>>> {
    warm.as_ref()?.downcast_ref::<Vec<DMatrix<f64>>>().cloned()
}

/// Gain tolerance for [`IsocProblem::linearize`].
const LINEARIZE_TOL: f64 = 1e-12;

/// Forward-difference Jacobian of `residuals` with step
/// `max(1e-6 |θ_i|, floor)`; backward at the upper bound or when the forward
/// probe fails. Columns whose probes both fail are left zero.
pub fn fd_residual_jacobian<F>(residuals: F, theta: &[f64], r0: &DVector<f64>, bounds: &FeasibleSet, floor: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Option<DVector<f64>> + Sync,
{
    let column = |i: usize| -> DVector<f64> {
        let h = (1e-6 * theta[i].abs()).max(floor);
        let probe = |delta: f64| {
            let v = theta[i] + delta;
            if v < bounds.lower()[i] || v > bounds.upper()[i] {
                return None;
            }
            let mut p = theta.to_vec();
            p[i] = v;
            residuals(&p).filter(|r| r.len() == r0.len())
        };
        if let Some(r) = probe(h) {
            (r - r0) / h
        } else if let Some(r) = probe(-h) {
            (r0 - r) / h
        } else {
            DVector::zeros(r0.len())
        }
    };
    #[cfg(feature = "parallel")]
    let cols: Vec<DVector<f64>> = {
        use rayon::prelude::*;
        (0..theta.len()).into_par_iter().map(column).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let cols: Vec<DVector<f64>> = (0..theta.len()).map(column).collect();
    if cols.is_empty() {
        return DMatrix::zeros(r0.len(), 0);
    }
    DMatrix::from_columns(&cols)
}

/// Finite-difference gradient with a per-component flag for probes that
/// fell back to a one-sided difference.
#[derive(Clone, Debug, PartialEq)]
pub struct FdGradient {
    pub grad: Vec<f64>,
    pub one_sided: Vec<bool>,
    pub evaluations: usize,
}

impl FdGradient {
    pub fn any_one_sided(&self) -> bool {
        self.one_sided.iter().any(|b| *b)
    }
}

/// Step `h_i = max(1e-6 |θ_i|, 1e-8)`.
pub fn fd_step(theta_i: f64) -> f64 {
    (1e-6 * theta_i.abs()).max(1e-8)
}

fn probe(obj: &dyn Objective, theta: &[f64], i: usize, delta: f64) -> Option<f64> {
    let mut x = theta.to_vec();
    x[i] += delta;
    obj.try_value(&x).filter(|v| v.is_finite())
}

fn component(obj: &dyn Objective, theta: &[f64], f0: f64, i: usize, bounds: Option<&FeasibleSet>) -> (f64, bool) {
    let h = fd_step(theta[i]);
    let fits = |d: f64| bounds.is_none_or(|b| theta[i] + d >= b.lower()[i] && theta[i] + d <= b.upper()[i]);
    let plus = if fits(h) { probe(obj, theta, i, h) } else { None };
    let minus = if fits(-h) { probe(obj, theta, i, -h) } else { None };
    match (plus, minus) {
        (Some(p), Some(m)) => ((p - m) / (2.0 * h), false),
        (Some(p), None) => ((p - f0) / h, true),
        (None, Some(m)) => ((f0 - m) / h, true),
        (None, None) => (0.0, true),
    }
}

/// Central-difference gradient. Probes that leave `bounds` or hit an
/// infeasible point fall back to the one-sided difference on the other side.
pub fn finite_diff_gradient(obj: &dyn Objective, theta: &[f64], f0: f64, bounds: Option<&FeasibleSet>) -> FdGradient {
    let dim = theta.len();
    #[cfg(feature = "parallel")]
    let parts: Vec<(f64, bool)> = {
        use rayon::prelude::*;
        (0..dim).into_par_iter().map(|i| component(obj, theta, f0, i, bounds)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<(f64, bool)> = (0..dim).map(|i| component(obj, theta, f0, i, bounds)).collect();
    FdGradient {
        grad: parts.iter().map(|p| p.0).collect(),
        one_sided: parts.iter().map(|p| p.1).collect(),
        evaluations: 2 * dim,
    }
}

/// Forward-difference gradient with the same step rule.
pub fn forward_diff_gradient(obj: &dyn Objective, theta: &[f64], f0: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|i| {
            let h = fd_step(theta[i]);
            let mut x = theta.to_vec();
            x[i] += h;
            (obj.value(&x) - f0) / h
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: &[f64]) -> Vec<DVector<f64>> {
        v.iter().map(|x| DVector::from_element(1, *x)).collect()
    }

    #[test]
    fn vaf_exact_match_is_one() {
        let gt = scalar(&[0.0, 1.0, 3.0]);
        assert_eq!(vaf_mean(&gt, &gt).unwrap()[0], 1.0);
    }

    #[test]
    fn vaf_of_time_mean_is_zero() {
        let gt = scalar(&[0.0, 1.0, 5.0]);
        let pred = scalar(&[2.0, 2.0, 2.0]);
        assert!(vaf_mean(&pred, &gt).unwrap()[0].abs() < 1e-15);
    }

    #[test]
    fn vaf_hand_case() {
        // denominators (−1)² + 0² + 1² = 2, numerator 1
        let gt = scalar(&[0.0, 1.0, 2.0]);
        let pred = scalar(&[0.0, 1.0, 1.0]);
        assert_eq!(vaf_mean(&pred, &gt).unwrap()[0], 0.5);
    }

    #[test]
    fn vaf_degenerate_channel_is_named() {
        let gt = scalar(&[1.0, 1.0, 1.0]);
        match vaf_mean(&gt, &gt) {
            Err(Error::DegenerateChannel { channel }) => assert_eq!(channel, "mean[0]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn vaf_cov_constant_at_mean_is_zero() {
        let gt: Vec<DMatrix<f64>> = [1.0, 2.0, 6.0].iter().map(|v| DMatrix::from_element(2, 2, *v)).collect();
        let pred = vec![DMatrix::from_element(2, 2, 3.0); 3];
        let v = vaf_cov(&pred, &gt).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-15));
        assert!(vaf_cov(&gt, &gt).unwrap().iter().all(|x| *x == 1.0));
    }

    #[test]
    fn vaf_length_mismatch_is_structural() {
        assert!(vaf_mean(&scalar(&[0.0, 1.0]), &scalar(&[0.0, 1.0, 2.0])).is_err());
    }

    #[test]
    fn ground_truth_rejects_bad_weights_and_degenerate_channels() {
        let sel = Selector::new(2, vec![0]).unwrap();
        let m = scalar(&[0.0, 1.0, 2.0]);
        let om: Vec<DMatrix<f64>> = [0.0, 0.1, 0.3].iter().map(|v| DMatrix::from_element(1, 1, *v)).collect();
        let ok = GroundTruthData::new(
            sel.clone(),
            m.clone(),
            om.clone(),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
        );
        assert!(ok.is_ok());
        let negative = GroundTruthData::new(
            sel.clone(),
            m.clone(),
            om.clone(),
            DVector::from_element(1, -1.0),
            DVector::from_element(1, 1.0),
        );
        assert!(negative.is_err());
        let zero = GroundTruthData::new(
            sel.clone(),
            m.clone(),
            om.clone(),
            DVector::zeros(1),
            DVector::zeros(1),
        );
        assert!(zero.is_err());
        let flat = vec![DMatrix::from_element(1, 1, 0.2); 3];
        let degenerate = GroundTruthData::new(
            sel.clone(),
            m.clone(),
            flat.clone(),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
        );
        assert!(matches!(degenerate, Err(Error::DegenerateChannel { .. })));
        // unweighted constant channel is allowed
        let unweighted = GroundTruthData::new(sel, m, flat, DVector::from_element(1, 1.0), DVector::zeros(1));
        assert!(unweighted.is_ok());
    }

    struct Quadratic;
    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            2
        }
        fn try_value(&self, x: &[f64]) -> Option<f64> {
            Some((x[0] - 0.5).powi(2) + 3.0 * x[1] * x[1] + x[0] * x[1])
        }
    }

    #[test]
    fn central_difference_on_quadratic() {
        let x = [0.2, -0.4];
        let f0 = Quadratic.value(&x);
        let g = finite_diff_gradient(&Quadratic, &x, f0, None);
        assert!((g.grad[0] - (2.0 * (0.2 - 0.5) - 0.4)).abs() < 1e-8);
        assert!((g.grad[1] - (6.0 * -0.4 + 0.2)).abs() < 1e-8);
        assert!(!g.any_one_sided());
    }

    #[test]
    fn one_sided_fallback_at_bound() {
        let set = FeasibleSet::new(vec![0.2, -1.0], vec![1.0, 1.0]).unwrap();
        let x = [0.2, 0.0];
        let f0 = Quadratic.value(&x);
        let g = finite_diff_gradient(&Quadratic, &x, f0, Some(&set));
        assert!(g.one_sided[0]);
        assert!(!g.one_sided[1]);
        assert!((g.grad[0] - (2.0 * (0.2 - 0.5))).abs() < 1e-6);
    }
}
