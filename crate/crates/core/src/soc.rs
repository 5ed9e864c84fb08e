//! Control and filter gains of the linear-quadratic sensorimotor problem.
//!
//! For a fixed filter sequence `K_t` the value function is
//! `V_t(x, e) = xᵀ Z^x_t x + eᵀ Z^e_t e + z_t` with `e = x − x̂`, and the
//! backward recursion (control-dependent noise `C_i = σ^u_i B F_i`,
//! state-dependent sensory noise `D_i = σ^x_i H G_i`) reads
//!
//! ```text
//! M_t    = R + Bᵀ Z^x B + Σ C_iᵀ (Z^x + Z^e) C_i
//! L_t    = M_t⁻¹ Bᵀ Z^x A
//! Z^x_t  = Q_t + Aᵀ Z^x (A − B L_t) + Σ D_iᵀ K_tᵀ Z^e K_t D_i
//! Z^e_t  = Aᵀ Z^x B L_t + (A − K_t H)ᵀ Z^e (A − K_t H)
//! z_t    = z_{t+1} + tr(Z^x Ω^ξ) + tr(Z^e (Ω^ξ + K_t Ω^ω K_tᵀ))
//! ```
//!
//! with `Z^x_N = Q_N`, `Z^e_N = 0`, all `Z` on the right taken at `t + 1`.
//! For a fixed control sequence the filter uses the uncentered second
//! moments `P^e = E[e eᵀ]`, `P^x̂ = E[x̂ x̂ᵀ]`, `P^x̂e = E[x̂ eᵀ]`:
//!
//! ```text
//! S_t  = H P^e Hᵀ + Ω^ω + Σ D_i (P^e + P^x̂ + P^x̂e + P^ex̂) D_iᵀ
//! K_t  = A P^e Hᵀ S_t⁻¹
//! ```
//!
//! propagated forward from `P^e_0 = Ω_0`, `P^x̂_0 = μ_0 μ_0ᵀ`, `P^x̂e_0 = 0`.
//! The propagation uses the closed-loop second-moment equations, valid for
//! any `K_t`; at the optimal `K_t` they coincide with the shortened forms
//! (e.g. `P^e_{t+1} = (A − K H) P^e Aᵀ + Ω^ξ + Σ C_i L P^x̂ Lᵀ C_iᵀ`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize};
use crate::model::{CostMatrices, LqsSystem, NoiseParams};
use crate::moments;

/// Control gains `L_t` (m×n) and filter gains `K_t` (n×r), `t = 0..N-1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub l: Vec<DMatrix<f64>>,
    pub k: Vec<DMatrix<f64>>,
}

impl GainSchedule {
    pub fn horizon(&self) -> usize {
        self.l.len()
    }

    pub(crate) fn check(&self, sys: &LqsSystem) -> Result<()> {
        let (n, m, r, horizon) = (sys.n_states(), sys.n_inputs(), sys.n_outputs(), sys.horizon());
        if self.l.len() != horizon || self.k.len() != horizon {
            return Err(Error::Structure(format!(
                "gain schedule must have {horizon} entries, has L: {}, K: {}",
                self.l.len(),
                self.k.len()
            )));
        }
        if self.l.iter().any(|l| l.shape() != (m, n)) || self.k.iter().any(|k| k.shape() != (n, r)) {
            return Err(Error::Structure("gain matrices have wrong shape".into()));
        }
        Ok(())
    }
}

/// Quadratic value-function matrices of the backward recursion.
#[derive(Clone, Debug)]
pub struct ValueMatrices {
    pub zx: Vec<DMatrix<f64>>,
    pub ze: Vec<DMatrix<f64>>,
    /// Constant part `z_t` of the value function.
    pub z: Vec<f64>,
    /// Largest asymmetry removed by per-step symmetrization.
    pub max_asymmetry: f64,
}

impl ValueMatrices {
    /// Expected total cost from the value function at `t = 0`:
    /// `tr(Z^x_0 (Ω_0 + μμᵀ)) + tr(Z^e_0 Ω_0) + z_0`.
    pub fn expected_cost(&self, sys: &LqsSystem) -> f64 {
        let second = sys.x0_cov() + linalg::outer(sys.x0_mean());
        (&self.zx[0] * second).trace() + (&self.ze[0] * sys.x0_cov()).trace() + self.z[0]
    }
}

/// Second moments used by the filter recursion.
#[derive(Clone, Debug)]
pub struct FilterCovariances {
    /// `E[e eᵀ]`.
    pub pe: Vec<DMatrix<f64>>,
    /// `E[x̂ x̂ᵀ]` (uncentered).
    pub pxh: Vec<DMatrix<f64>>,
    /// `E[x̂ eᵀ]`; the `e`–`x̂` term is its transpose.
    pub pxe: Vec<DMatrix<f64>>,
}

/// Progress of the alternating optimization.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AoReport {
    pub sweeps: usize,
    pub gain_delta_history: Vec<f64>,
    /// Expected cost after each sweep; empty unless cost tracking is enabled.
    pub expected_cost_history: Vec<f64>,
    pub converged: bool,
}

/// Stopping rule and bookkeeping for [`solve_ao`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AoConfig {
    pub tol_gains: f64,
    pub max_sweeps: usize,
    pub track_cost: bool,
}

impl Default for AoConfig {
    fn default() -> Self {
        Self { tol_gains: 1e-9, max_sweeps: 100, track_cost: true }
    }
}

/// Starting filter gains for the alternating optimization.
#[derive(Clone, Debug, Default)]
pub enum AoInit {
    /// Kalman gains of the additive-noise (LQG) problem.
    #[default]
    LqgKalman,
    Zero,
    Gains(Vec<DMatrix<f64>>),
}

fn check_r(r: &DMatrix<f64>) -> Result<()> {
    if !linalg::is_positive_definite(r) {
        return Err(Error::Precondition("R must be positive definite".into()));
    }
    Ok(())
}

fn check_omega(omega: &DMatrix<f64>) -> Result<()> {
    if !linalg::is_positive_definite(omega) {
        return Err(Error::Precondition("Σ^β Σ^βᵀ must be positive definite".into()));
    }
    Ok(())
}

/// Scaled control-noise maps `C_i = σ^u_i B F_i`.
fn control_noise_maps(noise: &NoiseParams, sys: &LqsSystem, t: usize) -> Vec<DMatrix<f64>> {
    sys.f_list()
        .iter()
        .zip(noise.sigma_u.iter())
        .filter(|(_, s)| **s != 0.0)
        .map(|(f, s)| sys.b(t) * f * *s)
        .collect()
}

/// Scaled sensory-noise maps `D_i = σ^x_i H G_i`.
fn sensory_noise_maps(noise: &NoiseParams, sys: &LqsSystem, t: usize) -> Vec<DMatrix<f64>> {
    sys.g_list()
        .iter()
        .zip(noise.sigma_x.iter())
        .filter(|(_, s)| **s != 0.0)
        .map(|(g, s)| sys.h(t) * g * *s)
        .collect()
}

/// Backward pass: optimal `L_t` for the given filter gains.
pub fn control_pass(
    sys: &LqsSystem,
    costs: &CostMatrices,
    noise: &NoiseParams,
    k: &[DMatrix<f64>],
) -> Result<(Vec<DMatrix<f64>>, ValueMatrices)> {
    let horizon = sys.horizon();
    let (n, r) = (sys.n_states(), sys.n_outputs());
    if k.len() != horizon || k.iter().any(|kt| kt.shape() != (n, r)) {
        return Err(Error::Structure(format!("filter gains must be {horizon} matrices of {n}x{r}")));
    }
    check_r(&costs.r)?;
    let omega_xi = noise.omega_xi();
    let omega_omega = noise.omega_omega();

    let mut zx = vec![DMatrix::zeros(n, n); horizon + 1];
    let mut ze = vec![DMatrix::zeros(n, n); horizon + 1];
    let mut z = vec![0.0; horizon + 1];
    let mut l = vec![DMatrix::zeros(sys.n_inputs(), n); horizon];
    zx[horizon] = costs.q_terminal.clone();
    let mut max_asymmetry = 0.0f64;

    for t in (0..horizon).rev() {
        let (a, b, h, kt) = (sys.a(t), sys.b(t), sys.h(t), &k[t]);
        let sx = &zx[t + 1];
        let se = &ze[t + 1];
        let sxb = sx * b;
        let mut m = &costs.r + b.transpose() * &sxb;
        let cs = control_noise_maps(noise, sys, t);
        if !cs.is_empty() {
            let s_sum = sx + se;
            for c in &cs {
                m += c.transpose() * &s_sum * c;
            }
        }
        symmetrize(&mut m);
        let rhs = sxb.transpose() * a;
        let lt = linalg::spd_solve(&m, &rhs).ok_or(Error::NumericalBlowup { stage: "control pass", t })?;

        let a_cl = a - b * &lt;
        let mut zx_t = costs.q(t) + a.transpose() * sx * &a_cl;
        for d in sensory_noise_maps(noise, sys, t) {
            let kd = kt * d;
            zx_t += kd.transpose() * se * &kd;
        }
        let a_e = a - kt * h;
        let mut ze_t = a.transpose() * &sxb * &lt + a_e.transpose() * se * &a_e;
        max_asymmetry = max_asymmetry.max(symmetrize(&mut zx_t)).max(symmetrize(&mut ze_t));

        let est_noise = &omega_xi + kt * &omega_omega * kt.transpose();
        z[t] = z[t + 1] + (sx * &omega_xi).trace() + (se * est_noise).trace();

        if !(linalg::is_finite(&zx_t) && linalg::is_finite(&ze_t) && linalg::is_finite(&lt)) {
            return Err(Error::NumericalBlowup { stage: "control pass", t });
        }
        zx[t] = zx_t;
        ze[t] = ze_t;
        l[t] = lt;
    }
    Ok((l, ValueMatrices { zx, ze, z, max_asymmetry }))
}

/// Forward pass: optimal non-adaptive filter gains for the given controls.
pub fn filter_pass(
    sys: &LqsSystem,
    noise: &NoiseParams,
    l: &[DMatrix<f64>],
) -> Result<(Vec<DMatrix<f64>>, FilterCovariances)> {
    let horizon = sys.horizon();
    let (n, m) = (sys.n_states(), sys.n_inputs());
    if l.len() != horizon || l.iter().any(|lt| lt.shape() != (m, n)) {
        return Err(Error::Structure(format!("control gains must be {horizon} matrices of {m}x{n}")));
    }
    let omega_omega = noise.omega_omega();
    check_omega(&omega_omega)?;
    let omega_xi = noise.omega_xi();

    let mut pe = Vec::with_capacity(horizon + 1);
    let mut pxh = Vec::with_capacity(horizon + 1);
    let mut pxe = Vec::with_capacity(horizon + 1);
    let mut gains = Vec::with_capacity(horizon);
    pe.push(sys.x0_cov().clone());
    pxh.push(linalg::outer(sys.x0_mean()));
    pxe.push(DMatrix::zeros(n, n));

    for t in 0..horizon {
        let (a, b, h, lt) = (sys.a(t), sys.b(t), sys.h(t), &l[t]);
        let (pe_t, pxh_t, pxe_t) = (&pe[t], &pxh[t], &pxe[t]);
        let ds = sensory_noise_maps(noise, sys, t);
        let cs = control_noise_maps(noise, sys, t);

        // innovation covariance, including state-dependent sensory noise
        let mut sensor = omega_omega.clone();
        if !ds.is_empty() {
            let pxx: DMatrix<f64> = pe_t + pxh_t + pxe_t + pxe_t.transpose();
            for d in &ds {
                sensor += d * &pxx * d.transpose();
            }
        }
        let h_pe = h * pe_t;
        let mut s = &h_pe * h.transpose() + &sensor;
        symmetrize(&mut s);
        let kt = linalg::spd_solve_guarded(&s, &(&h_pe * a.transpose()))
            .ok_or(Error::NumericalBlowup { stage: "filter pass", t })?
            .transpose();

        let a_cl = a - b * lt;
        let a_e = a - &kt * h;
        let k_sensor_k = &kt * &sensor * kt.transpose();
        let kh = &kt * h;

        let mut pe_next = &a_e * pe_t * a_e.transpose() + &omega_xi + &k_sensor_k;
        if !cs.is_empty() {
            let u2 = lt * pxh_t * lt.transpose();
            for c in &cs {
                pe_next += c * &u2 * c.transpose();
            }
        }
        let cross = &a_cl * pxe_t * kh.transpose();
        let mut pxh_next =
            &a_cl * pxh_t * a_cl.transpose() + &kh * pe_t * kh.transpose() + &cross + cross.transpose() + &k_sensor_k;
        let pxe_next = &a_cl * pxe_t * a_e.transpose() + &kh * pe_t * a_e.transpose() - &k_sensor_k;
        symmetrize(&mut pe_next);
        symmetrize(&mut pxh_next);

        if !(linalg::is_finite(&pe_next) && linalg::is_finite(&pxh_next) && linalg::is_finite(&pxe_next)) {
            return Err(Error::NumericalBlowup { stage: "filter pass", t });
        }
        gains.push(kt);
        pe.push(pe_next);
        pxh.push(pxh_next);
        pxe.push(pxe_next);
    }
    Ok((gains, FilterCovariances { pe, pxh, pxe }))
}

/// Time-varying Kalman gains of the additive-noise problem (`σ^u = σ^x = 0`).
pub fn lqg_kalman_gains(sys: &LqsSystem, noise: &NoiseParams) -> Result<Vec<DMatrix<f64>>> {
    let zero_l = vec![DMatrix::zeros(sys.n_inputs(), sys.n_states()); sys.horizon()];
    filter_pass(sys, &noise.additive_only(), &zero_l).map(|(k, _)| k)
}

/// Largest entry change, relative to the gain magnitude once that exceeds
/// one. A purely absolute test cannot pass for gains around 1e8, where the
/// iteration settles into a rounding-level two-cycle.
fn max_change(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax() / x.amax().max(1.0)).fold(0.0, f64::max)
}

/// Alternates [`control_pass`] and [`filter_pass`] until the gains stop moving.
///
/// Sweep `k` computes `L_k` from `K_{k-1}` and then `K_k` from `L_k`. The
/// sweep's gain change is the largest entry change in `K` (and in `L` from
/// the second sweep on), scaled by the per-step gain magnitude when it is
/// above one; the iteration stops once it drops below
/// `cfg.tol_gains`.
pub fn solve_ao(
    sys: &LqsSystem,
    costs: &CostMatrices,
    noise: &NoiseParams,
    init: &AoInit,
    cfg: &AoConfig,
) -> Result<(GainSchedule, AoReport)> {
    check_r(&costs.r)?;
    check_omega(&noise.omega_omega())?;
    let mut k = match init {
        AoInit::LqgKalman => lqg_kalman_gains(sys, noise)?,
        AoInit::Zero => vec![DMatrix::zeros(sys.n_states(), sys.n_outputs()); sys.horizon()],
        AoInit::Gains(k) => {
            if k.len() != sys.horizon() {
                return Err(Error::Structure("initial filter gains have wrong length".into()));
            }
            k.clone()
        }
    };
    let mut report = AoReport::default();
    let mut l_prev: Option<Vec<DMatrix<f64>>> = None;

    while report.sweeps < cfg.max_sweeps {
        let (l, _) = control_pass(sys, costs, noise, &k)?;
        let (k_new, _) = filter_pass(sys, noise, &l)?;
        report.sweeps += 1;
        let mut delta = max_change(&k_new, &k);
        if let Some(prev) = &l_prev {
            delta = delta.max(max_change(&l, prev));
        }
        report.gain_delta_history.push(delta);
        let gains = GainSchedule { l, k: k_new };
        if cfg.track_cost {
            report
                .expected_cost_history
                .push(evaluate_expected_cost(sys, costs, noise, &gains)?);
        }
        if delta < cfg.tol_gains {
            report.converged = true;
            return Ok((gains, report));
        }
        l_prev = Some(gains.l);
        k = gains.k;
    }
    Err(Error::NonConvergence { report: Box::new(report) })
}

/// `J = E[x_Nᵀ Q_N x_N + Σ_t x_tᵀ Q_t x_t + u_tᵀ R u_t]` from the exact
/// closed-loop moments, with `E[xᵀQx] = tr(Q Ω) + E[x]ᵀ Q E[x]` and
/// `u = −L x̂`.
pub fn evaluate_expected_cost(
    sys: &LqsSystem,
    costs: &CostMatrices,
    noise: &NoiseParams,
    gains: &GainSchedule,
) -> Result<f64> {
    let mt = moments::propagate_moments(sys, noise, gains)?;
    let n = sys.n_states();
    let quad = |q: &DMatrix<f64>, cov: &DMatrix<f64>, mean: &DVector<f64>| -> f64 {
        (q * cov).trace() + (mean.transpose() * q * mean)[(0, 0)]
    };
    let horizon = sys.horizon();
    let mut total = 0.0;
    for t in 0..horizon {
        let cov = &mt.cov_joint[t];
        let ox = cov.view((0, 0), (n, n)).into_owned();
        let oxh = cov.view((n, n), (n, n)).into_owned();
        total += quad(costs.q(t), &ox, &mt.mean_x[t]);
        let lt = &gains.l[t];
        let lrl = lt.transpose() * &costs.r * lt;
        total += quad(&lrl, &oxh, &mt.mean_xh[t]);
    }
    let cov = &mt.cov_joint[horizon];
    let ox = cov.view((0, 0), (n, n)).into_owned();
    total += quad(&costs.q_terminal, &ox, &mt.mean_x[horizon]);
    if !total.is_finite() {
        return Err(Error::NumericalBlowup { stage: "expected cost", t: horizon });
    }
    Ok(total)
}
