//! Exact closed-loop mean and covariance of the joint process `[x; x̂]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{structure, Error, Result};
use crate::linalg::{self, symmetrize};
use crate::model::{LqsSystem, NoiseParams};
use crate::soc::GainSchedule;

/// Mean and joint covariance of state and estimate for `t = 0..=N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentTrajectory {
    pub mean_x: Vec<DVector<f64>>,
    pub mean_xh: Vec<DVector<f64>>,
    /// `[[Ω^x, Ω^{x x̂}], [Ω^{x̂ x}, Ω^{x̂}]]`, 2n×2n.
    pub cov_joint: Vec<DMatrix<f64>>,
}

impl MomentTrajectory {
    pub fn n_states(&self) -> usize {
        self.mean_x[0].len()
    }
    pub fn len(&self) -> usize {
        self.mean_x.len()
    }
    pub fn is_empty(&self) -> bool {
        self.mean_x.is_empty()
    }
    /// `Ω^x_t`.
    pub fn cov_x(&self, t: usize) -> DMatrix<f64> {
        let n = self.n_states();
        self.cov_joint[t].view((0, 0), (n, n)).into_owned()
    }
    /// `Ω^{x̂}_t`.
    pub fn cov_xh(&self, t: usize) -> DMatrix<f64> {
        let n = self.n_states();
        self.cov_joint[t].view((n, n), (n, n)).into_owned()
    }
    /// `Ω^{x x̂}_t`.
    pub fn cov_x_xh(&self, t: usize) -> DMatrix<f64> {
        let n = self.n_states();
        self.cov_joint[t].view((0, n), (n, n)).into_owned()
    }
}

/// Row selector `M`: the identity with unmeasured rows deleted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selector {
    n: usize,
    rows: Vec<usize>,
}

impl Selector {
    pub fn new(n: usize, rows: Vec<usize>) -> Result<Self> {
        if rows.is_empty() {
            return Err(structure("selector must keep at least one row"));
        }
        let mut seen = vec![false; n];
        for &r in &rows {
            if r >= n {
                return Err(structure(format!("selector row {r} outside state dimension {n}")));
            }
            if seen[r] {
                return Err(structure(format!("selector row {r} repeated")));
            }
            seen[r] = true;
        }
        Ok(Self { n, rows })
    }

    pub fn identity(n: usize) -> Self {
        Self { n, rows: (0..n).collect() }
    }

    /// Accepts an explicit 0/1 matrix with one 1 per row and full row rank.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let mut rows = Vec::with_capacity(m.nrows());
        for i in 0..m.nrows() {
            let mut col = None;
            for j in 0..m.ncols() {
                match m[(i, j)] {
                    0.0 => {}
                    v if v == 1.0 && col.is_none() => col = Some(j),
                    _ => return Err(structure(format!("selector row {i} is not a unit row"))),
                }
            }
            rows.push(col.ok_or_else(|| structure(format!("selector row {i} is zero")))?);
        }
        Self::new(m.ncols(), rows)
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }
    pub fn n_states(&self) -> usize {
        self.n
    }
    pub fn n_measured(&self) -> usize {
        self.rows.len()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), self.n);
        for (i, &r) in self.rows.iter().enumerate() {
            m[(i, r)] = 1.0;
        }
        m
    }

    pub fn apply_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|&r| v[r]))
    }

    /// `M S Mᵀ`.
    pub fn apply_mat(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.rows.len();
        DMatrix::from_fn(k, k, |i, j| s[(self.rows[i], self.rows[j])])
    }
}

/// Propagates `E[[x; x̂]]` and the joint covariance through the closed loop
///
/// ```text
/// 𝒜_t = [[A, −B L_t], [K_t H, A − K_t H − B L_t]]
/// Ω_{t+1} = 𝒜_t Ω_t 𝒜_tᵀ + diag(Ω^ξ + Ω̄^x̂_t, K_t Ω^ω K_tᵀ + Ω̄^x_t)
/// ```
///
/// where `Ω̄^x̂_t = Σ σ_u² B F L (Ω^x̂ + E[x̂]E[x̂]ᵀ) Lᵀ Fᵀ Bᵀ` and
/// `Ω̄^x_t = Σ σ_x² K H G (Ω^x + E[x]E[x]ᵀ) Gᵀ Hᵀ Kᵀ`.
pub fn propagate_moments(sys: &LqsSystem, noise: &NoiseParams, gains: &GainSchedule) -> Result<MomentTrajectory> {
    gains.check(sys)?;
    let n = sys.n_states();
    let horizon = sys.horizon();
    let omega_xi = noise.omega_xi();
    let omega_omega = noise.omega_omega();

    let mut mean_x = Vec::with_capacity(horizon + 1);
    let mut mean_xh = Vec::with_capacity(horizon + 1);
    let mut cov_joint = Vec::with_capacity(horizon + 1);
    mean_x.push(sys.x0_mean().clone());
    mean_xh.push(sys.x0_mean().clone());
    let mut c0 = DMatrix::zeros(2 * n, 2 * n);
    c0.view_mut((0, 0), (n, n)).copy_from(sys.x0_cov());
    cov_joint.push(c0);

    let mut big_a = DMatrix::zeros(2 * n, 2 * n);
    for t in 0..horizon {
        let (a, b, h) = (sys.a(t), sys.b(t), sys.h(t));
        let (lt, kt) = (&gains.l[t], &gains.k[t]);
        let bl = b * lt;
        let kh = kt * h;
        big_a.view_mut((0, 0), (n, n)).copy_from(a);
        big_a.view_mut((0, n), (n, n)).copy_from(&(-&bl));
        big_a.view_mut((n, 0), (n, n)).copy_from(&kh);
        big_a.view_mut((n, n), (n, n)).copy_from(&(a - &kh - &bl));

        let cov = &cov_joint[t];
        let (mx, mxh): (&DVector<f64>, &DVector<f64>) = (&mean_x[t], &mean_xh[t]);
        let mut next = &big_a * cov * big_a.transpose();

        let mut top = omega_xi.clone();
        for (f, s) in sys.f_list().iter().zip(noise.sigma_u.iter()) {
            if *s != 0.0 {
                let second = cov.view((n, n), (n, n)) + mxh * mxh.transpose();
                let map = b * f * lt;
                top += (&map * second * map.transpose()) * (s * s);
            }
        }
        let mut bottom = kt * &omega_omega * kt.transpose();
        for (g, s) in sys.g_list().iter().zip(noise.sigma_x.iter()) {
            if *s != 0.0 {
                let second = cov.view((0, 0), (n, n)) + mx * mx.transpose();
                let map = &kh * g;
                bottom += (&map * second * map.transpose()) * (s * s);
            }
        }
        {
            let mut tl = next.view_mut((0, 0), (n, n));
            tl += &top;
        }
        {
            let mut br = next.view_mut((n, n), (n, n));
            br += &bottom;
        }
        symmetrize(&mut next);

        let joint_mean = DVector::from_iterator(2 * n, mx.iter().chain(mxh.iter()).copied());
        let next_mean = &big_a * joint_mean;
        if !(linalg::is_finite(&next) && next_mean.iter().all(|v| v.is_finite())) {
            return Err(Error::NumericalBlowup { stage: "moment propagation", t });
        }
        mean_x.push(next_mean.rows(0, n).into_owned());
        mean_xh.push(next_mean.rows(n, n).into_owned());
        cov_joint.push(next);
    }
    Ok(MomentTrajectory { mean_x, mean_xh, cov_joint })
}

/// Per-step means and covariances of the measured channels.
pub type MeasuredMoments = (Vec<DVector<f64>>, Vec<DMatrix<f64>>);

/// `m_t = M E[x_t]`, `Om_t = M Ω^x_t Mᵀ`.
pub fn restrict_moments(mt: &MomentTrajectory, sel: &Selector) -> Result<MeasuredMoments> {
    if sel.n_states() != mt.n_states() {
        return Err(structure(format!(
            "selector expects {} states, trajectory has {}",
            sel.n_states(),
            mt.n_states()
        )));
    }
    let n = mt.n_states();
    let means = mt.mean_x.iter().map(|m| sel.apply_vec(m)).collect();
    let covs = mt
        .cov_joint
        .iter()
        .map(|c| {
            let k = sel.n_measured();
            let rows = sel.rows();
            debug_assert!(rows.iter().all(|&r| r < n));
            DMatrix::from_fn(k, k, |i, j| c[(rows[i], rows[j])])
        })
        .collect();
    Ok((means, covs))
}
