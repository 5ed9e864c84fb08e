//! Model structure: system matrices, rank-one cost bases, the parameter
//! vector θ = [s; σ] and the box-shaped feasible set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{structure, Error, Result};
use crate::linalg;

/// Known structural part of a linear-quadratic sensorimotor system.
///
/// `A`, `B` and `H` may be given once (time-invariant) or once per step
/// `t = 0..N-1`. Noise scalings are not part of the system; they live in θ
/// and are placed into `Σ^α` / `Σ^β` at the positions listed by the patterns.
#[derive(Clone, Debug, PartialEq)]
pub struct LqsSystem {
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    h: Vec<DMatrix<f64>>,
    f_list: Vec<DMatrix<f64>>,
    g_list: Vec<DMatrix<f64>>,
    alpha_dim: usize,
    alpha_pattern: Vec<(usize, usize)>,
    beta_dim: usize,
    beta_pattern: Vec<(usize, usize)>,
    horizon: usize,
    x0_mean: DVector<f64>,
    x0_cov: DMatrix<f64>,
}

/// Plain constructor input for [`LqsSystem`].
#[derive(Clone, Debug)]
pub struct SystemParts {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub h: Vec<DMatrix<f64>>,
    pub f_list: Vec<DMatrix<f64>>,
    pub g_list: Vec<DMatrix<f64>>,
    /// Number of columns `p` of `Σ^α` (n×p).
    pub alpha_dim: usize,
    pub alpha_pattern: Vec<(usize, usize)>,
    /// Number of columns `q` of `Σ^β` (r×q).
    pub beta_dim: usize,
    pub beta_pattern: Vec<(usize, usize)>,
    pub horizon: usize,
    pub x0_mean: DVector<f64>,
    pub x0_cov: DMatrix<f64>,
}

fn check_series(name: &str, mats: &[DMatrix<f64>], horizon: usize, rows: usize, cols: usize) -> Result<()> {
    if mats.is_empty() || (mats.len() != 1 && mats.len() != horizon) {
        return Err(structure(format!(
            "{name} must hold 1 or N = {horizon} matrices, got {}",
            mats.len()
        )));
    }
    for (t, m) in mats.iter().enumerate() {
        if m.shape() != (rows, cols) {
            return Err(structure(format!(
                "{name}[{t}] is {}x{}, expected {rows}x{cols}",
                m.nrows(),
                m.ncols()
            )));
        }
        if !linalg::is_finite(m) {
            return Err(structure(format!("{name}[{t}] has non-finite entries")));
        }
    }
    Ok(())
}

fn check_pattern(name: &str, pattern: &[(usize, usize)], rows: usize, cols: usize) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for &(i, j) in pattern {
        if i >= rows || j >= cols {
            return Err(structure(format!(
                "{name} pattern entry ({i},{j}) outside {rows}x{cols}"
            )));
        }
        if !seen.insert((i, j)) {
            return Err(structure(format!("{name} pattern entry ({i},{j}) repeated")));
        }
    }
    Ok(())
}

impl LqsSystem {
    pub fn new(parts: SystemParts) -> Result<Self> {
        let SystemParts {
            a,
            b,
            h,
            f_list,
            g_list,
            alpha_dim,
            alpha_pattern,
            beta_dim,
            beta_pattern,
            horizon,
            x0_mean,
            x0_cov,
        } = parts;
        if horizon < 1 {
            return Err(structure("horizon N must be at least 1"));
        }
        let n = a.first().map(|m| m.nrows()).ok_or_else(|| structure("A is empty"))?;
        let m = b.first().map(|m| m.ncols()).ok_or_else(|| structure("B is empty"))?;
        let r = h.first().map(|m| m.nrows()).ok_or_else(|| structure("H is empty"))?;
        if n == 0 || m == 0 || r == 0 {
            return Err(structure("state, input and output dimensions must be positive"));
        }
        check_series("A", &a, horizon, n, n)?;
        check_series("B", &b, horizon, n, m)?;
        check_series("H", &h, horizon, r, n)?;
        for (i, f) in f_list.iter().enumerate() {
            if f.shape() != (m, m) {
                return Err(structure(format!("F[{i}] must be {m}x{m}")));
            }
        }
        for (i, g) in g_list.iter().enumerate() {
            if g.shape() != (n, n) {
                return Err(structure(format!("G[{i}] must be {n}x{n}")));
            }
        }
        check_pattern("sigma_alpha", &alpha_pattern, n, alpha_dim)?;
        check_pattern("sigma_beta", &beta_pattern, r, beta_dim)?;
        if x0_mean.len() != n {
            return Err(structure(format!("x0_mean must have length {n}")));
        }
        if x0_cov.shape() != (n, n) {
            return Err(structure(format!("x0_cov must be {n}x{n}")));
        }
        let asym = (&x0_cov - x0_cov.transpose()).amax();
        if asym > 1e-12 {
            return Err(structure(format!("x0_cov is not symmetric (max asymmetry {asym:e})")));
        }
        if linalg::min_eigenvalue(&x0_cov) < -1e-12 {
            return Err(structure("x0_cov is not positive semidefinite"));
        }
        Ok(Self {
            a,
            b,
            h,
            f_list,
            g_list,
            alpha_dim,
            alpha_pattern,
            beta_dim,
            beta_pattern,
            horizon,
            x0_mean,
            x0_cov,
        })
    }

    pub fn n_states(&self) -> usize {
        self.a[0].nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b[0].ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.h[0].nrows()
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn a(&self, t: usize) -> &DMatrix<f64> {
        pick(&self.a, t)
    }
    pub fn b(&self, t: usize) -> &DMatrix<f64> {
        pick(&self.b, t)
    }
    pub fn h(&self, t: usize) -> &DMatrix<f64> {
        pick(&self.h, t)
    }
    pub fn a_series(&self) -> &[DMatrix<f64>] {
        &self.a
    }
    pub fn b_series(&self) -> &[DMatrix<f64>] {
        &self.b
    }
    pub fn h_series(&self) -> &[DMatrix<f64>] {
        &self.h
    }
    pub fn f_list(&self) -> &[DMatrix<f64>] {
        &self.f_list
    }
    pub fn g_list(&self) -> &[DMatrix<f64>] {
        &self.g_list
    }
    pub fn alpha_dim(&self) -> usize {
        self.alpha_dim
    }
    pub fn beta_dim(&self) -> usize {
        self.beta_dim
    }
    pub fn alpha_pattern(&self) -> &[(usize, usize)] {
        &self.alpha_pattern
    }
    pub fn beta_pattern(&self) -> &[(usize, usize)] {
        &self.beta_pattern
    }
    pub fn x0_mean(&self) -> &DVector<f64> {
        &self.x0_mean
    }
    pub fn x0_cov(&self) -> &DMatrix<f64> {
        &self.x0_cov
    }

    /// Same structure with a different horizon. Per-step matrices are
    /// truncated or the last one repeated.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        let resize = |v: &[DMatrix<f64>]| -> Vec<DMatrix<f64>> {
            if v.len() == 1 {
                v.to_vec()
            } else {
                (0..horizon).map(|t| v[t.min(v.len() - 1)].clone()).collect()
            }
        };
        Self::new(SystemParts {
            a: resize(&self.a),
            b: resize(&self.b),
            h: resize(&self.h),
            f_list: self.f_list.clone(),
            g_list: self.g_list.clone(),
            alpha_dim: self.alpha_dim,
            alpha_pattern: self.alpha_pattern.clone(),
            beta_dim: self.beta_dim,
            beta_pattern: self.beta_pattern.clone(),
            horizon,
            x0_mean: self.x0_mean.clone(),
            x0_cov: self.x0_cov.clone(),
        })
    }

    /// Copy with replaced initial moments.
    pub fn with_initial(&self, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let mut parts = self.parts();
        parts.x0_mean = mean;
        parts.x0_cov = cov;
        Self::new(parts)
    }

    pub fn parts(&self) -> SystemParts {
        SystemParts {
            a: self.a.clone(),
            b: self.b.clone(),
            h: self.h.clone(),
            f_list: self.f_list.clone(),
            g_list: self.g_list.clone(),
            alpha_dim: self.alpha_dim,
            alpha_pattern: self.alpha_pattern.clone(),
            beta_dim: self.beta_dim,
            beta_pattern: self.beta_pattern.clone(),
            horizon: self.horizon,
            x0_mean: self.x0_mean.clone(),
            x0_cov: self.x0_cov.clone(),
        }
    }
}

fn pick(v: &[DMatrix<f64>], t: usize) -> &DMatrix<f64> {
    if v.len() == 1 {
        &v[0]
    } else {
        &v[t.min(v.len() - 1)]
    }
}

/// Rank-one bases of the quadratic cost.
///
/// Each running term holds either one vector (used at every step) or one
/// vector per step `t = 0..N-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostStructure {
    terminal: Vec<DVector<f64>>,
    running: Vec<Vec<DVector<f64>>>,
    control: Vec<DVector<f64>>,
    n: usize,
    m: usize,
    horizon: usize,
}

impl CostStructure {
    pub fn new(
        sys: &LqsSystem,
        terminal: Vec<DVector<f64>>,
        running: Vec<Vec<DVector<f64>>>,
        control: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let (n, m, horizon) = (sys.n_states(), sys.n_inputs(), sys.horizon());
        if terminal.len() + running.len() + control.len() == 0 {
            return Err(structure("cost structure needs at least one term"));
        }
        if let Some(i) = terminal.iter().position(|q| q.len() != n) {
            return Err(structure(format!("terminal basis {i} must have length {n}")));
        }
        for (i, seq) in running.iter().enumerate() {
            if seq.is_empty() || (seq.len() != 1 && seq.len() != horizon) {
                return Err(structure(format!("running basis {i} must hold 1 or N vectors")));
            }
            if seq.iter().any(|q| q.len() != n) {
                return Err(structure(format!("running basis {i} must have length {n}")));
            }
        }
        if let Some(i) = control.iter().position(|q| q.len() != m) {
            return Err(structure(format!("control basis {i} must have length {m}")));
        }
        Ok(Self { terminal, running, control, n, m, horizon })
    }

    pub fn terminal(&self) -> &[DVector<f64>] {
        &self.terminal
    }
    pub fn running(&self) -> &[Vec<DVector<f64>>] {
        &self.running
    }
    pub fn control(&self) -> &[DVector<f64>] {
        &self.control
    }
    pub fn n_terms(&self) -> usize {
        self.terminal.len() + self.running.len() + self.control.len()
    }

    /// Re-targets the running bases to another horizon (per-step bases are
    /// truncated or their last vector repeated).
    pub fn with_horizon(&self, sys: &LqsSystem) -> Result<Self> {
        let running = self
            .running
            .iter()
            .map(|seq| {
                if seq.len() == 1 {
                    seq.clone()
                } else {
                    (0..sys.horizon()).map(|t| seq[t.min(seq.len() - 1)].clone()).collect()
                }
            })
            .collect();
        Self::new(sys, self.terminal.clone(), running, self.control.clone())
    }
}

/// Cost matrices `Q_N`, `Q_t`, `R` for a concrete θ.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrices {
    pub q_terminal: DMatrix<f64>,
    /// One matrix, or one per step.
    pub q_running: Vec<DMatrix<f64>>,
    pub r: DMatrix<f64>,
}

impl CostMatrices {
    pub fn q(&self, t: usize) -> &DMatrix<f64> {
        pick(&self.q_running, t)
    }
}

/// Noise scalings placed into their matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseParams {
    pub sigma_alpha: DMatrix<f64>,
    pub sigma_beta: DMatrix<f64>,
    pub sigma_u: DVector<f64>,
    pub sigma_x: DVector<f64>,
}

impl NoiseParams {
    /// `Ω^ξ = Σ^α Σ^αᵀ`.
    pub fn omega_xi(&self) -> DMatrix<f64> {
        &self.sigma_alpha * self.sigma_alpha.transpose()
    }
    /// `Ω^ω = Σ^β Σ^βᵀ`.
    pub fn omega_omega(&self) -> DMatrix<f64> {
        &self.sigma_beta * self.sigma_beta.transpose()
    }
    /// The same noise with the multiplicative scalings zeroed (LQG case).
    pub fn additive_only(&self) -> Self {
        Self {
            sigma_alpha: self.sigma_alpha.clone(),
            sigma_beta: self.sigma_beta.clone(),
            sigma_u: DVector::zeros(self.sigma_u.len()),
            sigma_x: DVector::zeros(self.sigma_x.len()),
        }
    }
}

/// Sizes of the blocks of θ, in their fixed order
/// `[s_N, s_Q, s_R, vecs(Σ^α), vecs(Σ^β), σ^u, σ^x]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThetaLayout {
    pub terminal: usize,
    pub running: usize,
    pub control: usize,
    pub alpha: usize,
    pub beta: usize,
    pub control_noise: usize,
    pub sensory_noise: usize,
}

impl ThetaLayout {
    pub fn new(sys: &LqsSystem, cs: &CostStructure) -> Self {
        Self {
            terminal: cs.terminal.len(),
            running: cs.running.len(),
            control: cs.control.len(),
            alpha: sys.alpha_pattern.len(),
            beta: sys.beta_pattern.len(),
            control_noise: sys.f_list.len(),
            sensory_noise: sys.g_list.len(),
        }
    }
    pub fn n_cost(&self) -> usize {
        self.terminal + self.running + self.control
    }
    pub fn n_noise(&self) -> usize {
        self.alpha + self.beta + self.control_noise + self.sensory_noise
    }
    pub fn dim(&self) -> usize {
        self.n_cost() + self.n_noise()
    }
}

/// θ = [s; σ]: cost weights and noise scalings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub s: DVector<f64>,
    pub sigma: DVector<f64>,
}

impl ThetaVector {
    pub fn new(s: DVector<f64>, sigma: DVector<f64>) -> Self {
        Self { s, sigma }
    }

    /// Splits a flat vector according to `layout`.
    pub fn from_flat(flat: &[f64], layout: &ThetaLayout) -> Result<Self> {
        if flat.len() != layout.dim() {
            return Err(structure(format!(
                "theta has length {}, layout expects {}",
                flat.len(),
                layout.dim()
            )));
        }
        let (s, sigma) = flat.split_at(layout.n_cost());
        Ok(Self {
            s: DVector::from_column_slice(s),
            sigma: DVector::from_column_slice(sigma),
        })
    }

    pub fn len(&self) -> usize {
        self.s.len() + self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.s.iter().chain(self.sigma.iter()).copied().collect()
    }

    /// θ with the cost weights scaled by `lambda`.
    pub fn scale_cost(&self, lambda: f64) -> Self {
        Self { s: &self.s * lambda, sigma: self.sigma.clone() }
    }
}

fn rank_one_sum(weights: &[f64], bases: &[&DVector<f64>], dim: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(dim, dim);
    for (w, q) in weights.iter().zip(bases) {
        // w q qᵀ, filled symmetrically so the result is exactly symmetric
        for i in 0..dim {
            let wi = w * q[i];
            for j in 0..=i {
                let v = wi * q[j];
                out[(i, j)] += v;
                if i != j {
                    out[(j, i)] += v;
                }
            }
        }
    }
    out
}

/// `Q_N = Σ s_N,i q q ᵀ`, `Q_t = Σ s_Q,i q_t q_tᵀ`, `R = Σ s_R,i q qᵀ`.
pub fn assemble_cost(theta: &ThetaVector, cs: &CostStructure) -> Result<CostMatrices> {
    if theta.s.len() != cs.n_terms() {
        return Err(structure(format!(
            "cost weight vector has length {}, cost structure has {} terms",
            theta.s.len(),
            cs.n_terms()
        )));
    }
    let s = theta.s.as_slice();
    let (s_terminal, rest) = s.split_at(cs.terminal.len());
    let (s_running, s_control) = rest.split_at(cs.running.len());

    let q_terminal = rank_one_sum(s_terminal, &cs.terminal.iter().collect::<Vec<_>>(), cs.n);
    let time_varying = cs.running.iter().any(|seq| seq.len() > 1);
    let steps = if time_varying { cs.horizon } else { 1 };
    let q_running = (0..steps)
        .map(|t| {
            let bases: Vec<&DVector<f64>> = cs.running.iter().map(|seq| &seq[t.min(seq.len() - 1)]).collect();
            rank_one_sum(s_running, &bases, cs.n)
        })
        .collect();
    let r = rank_one_sum(s_control, &cs.control.iter().collect::<Vec<_>>(), cs.m);
    Ok(CostMatrices { q_terminal, q_running, r })
}

/// Places σ into `Σ^α`, `Σ^β`, `σ^u`, `σ^x`; non-pattern entries are zero.
pub fn assemble_noise(theta: &ThetaVector, sys: &LqsSystem) -> Result<NoiseParams> {
    let (na, nb, c, d) = (
        sys.alpha_pattern.len(),
        sys.beta_pattern.len(),
        sys.f_list.len(),
        sys.g_list.len(),
    );
    let sigma = theta.sigma.as_slice();
    if sigma.len() != na + nb + c + d {
        return Err(structure(format!(
            "noise vector has length {}, system expects {}",
            sigma.len(),
            na + nb + c + d
        )));
    }
    let mut sigma_alpha = DMatrix::zeros(sys.n_states(), sys.alpha_dim);
    for (&(i, j), v) in sys.alpha_pattern.iter().zip(&sigma[..na]) {
        sigma_alpha[(i, j)] = *v;
    }
    let mut sigma_beta = DMatrix::zeros(sys.n_outputs(), sys.beta_dim);
    for (&(i, j), v) in sys.beta_pattern.iter().zip(&sigma[na..na + nb]) {
        sigma_beta[(i, j)] = *v;
    }
    Ok(NoiseParams {
        sigma_alpha,
        sigma_beta,
        sigma_u: DVector::from_column_slice(&sigma[na + nb..na + nb + c]),
        sigma_x: DVector::from_column_slice(&sigma[na + nb + c..]),
    })
}

/// Inverse of [`assemble_noise`] on the pattern entries.
pub fn extract_noise(noise: &NoiseParams, sys: &LqsSystem) -> Result<DVector<f64>> {
    if noise.sigma_alpha.shape() != (sys.n_states(), sys.alpha_dim)
        || noise.sigma_beta.shape() != (sys.n_outputs(), sys.beta_dim)
        || noise.sigma_u.len() != sys.f_list.len()
        || noise.sigma_x.len() != sys.g_list.len()
    {
        return Err(structure("noise parameters do not match the system"));
    }
    let values: Vec<f64> = sys
        .alpha_pattern
        .iter()
        .map(|&ij| noise.sigma_alpha[ij])
        .chain(sys.beta_pattern.iter().map(|&ij| noise.sigma_beta[ij]))
        .chain(noise.sigma_u.iter().copied())
        .chain(noise.sigma_x.iter().copied())
        .collect();
    Ok(DVector::from_vec(values))
}

/// Axis-aligned box `{θ : a_i ≤ θ_i ≤ b_i}` with `b_i > a_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl FeasibleSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(structure("bound vectors differ in length"));
        }
        if lower.is_empty() {
            return Err(structure("feasible set must have at least one dimension"));
        }
        for (i, (a, b)) in lower.iter().zip(&upper).enumerate() {
            if !(a.is_finite() && b.is_finite()) {
                return Err(structure(format!("bound {i} is not finite")));
            }
            if b <= a {
                return Err(Error::Structure(format!(
                    "upper bound {b} must exceed lower bound {a} at index {i}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }
    pub fn upper(&self) -> &[f64] {
        &self.upper
    }
    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| b - a).collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (a, b))| *t >= *a && *t <= *b)
    }

    /// Componentwise `min(max(θ_i, a_i), b_i)`.
    pub fn clamp(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (a, b))| t.max(*a).min(*b))
            .collect()
    }

    /// Same box with every upper bound replaced.
    pub fn with_upper(&self, upper: f64) -> Result<Self> {
        Self::new(self.lower.clone(), vec![upper; self.dim()])
    }
}

/// Projects θ onto the box.
pub fn clamp_to_feasible(theta: &ThetaVector, set: &FeasibleSet) -> Result<ThetaVector> {
    if theta.len() != set.dim() {
        return Err(structure("theta and feasible set differ in dimension"));
    }
    let flat = set.clamp(&theta.to_flat());
    let (s, sigma) = flat.split_at(theta.s.len());
    Ok(ThetaVector::new(
        DVector::from_column_slice(s),
        DVector::from_column_slice(sigma),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_system() -> LqsSystem {
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
            horizon: 5,
            x0_mean: DVector::from_vec(vec![1.0, 0.0]),
            x0_cov: DMatrix::zeros(2, 2),
        })
        .unwrap()
    }

    fn toy_cost(sys: &LqsSystem) -> CostStructure {
        CostStructure::new(
            sys,
            vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])],
            vec![vec![DVector::from_vec(vec![1.0, -1.0])]],
            vec![DVector::from_vec(vec![1.0])],
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_zero_costs() {
        let sys = toy_system();
        let cs = toy_cost(&sys);
        let theta = ThetaVector::new(DVector::zeros(4), DVector::zeros(6));
        let c = assemble_cost(&theta, &cs).unwrap();
        assert_eq!(c.q_terminal, DMatrix::zeros(2, 2));
        assert_eq!(c.q(0), &DMatrix::zeros(2, 2));
        assert_eq!(c.r, DMatrix::zeros(1, 1));
    }

    #[test]
    fn single_control_term_is_unit_diagonal() {
        let sys = LqsSystem::new(SystemParts {
            b: vec![DMatrix::from_row_slice(2, 3, &[0.0; 6])],
            f_list: vec![],
            ..toy_system().parts()
        })
        .unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let cs = CostStructure::new(&sys, vec![], vec![], vec![e1]).unwrap();
        let theta = ThetaVector::new(DVector::from_vec(vec![1.0]), DVector::zeros(5));
        let c = assemble_cost(&theta, &cs).unwrap();
        let mut expected = DMatrix::zeros(3, 3);
        expected[(0, 0)] = 1.0;
        assert_eq!(c.r, expected);
    }

    #[test]
    fn cost_length_mismatch_is_structural() {
        let sys = toy_system();
        let cs = toy_cost(&sys);
        let theta = ThetaVector::new(DVector::zeros(3), DVector::zeros(6));
        assert!(matches!(assemble_cost(&theta, &cs), Err(Error::Structure(_))));
    }

    #[test]
    fn zero_sigma_is_deterministic_system() {
        let sys = toy_system();
        let theta = ThetaVector::new(DVector::zeros(4), DVector::zeros(6));
        let noise = assemble_noise(&theta, &sys).unwrap();
        assert_eq!(noise.sigma_alpha, DMatrix::zeros(2, 2));
        assert_eq!(noise.sigma_beta, DMatrix::zeros(2, 2));
        assert_eq!(noise.sigma_u, DVector::zeros(1));
        assert_eq!(noise.sigma_x, DVector::zeros(1));
    }

    #[test]
    fn noise_length_mismatch_is_structural() {
        let sys = toy_system();
        let theta = ThetaVector::new(DVector::zeros(4), DVector::zeros(5));
        assert!(assemble_noise(&theta, &sys).is_err());
    }

    #[test]
    fn feasible_set_rejects_empty_interval() {
        assert!(FeasibleSet::new(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(FeasibleSet::new(vec![0.0, 2.0], vec![1.0, 1.0]).is_err());
        assert!(FeasibleSet::new(vec![0.0], vec![1e-12]).is_ok());
    }

    #[test]
    fn clamp_examples() {
        let set = FeasibleSet::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(set.clamp(&[0.3, 0.7]), vec![0.3, 0.7]);
        assert_eq!(set.clamp(&[-1.0, 0.5]), vec![0.0, 0.5]);
        assert_eq!(set.clamp(&[2.0, 0.5]), vec![1.0, 0.5]);
    }

    #[test]
    fn system_rejects_bad_shapes() {
        let mut parts = toy_system().parts();
        parts.h = vec![DMatrix::identity(2, 3)];
        assert!(LqsSystem::new(parts).is_err());
        let mut parts = toy_system().parts();
        parts.horizon = 0;
        assert!(LqsSystem::new(parts).is_err());
        let mut parts = toy_system().parts();
        parts.x0_cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(LqsSystem::new(parts).is_err());
        let mut parts = toy_system().parts();
        parts.a = vec![DMatrix::identity(2, 2); 3];
        assert!(LqsSystem::new(parts).is_err());
    }

    #[test]
    fn time_varying_a_is_indexed() {
        let mut parts = toy_system().parts();
        parts.a = (0..5).map(|t| DMatrix::identity(2, 2) * (t as f64 + 1.0)).collect();
        let sys = LqsSystem::new(parts).unwrap();
        assert_eq!(sys.a(3)[(0, 0)], 4.0);
    }

    proptest! {
        #[test]
        fn cost_is_exactly_symmetric_and_linear(
            s in proptest::collection::vec(-3.0f64..3.0, 4),
            lambda in -4.0f64..4.0,
        ) {
            let sys = toy_system();
            let cs = toy_cost(&sys);
            let theta = ThetaVector::new(DVector::from_vec(s.clone()), DVector::zeros(6));
            let c = assemble_cost(&theta, &cs).unwrap();
            prop_assert_eq!(&c.q_terminal, &c.q_terminal.transpose());
            prop_assert_eq!(c.q(0), &c.q(0).transpose());
            prop_assert_eq!(&c.r, &c.r.transpose());
            let scaled = assemble_cost(&theta.scale_cost(lambda), &cs).unwrap();
            prop_assert!((&scaled.q_terminal - &c.q_terminal * lambda).amax() <= 1e-12);
            prop_assert!((scaled.q(0) - c.q(0) * lambda).amax() <= 1e-12);
            prop_assert!((&scaled.r - &c.r * lambda).amax() <= 1e-12);
        }

        #[test]
        fn noise_round_trips_through_pattern(
            sigma in proptest::collection::vec(-2.0f64..2.0, 6),
        ) {
            let sys = toy_system();
            let theta = ThetaVector::new(DVector::zeros(4), DVector::from_vec(sigma.clone()));
            let noise = assemble_noise(&theta, &sys).unwrap();
            let back = extract_noise(&noise, &sys).unwrap();
            prop_assert_eq!(back.as_slice(), sigma.as_slice());
        }

        #[test]
        fn clamp_is_idempotent_and_feasible(
            theta in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            let set = FeasibleSet::new(vec![-1.0, 0.0, 1e-10], vec![1.0, 2.0, 2.0]).unwrap();
            let once = set.clamp(&theta);
            prop_assert!(set.contains(&once));
            prop_assert_eq!(set.clamp(&once), once);
        }
    }
}
