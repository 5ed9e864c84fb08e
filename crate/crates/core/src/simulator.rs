//! Monte-Carlo rollouts of the closed loop
//!
//! ```text
//! x_{t+1} = A x + B u + Σ^α α + Σ_i σ^u_i ε_i B F_i u
//! y_t     = H x + Σ^β β + Σ_i σ^x_i ϵ_i H G_i x
//! x̂_{t+1} = A x̂ + B u + K_t (y − H x̂),   u = −L_t x̂
//! ```
//!
//! Every rollout owns a ChaCha8 stream: the key is the batch seed, the
//! stream number is the rollout index. Results therefore do not depend on
//! execution order or thread count. Standard normals come from
//! `rand_distr::StandardNormal` (ziggurat). Per rollout the draw order is
//! the `n` components of the initial-state normal, then per step `α` (p),
//! `ε` (c), `β` (q), `ϵ` (d).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{structure, Error, Result};
use crate::linalg::psd_sqrt_factor;
use crate::model::{LqsSystem, NoiseParams};
use crate::moments::Selector;
use crate::soc::GainSchedule;

/// Simulated states and estimates, rollout-major: rollout `r`, time `t`,
/// component `i` lives at `(r * (N + 1) + t) * n + i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBatch {
    pub n_rollouts: usize,
    pub horizon: usize,
    pub n_states: usize,
    pub states: Vec<f64>,
    pub estimates: Vec<f64>,
    pub seed: u64,
}

impl TrajectoryBatch {
    /// State of rollout `r` at time `t`.
    pub fn state(&self, r: usize, t: usize) -> &[f64] {
        let off = (r * (self.horizon + 1) + t) * self.n_states;
        &self.states[off..off + self.n_states]
    }

    pub fn estimate(&self, r: usize, t: usize) -> &[f64] {
        let off = (r * (self.horizon + 1) + t) * self.n_states;
        &self.estimates[off..off + self.n_states]
    }
}

/// Per-step matrices with the noise shapes folded in.
struct Plant<'a> {
    sys: &'a LqsSystem,
    gains: &'a GainSchedule,
    sigma_alpha: DMatrix<f64>,
    sigma_beta: DMatrix<f64>,
    /// `σ^u_i B F_i` per step (B may vary in time).
    ctrl_noise: Vec<Vec<DMatrix<f64>>>,
    /// `σ^x_i H G_i` per step.
    sens_noise: Vec<Vec<DMatrix<f64>>>,
    x0_factor: DMatrix<f64>,
}

impl<'a> Plant<'a> {
    fn new(sys: &'a LqsSystem, noise: &NoiseParams, gains: &'a GainSchedule) -> Result<Self> {
        gains.check(sys)?;
        let horizon = sys.horizon();
        let ctrl_noise = (0..horizon)
            .map(|t| {
                sys.f_list()
                    .iter()
                    .zip(noise.sigma_u.iter())
                    .map(|(f, s)| sys.b(t) * f * *s)
                    .collect()
            })
            .collect();
        let sens_noise = (0..horizon)
            .map(|t| {
                sys.g_list()
                    .iter()
                    .zip(noise.sigma_x.iter())
                    .map(|(g, s)| sys.h(t) * g * *s)
                    .collect()
            })
            .collect();
        Ok(Self {
            sys,
            gains,
            sigma_alpha: noise.sigma_alpha.clone(),
            sigma_beta: noise.sigma_beta.clone(),
            ctrl_noise,
            sens_noise,
            x0_factor: psd_sqrt_factor(sys.x0_cov()),
        })
    }

    /// Runs rollout `r` and hands each `(t, x_t, x̂_t)` to `visit`.
    fn rollout(&self, seed: u64, r: usize, mut visit: impl FnMut(usize, &DVector<f64>, &DVector<f64>)) -> Result<()> {
        let sys = self.sys;
        let n = sys.n_states();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let normals = |len: usize, rng: &mut ChaCha8Rng| -> DVector<f64> {
            DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
        };

        let z0 = normals(n, &mut rng);
        let mut x = sys.x0_mean() + &self.x0_factor * z0;
        let mut xh = sys.x0_mean().clone();
        visit(0, &x, &xh);
        for t in 0..sys.horizon() {
            let (a, b, h) = (sys.a(t), sys.b(t), sys.h(t));
            let u = -(&self.gains.l[t] * &xh);
            let alpha = normals(self.sigma_alpha.ncols(), &mut rng);
            let eps = normals(self.ctrl_noise[t].len(), &mut rng);
            let beta = normals(self.sigma_beta.ncols(), &mut rng);
            let eps_x = normals(self.sens_noise[t].len(), &mut rng);

            let mut y = h * &x + &self.sigma_beta * beta;
            for (d, e) in self.sens_noise[t].iter().zip(eps_x.iter()) {
                y += d * &x * *e;
            }
            let bu = b * &u;
            let mut x_next = a * &x + &bu + &self.sigma_alpha * alpha;
            for (c, e) in self.ctrl_noise[t].iter().zip(eps.iter()) {
                x_next += c * &u * *e;
            }
            let innovation = y - h * &xh;
            xh = a * &xh + bu + &self.gains.k[t] * innovation;
            x = x_next;
            if !(x.iter().all(|v| v.is_finite()) && xh.iter().all(|v| v.is_finite())) {
                return Err(Error::NumericalBlowup { stage: "simulation", t });
            }
            visit(t + 1, &x, &xh);
        }
        Ok(())
    }
}

/// Simulates `n_rollouts` independent closed-loop realizations.
pub fn simulate_batch(
    sys: &LqsSystem,
    noise: &NoiseParams,
    gains: &GainSchedule,
    n_rollouts: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    if n_rollouts == 0 {
        return Err(Error::Precondition("at least one rollout is required".into()));
    }
    let plant = Plant::new(sys, noise, gains)?;
    let (n, horizon) = (sys.n_states(), sys.horizon());
    let stride = (horizon + 1) * n;
    let mut states = vec![0.0; n_rollouts * stride];
    let mut estimates = vec![0.0; n_rollouts * stride];
    let fill = |r: usize, s: &mut [f64], e: &mut [f64]| {
        plant.rollout(seed, r, |t, x, xh| {
            s[t * n..(t + 1) * n].copy_from_slice(x.as_slice());
            e[t * n..(t + 1) * n].copy_from_slice(xh.as_slice());
        })
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        states
            .par_chunks_mut(stride)
            .zip(estimates.par_chunks_mut(stride))
            .enumerate()
            .try_for_each(|(r, (s, e))| fill(r, s, e))?;
    }
    #[cfg(not(feature = "parallel"))]
    for (r, (s, e)) in states.chunks_mut(stride).zip(estimates.chunks_mut(stride)).enumerate() {
        fill(r, s, e)?;
    }
    Ok(TrajectoryBatch { n_rollouts, horizon, n_states: n, states, estimates, seed })
}

/// Sample mean and unbiased sample covariance (divisor `R − 1`) of `M x_t`.
pub fn estimate_moments(batch: &TrajectoryBatch, sel: &Selector) -> Result<crate::moments::MeasuredMoments> {
    if batch.n_rollouts < 2 {
        return Err(Error::Precondition("sample covariance needs at least two rollouts".into()));
    }
    if sel.n_states() != batch.n_states {
        return Err(structure("selector does not match the batch state dimension"));
    }
    let k = sel.n_measured();
    let count = batch.n_rollouts as f64;
    let mut means = Vec::with_capacity(batch.horizon + 1);
    let mut covs = Vec::with_capacity(batch.horizon + 1);
    for t in 0..=batch.horizon {
        let mut mean = DVector::zeros(k);
        for r in 0..batch.n_rollouts {
            let x = batch.state(r, t);
            for (i, &row) in sel.rows().iter().enumerate() {
                mean[i] += x[row];
            }
        }
        mean /= count;
        let mut cov = DMatrix::zeros(k, k);
        for r in 0..batch.n_rollouts {
            let x = batch.state(r, t);
            let d = DVector::from_iterator(k, sel.rows().iter().enumerate().map(|(i, &row)| x[row] - mean[i]));
            cov.ger(1.0, &d, &d, 1.0);
        }
        cov /= count - 1.0;
        means.push(mean);
        covs.push(cov);
    }
    Ok((means, covs))
}

/// Running first and second moments of the state over one group of rollouts.
#[derive(Clone, Debug)]
struct GroupSums {
    count: usize,
    /// Σ x_t, `(N + 1) × n`.
    sum: Vec<DVector<f64>>,
    /// Σ x_t x_tᵀ, shifted by the reference mean for conditioning.
    sum_sq: Vec<DMatrix<f64>>,
}

/// Monte-Carlo moments of the full state with standard errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonteCarloMoments {
    pub n_rollouts: usize,
    pub seed: u64,
    pub groups: usize,
    pub bootstrap_resamples: usize,
    pub mean: Vec<DVector<f64>>,
    /// Unbiased sample covariance.
    pub cov: Vec<DMatrix<f64>>,
    /// `s / sqrt(R)` per mean component.
    pub mean_se: Vec<DVector<f64>>,
    /// Bootstrap standard error per covariance entry (groups resampled).
    pub cov_se: Vec<DMatrix<f64>>,
}

fn pooled_cov(groups: &[&GroupSums], t: usize) -> (DVector<f64>, DMatrix<f64>, usize) {
    let n = groups[0].sum[t].len();
    let mut s = DVector::zeros(n);
    let mut ss = DMatrix::zeros(n, n);
    let mut count = 0;
    for g in groups {
        s += &g.sum[t];
        ss += &g.sum_sq[t];
        count += g.count;
    }
    let c = count as f64;
    let mean = &s / c;
    let cov = (ss - &mean * s.transpose()) / (c - 1.0);
    (mean, cov, count)
}

/// Size and seeding of a streamed Monte-Carlo run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub n_rollouts: usize,
    pub seed: u64,
    pub groups: usize,
    pub resamples: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { n_rollouts: 100_000, seed: 0, groups: 1000, resamples: 200 }
    }
}

/// Streams `n_rollouts` rollouts into grouped sums without storing them.
///
/// Rollouts are split into `groups` contiguous blocks; covariance standard
/// errors come from `resamples` bootstrap draws over whole blocks, mean
/// standard errors from the sample variance. Second moments are accumulated
/// around `centre` (e.g. the analytic mean) to avoid cancellation.
pub fn monte_carlo_moments(
    sys: &LqsSystem,
    noise: &NoiseParams,
    gains: &GainSchedule,
    cfg: &MonteCarloConfig,
    centre: Option<&[DVector<f64>]>,
) -> Result<MonteCarloMoments> {
    let MonteCarloConfig { n_rollouts, seed, groups, resamples } = *cfg;
    if groups < 2 || n_rollouts < 2 * groups || resamples < 2 {
        return Err(Error::Precondition("need at least two groups with two rollouts each".into()));
    }
    let plant = Plant::new(sys, noise, gains)?;
    let (n, horizon) = (sys.n_states(), sys.horizon());
    let zero_centre: Vec<DVector<f64>> = vec![DVector::zeros(n); horizon + 1];
    let centre = centre.unwrap_or(&zero_centre);
    if centre.len() != horizon + 1 {
        return Err(structure("centre trajectory has wrong length"));
    }
    let per_group = n_rollouts / groups;
    let run_group = |g: usize| -> Result<GroupSums> {
        let start = g * per_group;
        let end = if g + 1 == groups { n_rollouts } else { start + per_group };
        let mut sums = GroupSums {
            count: end - start,
            sum: vec![DVector::zeros(n); horizon + 1],
            sum_sq: vec![DMatrix::zeros(n, n); horizon + 1],
        };
        for r in start..end {
            plant.rollout(seed, r, |t, x, _| {
                let d = x - &centre[t];
                sums.sum[t] += &d;
                sums.sum_sq[t].ger(1.0, &d, &d, 1.0);
            })?;
        }
        Ok(sums)
    };
    #[cfg(feature = "parallel")]
    let sums: Vec<GroupSums> = {
        use rayon::prelude::*;
        (0..groups).into_par_iter().map(run_group).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let sums: Vec<GroupSums> = (0..groups).map(run_group).collect::<Result<_>>()?;

    let all: Vec<&GroupSums> = sums.iter().collect();
    let mut mean = Vec::with_capacity(horizon + 1);
    let mut cov = Vec::with_capacity(horizon + 1);
    let mut mean_se = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let (m, c, count) = pooled_cov(&all, t);
        mean_se.push(c.diagonal().map(|v| (v.max(0.0) / count as f64).sqrt()));
        mean.push(m + &centre[t]);
        cov.push(c);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut boot_sum = vec![DMatrix::<f64>::zeros(n, n); horizon + 1];
    let mut boot_sq = vec![DMatrix::<f64>::zeros(n, n); horizon + 1];
    for _ in 0..resamples {
        let pick: Vec<&GroupSums> = (0..groups).map(|_| &sums[rng.random_range(0..groups)]).collect();
        for t in 0..=horizon {
            let (_, c, _) = pooled_cov(&pick, t);
            boot_sq[t] += c.component_mul(&c);
            boot_sum[t] += c;
        }
    }
    let b = resamples as f64;
    let cov_se = boot_sum
        .iter()
        .zip(&boot_sq)
        .map(|(s, sq)| {
            let m = s / b;
            ((sq / b - m.component_mul(&m)) * (b / (b - 1.0))).map(|v| v.max(0.0).sqrt())
        })
        .collect();

    Ok(MonteCarloMoments { n_rollouts, seed, groups, bootstrap_resamples: resamples, mean, cov, mean_se, cov_se })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_covariance() {
        let batch = TrajectoryBatch {
            n_rollouts: 2,
            horizon: 0,
            n_states: 2,
            states: vec![1.0, 2.0, 3.0, 5.0],
            estimates: vec![0.0; 4],
            seed: 0,
        };
        let (m, c) = estimate_moments(&batch, &Selector::identity(2)).unwrap();
        assert_eq!(m[0].as_slice(), &[2.0, 3.5]);
        // v = (2, 3), vvᵀ/2
        assert_eq!(c[0], DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 3.0, 4.5]));
    }

    #[test]
    fn single_rollout_rejected() {
        let batch = TrajectoryBatch {
            n_rollouts: 1,
            horizon: 0,
            n_states: 1,
            states: vec![1.0],
            estimates: vec![1.0],
            seed: 0,
        };
        assert!(estimate_moments(&batch, &Selector::identity(1)).is_err());
    }
}
