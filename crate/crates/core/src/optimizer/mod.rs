//! Multi-start global search over the feasible box.
//!
//! [`pure_multistart`] runs the local solver from every uniform sample.
//! [`trlwaroa`] (threshold random linkage with approximated regions of
//! attraction) evaluates the objective at all samples first and then skips
//! a sample when
//!
//! - a strictly better sample lies within the distance threshold `α`
//!   (distance filter), or
//! - it falls inside `‖θ − θ_min^(l)‖ < v δ_RoA^(l)` for a minimum already
//!   found, where `δ_RoA^(l)` is the distance that start travelled
//!   (region-of-attraction filter).
//!
//! With `workers = 1` samples are processed strictly in order and runs are
//! bitwise reproducible. With more workers local solves run concurrently;
//! filter decisions for sample `k` then see only the minima of starts that
//! had finished when `k` was examined, and each start records how many
//! minima that was.

mod local;

pub use local::{local_solve, LocalMethod, LocalResult, LocalSolverConfig, LocalStatus};

use std::sync::mpsc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FeasibleSet;
use crate::objective::Objective;

/// Objective level that counts as a global solution in reports.
pub const CONVERGENCE_LEVEL: f64 = -0.999;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrlConfig {
    pub k_max: usize,
    /// Distance-filter tuning; `α` scales linearly with it.
    pub gamma: f64,
    /// Region-of-attraction filter tuning in `[0, 1)`.
    pub v: f64,
    pub seed: u64,
    /// Concurrent local solves; 1 means strict sequential processing.
    pub workers: usize,
    /// Stop launching local solves once the incumbent reaches
    /// [`CONVERGENCE_LEVEL`]; remaining samples are tagged `skipped`.
    #[serde(default)]
    pub stop_on_convergence: bool,
}

impl Default for TrlConfig {
    fn default() -> Self {
        Self { k_max: 10_000, gamma: 0.6, v: 0.7, seed: 0, workers: 1, stop_on_convergence: false }
    }
}

impl TrlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::Precondition("k_max must be at least 1".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Precondition("gamma must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.v) {
            return Err(Error::Precondition("v must lie in [0, 1)".into()));
        }
        if self.workers == 0 {
            return Err(Error::Precondition("workers must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub theta: Vec<f64>,
    /// Objective at the sample; `None` when the algorithm did not need it.
    pub j: Option<f64>,
}

/// Why a sample did not start the local solver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterTag {
    None,
    Distance,
    Roa,
    /// Not examined because the run stopped early.
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartRecord {
    /// Index of the originating sample (0-based).
    pub k: usize,
    pub theta_min: Vec<f64>,
    pub j_min: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LocalStatus,
    /// `‖θ_min − θ^(k)‖₂`.
    pub delta_roa: f64,
    /// Minima known to the filters when this start was launched.
    pub minima_known: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: String,
    pub config: TrlConfig,
    pub alpha: f64,
    pub samples: Vec<Sample>,
    pub starts: Vec<StartRecord>,
    pub filtered_by: Vec<FilterTag>,
    pub theta_opt: Vec<f64>,
    pub j_opt: f64,
    /// Incumbent value after each processed sample (non-increasing).
    pub incumbent_history: Vec<f64>,
    pub elapsed_secs: f64,
}

impl RunRecord {
    pub fn n_starts(&self) -> usize {
        self.starts.len()
    }

    pub fn converged(&self) -> bool {
        self.j_opt <= CONVERGENCE_LEVEL
    }
}

/// `α = γ (Γ(Θ/2 + 1) Π (b_i − a_i))^{1/Θ}`, evaluated in log space.
pub fn compute_alpha(gamma: f64, u: &FeasibleSet) -> f64 {
    if gamma == 0.0 {
        return 0.0;
    }
    let dim = u.dim() as f64;
    let log_vol: f64 = u.widths().iter().map(|w| w.ln()).sum();
    gamma * ((statrs::function::gamma::ln_gamma(dim / 2.0 + 1.0) + log_vol) / dim).exp()
}

/// `1 − (1 − ratio)^k_max`, the chance that at least one of `k_max`
/// uniform samples lands in a region occupying `ratio` of the box.
pub fn sampling_success_probability(vol_ratio: f64, k_max: usize) -> f64 {
    if vol_ratio >= 1.0 {
        return 1.0;
    }
    // 1 − exp(k ln(1 − r)), accurate for small ratios.
    -(k_max as f64 * (-vol_ratio).ln_1p()).exp_m1()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance from sample `k` to the nearest earlier sample with a strictly
/// smaller objective; infinite if there is none.
pub fn distance_filter(k: usize, samples: &[Vec<f64>], j_values: &[f64]) -> f64 {
    (0..k)
        .filter(|&i| j_values[i] < j_values[k])
        .map(|i| distance(&samples[k], &samples[i]))
        .fold(f64::INFINITY, f64::min)
}

/// True if `theta` lies strictly inside some `‖θ − θ_min‖ < v δ_RoA` ball.
pub fn roa_filter(theta: &[f64], minima: &[(Vec<f64>, f64)], v: f64) -> bool {
    minima.iter().any(|(m, delta)| distance(theta, m) < v * delta)
}

/// `k_max` uniform points in `u` from a ChaCha8 generator keyed by `seed`.
pub fn draw_samples(u: &FeasibleSet, k_max: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k_max)
        .map(|_| {
            u.lower()
                .iter()
                .zip(u.upper())
                .map(|(a, b)| a + (b - a) * rng.random::<f64>())
                .collect()
        })
        .collect()
}

fn evaluate_all(obj: &dyn Objective, samples: &[Vec<f64>]) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        samples.par_iter().map(|s| obj.value(s)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    samples.iter().map(|s| obj.value(s)).collect()
}

fn start_record(k: usize, theta_k: &[f64], res: LocalResult, minima_known: usize) -> StartRecord {
    StartRecord {
        k,
        delta_roa: distance(&res.theta_min, theta_k),
        theta_min: res.theta_min,
        j_min: res.j_min,
        iterations: res.iterations,
        evaluations: res.evaluations,
        status: res.status,
        minima_known,
    }
}

/// Best start; ties keep the earliest sample index.
fn incumbent(starts: &[StartRecord]) -> (Vec<f64>, f64) {
    let mut best: Option<&StartRecord> = None;
    for s in starts {
        if best.is_none_or(|b| s.j_min < b.j_min || (s.j_min == b.j_min && s.k < b.k)) {
            best = Some(s);
        }
    }
    best.map(|s| (s.theta_min.clone(), s.j_min)).unwrap_or((Vec::new(), f64::INFINITY))
}

/// Local solve from every sample.
pub fn pure_multistart(
    obj: &dyn Objective,
    u: &FeasibleSet,
    k_max: usize,
    seed: u64,
    solver: &LocalSolverConfig,
) -> Result<RunRecord> {
    let samples = draw_samples(u, k_max, seed);
    pure_multistart_from(obj, u, samples, seed, solver)
}

/// [`pure_multistart`] over a given sample set.
pub fn pure_multistart_from(
    obj: &dyn Objective,
    u: &FeasibleSet,
    samples: Vec<Vec<f64>>,
    seed: u64,
    solver: &LocalSolverConfig,
) -> Result<RunRecord> {
    solver.validate()?;
    check_samples(u, &samples)?;
    let clock = Instant::now();
    let mut starts = Vec::with_capacity(samples.len());
    let mut history = Vec::with_capacity(samples.len());
    let mut best = f64::INFINITY;
    for (k, theta) in samples.iter().enumerate() {
        let res = local_solve(obj, theta, u, solver);
        let rec = start_record(k, theta, res, k);
        best = best.min(rec.j_min);
        history.push(best);
        starts.push(rec);
    }
    let (theta_opt, j_opt) = incumbent(&starts);
    let config = TrlConfig { k_max: samples.len(), gamma: 0.0, v: 0.0, seed, workers: 1, stop_on_convergence: false };
    Ok(RunRecord {
        algorithm: "pms".into(),
        config,
        alpha: 0.0,
        filtered_by: vec![FilterTag::None; samples.len()],
        samples: samples.into_iter().map(|theta| Sample { theta, j: None }).collect(),
        starts,
        theta_opt,
        j_opt,
        incumbent_history: history,
        elapsed_secs: clock.elapsed().as_secs_f64(),
    })
}

fn check_samples(u: &FeasibleSet, samples: &[Vec<f64>]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Precondition("at least one sample is required".into()));
    }
    if samples.iter().any(|s| s.len() != u.dim() || !u.contains(s)) {
        return Err(Error::Precondition("samples must lie in the feasible set".into()));
    }
    Ok(())
}

/// Threshold random linkage with approximated regions of attraction.
pub fn trlwaroa(obj: &dyn Objective, u: &FeasibleSet, cfg: &TrlConfig, solver: &LocalSolverConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let samples = draw_samples(u, cfg.k_max, cfg.seed);
    trlwaroa_from(obj, u, samples, None, cfg, solver)
}

/// [`trlwaroa`] over a given sample set, e.g. one restored from a previous
/// run. Objective values at the samples are recomputed unless supplied.
pub fn trlwaroa_from(
    obj: &dyn Objective,
    u: &FeasibleSet,
    samples: Vec<Vec<f64>>,
    j_values: Option<Vec<f64>>,
    cfg: &TrlConfig,
    solver: &LocalSolverConfig,
) -> Result<RunRecord> {
    cfg.validate()?;
    solver.validate()?;
    check_samples(u, &samples)?;
    let clock = Instant::now();
    let j_values = match j_values {
        Some(j) if j.len() == samples.len() => j,
        Some(_) => return Err(Error::Precondition("one objective value per sample is required".into())),
        None => evaluate_all(obj, &samples),
    };
    let alpha = compute_alpha(cfg.gamma, u);
    let mut cfg = *cfg;
    cfg.k_max = samples.len();

    let (starts, filtered_by, history) = if cfg.workers == 1 {
        trl_sequential(obj, u, &samples, &j_values, alpha, &cfg, solver)
    } else {
        trl_parallel(obj, u, &samples, &j_values, alpha, &cfg, solver)
    };
    let (theta_opt, j_opt) = incumbent(&starts);
    Ok(RunRecord {
        algorithm: "trl".into(),
        config: cfg,
        alpha,
        samples: samples.into_iter().zip(j_values).map(|(theta, j)| Sample { theta, j: Some(j) }).collect(),
        starts,
        filtered_by,
        theta_opt,
        j_opt,
        incumbent_history: history,
        elapsed_secs: clock.elapsed().as_secs_f64(),
    })
}

type TrlOutcome = (Vec<StartRecord>, Vec<FilterTag>, Vec<f64>);

fn trl_sequential(
    obj: &dyn Objective,
    u: &FeasibleSet,
    samples: &[Vec<f64>],
    j_values: &[f64],
    alpha: f64,
    cfg: &TrlConfig,
    solver: &LocalSolverConfig,
) -> TrlOutcome {
    let mut starts: Vec<StartRecord> = Vec::new();
    let mut minima: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut tags = Vec::with_capacity(samples.len());
    let mut history = Vec::with_capacity(samples.len());
    let mut best = f64::INFINITY;
    for k in 0..samples.len() {
        let tag = if cfg.stop_on_convergence && best <= CONVERGENCE_LEVEL {
            FilterTag::Skipped
        } else if distance_filter(k, samples, j_values) <= alpha {
            FilterTag::Distance
        } else if roa_filter(&samples[k], &minima, cfg.v) {
            FilterTag::Roa
        } else {
            let res = local_solve(obj, &samples[k], u, solver);
            let rec = start_record(k, &samples[k], res, minima.len());
            minima.push((rec.theta_min.clone(), rec.delta_roa));
            best = best.min(rec.j_min);
            starts.push(rec);
            FilterTag::None
        };
        tags.push(tag);
        history.push(best);
    }
    (starts, tags, history)
}

fn trl_parallel(
    obj: &dyn Objective,
    u: &FeasibleSet,
    samples: &[Vec<f64>],
    j_values: &[f64],
    alpha: f64,
    cfg: &TrlConfig,
    solver: &LocalSolverConfig,
) -> TrlOutcome {
    let mut starts: Vec<StartRecord> = Vec::new();
    let mut minima: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut tags = Vec::with_capacity(samples.len());
    let mut history = Vec::with_capacity(samples.len());
    let (job_tx, job_rx) = mpsc::channel::<(usize, usize)>();
    let job_rx = std::sync::Mutex::new(job_rx);
    let (done_tx, done_rx) = mpsc::channel::<StartRecord>();
    std::thread::scope(|scope| {
        for _ in 0..cfg.workers {
            let (job_rx, done_tx) = (&job_rx, done_tx.clone());
            scope.spawn(move || loop {
                let job = job_rx.lock().map(|rx| rx.recv());
                let Ok(Ok((k, known))) = job else { break };
                let res = local_solve(obj, &samples[k], u, solver);
                if done_tx.send(start_record(k, &samples[k], res, known)).is_err() {
                    break;
                }
            });
        }
        drop(done_tx);
        let mut in_flight = 0usize;
        let collect = |rec: StartRecord, starts: &mut Vec<StartRecord>, minima: &mut Vec<(Vec<f64>, f64)>| {
            minima.push((rec.theta_min.clone(), rec.delta_roa));
            starts.push(rec);
        };
        for k in 0..samples.len() {
            while let Ok(rec) = done_rx.try_recv() {
                in_flight -= 1;
                collect(rec, &mut starts, &mut minima);
            }
            let converged = starts.iter().any(|s| s.j_min <= CONVERGENCE_LEVEL);
            let tag = if cfg.stop_on_convergence && converged {
                FilterTag::Skipped
            } else if distance_filter(k, samples, j_values) <= alpha {
                FilterTag::Distance
            } else if roa_filter(&samples[k], &minima, cfg.v) {
                FilterTag::Roa
            } else {
                if in_flight == cfg.workers {
                    if let Ok(rec) = done_rx.recv() {
                        in_flight -= 1;
                        collect(rec, &mut starts, &mut minima);
                    }
                }
                // Re-check against anything that finished while waiting.
                if roa_filter(&samples[k], &minima, cfg.v) {
                    FilterTag::Roa
                } else {
                    job_tx.send((k, minima.len())).expect("worker pool alive");
                    in_flight += 1;
                    FilterTag::None
                }
            };
            tags.push(tag);
            history.push(starts.iter().map(|s| s.j_min).fold(f64::INFINITY, f64::min));
        }
        drop(job_tx);
        for rec in done_rx.iter() {
            collect(rec, &mut starts, &mut minima);
        }
    });
    starts.sort_by_key(|s| s.k);
    // History is rebuilt in sample order once every start has finished.
    let mut best = f64::INFINITY;
    let mut next = 0;
    for (k, h) in history.iter_mut().enumerate() {
        while next < starts.len() && starts[next].k <= k {
            best = best.min(starts[next].j_min);
            next += 1;
        }
        *h = best;
    }
    (starts, tags, history)
}
