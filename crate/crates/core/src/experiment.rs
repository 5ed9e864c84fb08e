//! Experiment plumbing: identification setups, ground-truth generation,
//! repeated identification runs with aggregate reports, and objective
//! scans through θ-space.
//!
//! Run files are named `run_<label>_rNN.json` (full [`RunRecord`]) with a
//! per-start `.csv` next to them. [`summarize`] only reads run records, so
//! `summary.csv` / `summary.json` can be rebuilt byte-identically from a
//! results directory.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{structure, Error, Result};
use crate::io::{self, fmt, GtFile, GtSource, ModelFile};
use crate::model::{assemble_cost, assemble_noise, CostStructure, FeasibleSet, LqsSystem, NoiseParams, ThetaLayout, ThetaVector};
use crate::moments::{propagate_moments, restrict_moments, MomentTrajectory, Selector};
use crate::objective::{GroundTruthData, IsocProblem, Objective};
use crate::optimizer::{pure_multistart, trlwaroa, LocalSolverConfig, RunRecord, TrlConfig, CONVERGENCE_LEVEL};
use crate::reaching::{build_reaching_example, ReachingConfig};
use crate::simulator::{monte_carlo_moments, MonteCarloConfig};
use crate::soc::{solve_ao, AoConfig, AoInit, GainSchedule};

/// Everything needed to generate data for and identify one model.
#[derive(Clone, Debug)]
pub struct Setup {
    pub system: LqsSystem,
    pub cost: CostStructure,
    pub theta_true: Option<ThetaVector>,
    pub feasible: FeasibleSet,
    pub selector: Selector,
    pub w_m: DVector<f64>,
    pub w_v: DVector<f64>,
}

/// Forward solution at one θ.
#[derive(Clone, Debug)]
pub struct ForwardSolution {
    pub gains: GainSchedule,
    pub noise: NoiseParams,
    pub moments: MomentTrajectory,
}

impl Setup {
    pub fn reaching(config: &ReachingConfig) -> Result<Self> {
        let ex = build_reaching_example(config)?;
        Ok(Self {
            system: ex.system,
            cost: ex.cost,
            theta_true: Some(ex.theta_true),
            feasible: ex.feasible,
            selector: ex.selector,
            w_m: ex.w_m,
            w_v: ex.w_v,
        })
    }

    /// Requires bounds, selector and weights in the file; `theta_true` is
    /// optional (needed only for analytic ground truth and scans).
    pub fn from_model_file(file: &ModelFile) -> Result<Self> {
        let (system, cost) = file.build()?;
        let layout = ThetaLayout::new(&system, &cost);
        let feasible = file.feasible_set()?.ok_or_else(|| structure("model file has no bounds"))?;
        if feasible.dim() != layout.dim() {
            return Err(structure(format!("bounds have dimension {}, θ has {}", feasible.dim(), layout.dim())));
        }
        let rows = file.selector_rows.clone().ok_or_else(|| structure("model file has no selector_rows"))?;
        let selector = Selector::new(system.n_states(), rows)?;
        let w_m = file.w_m.as_deref().ok_or_else(|| structure("model file has no w_m"))?;
        let w_v = file.w_v.as_deref().ok_or_else(|| structure("model file has no w_v"))?;
        let theta_true = file.theta_true.as_deref().map(|t| ThetaVector::from_flat(t, &layout)).transpose()?;
        Ok(Self {
            system,
            cost,
            theta_true,
            feasible,
            selector,
            w_m: DVector::from_column_slice(w_m),
            w_v: DVector::from_column_slice(w_v),
        })
    }

    pub fn model_file(&self) -> ModelFile {
        ModelFile {
            theta_true: self.theta_true.as_ref().map(ThetaVector::to_flat),
            lower: Some(self.feasible.lower().to_vec()),
            upper: Some(self.feasible.upper().to_vec()),
            selector_rows: Some(self.selector.rows().to_vec()),
            w_m: Some(self.w_m.iter().copied().collect()),
            w_v: Some(self.w_v.iter().copied().collect()),
            ..ModelFile::from_parts(&self.system, &self.cost)
        }
    }

    pub fn layout(&self) -> ThetaLayout {
        ThetaLayout::new(&self.system, &self.cost)
    }

    pub fn theta_true(&self) -> Result<&ThetaVector> {
        self.theta_true.as_ref().ok_or_else(|| Error::Precondition("the model has no true parameter vector".into()))
    }

    /// Gains and exact moments at `theta`.
    pub fn forward(&self, theta: &ThetaVector) -> Result<ForwardSolution> {
        let costs = assemble_cost(theta, &self.cost)?;
        let noise = assemble_noise(theta, &self.system)?;
        let ao = AoConfig { track_cost: false, ..AoConfig::default() };
        let (gains, _) = solve_ao(&self.system, &costs, &noise, &AoInit::LqgKalman, &ao)?;
        let moments = propagate_moments(&self.system, &noise, &gains)?;
        Ok(ForwardSolution { gains, noise, moments })
    }

    pub fn problem(&self, gt: GroundTruthData) -> Result<IsocProblem> {
        IsocProblem::new(self.system.clone(), self.cost.clone(), gt)
    }
}

/// How ground truth is produced from θ*.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GtMode {
    Analytic,
    MonteCarlo { n_rollouts: usize, seed: u64 },
}

/// Ground-truth moments at θ*, exact or sampled.
pub fn generate_gt(setup: &Setup, mode: GtMode) -> Result<GtFile> {
    let fwd = setup.forward(setup.theta_true()?)?;
    let (gt, source) = match mode {
        GtMode::Analytic => {
            let (m, om) = restrict_moments(&fwd.moments, &setup.selector)?;
            (GroundTruthData::new(setup.selector.clone(), m, om, setup.w_m.clone(), setup.w_v.clone())?, GtSource::Analytic)
        }
        GtMode::MonteCarlo { n_rollouts, seed } => {
            let groups = (n_rollouts / 100).clamp(2, 1000);
            let cfg = MonteCarloConfig { n_rollouts, seed, groups, resamples: 2 };
            let mc = monte_carlo_moments(&setup.system, &fwd.noise, &fwd.gains, &cfg, Some(&fwd.moments.mean_x))?;
            let m = mc.mean.iter().map(|v| setup.selector.apply_vec(v)).collect();
            let om = mc.cov.iter().map(|c| setup.selector.apply_mat(c)).collect();
            let gt = GroundTruthData::new(setup.selector.clone(), m, om, setup.w_m.clone(), setup.w_v.clone())?;
            (gt, GtSource::MonteCarlo { n_rollouts, seed })
        }
    };
    Ok(GtFile::new(&gt, source))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Pms,
    Trl,
}

/// One batch of repeated identification runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub k_max: usize,
    pub gamma: f64,
    pub v: f64,
    /// Repetition `r` uses seed `seed + r`.
    pub seed: u64,
    pub workers: usize,
    pub repetitions: usize,
    #[serde(default)]
    pub stop_on_convergence: bool,
    pub solver: LocalSolverConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let trl = TrlConfig::default();
        Self {
            algorithm: Algorithm::Trl,
            k_max: trl.k_max,
            gamma: trl.gamma,
            v: trl.v,
            seed: 0,
            workers: 1,
            repetitions: 10,
            stop_on_convergence: false,
            solver: LocalSolverConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Precondition("repetitions must be at least 1".into()));
        }
        self.trl(0).validate()?;
        self.solver.validate()
    }

    pub fn trl(&self, repetition: usize) -> TrlConfig {
        TrlConfig {
            k_max: self.k_max,
            gamma: self.gamma,
            v: self.v,
            seed: self.seed + repetition as u64,
            workers: self.workers,
            stop_on_convergence: self.stop_on_convergence,
        }
    }

    /// File-name label, e.g. `trl_k1000_g0.6_v0.7`.
    pub fn label(&self) -> String {
        match self.algorithm {
            Algorithm::Pms => format!("pms_k{}", self.k_max),
            Algorithm::Trl => format!("trl_k{}_g{}_v{}", self.k_max, self.gamma, self.v),
        }
    }
}

/// Runs one identification.
pub fn identify(obj: &dyn Objective, u: &FeasibleSet, cfg: &ExperimentConfig, repetition: usize) -> Result<RunRecord> {
    let trl = cfg.trl(repetition);
    match cfg.algorithm {
        Algorithm::Pms => pure_multistart(obj, u, trl.k_max, trl.seed, &cfg.solver),
        Algorithm::Trl => trlwaroa(obj, u, &trl, &cfg.solver),
    }
}

pub fn run_path(dir: &Path, label: &str, repetition: usize) -> PathBuf {
    dir.join(format!("run_{label}_r{repetition:02}.json"))
}

/// Runs all repetitions in order, persisting each as soon as it finishes.
/// `progress` is called after every repetition.
pub fn run_repetitions(
    obj: &dyn Objective,
    u: &FeasibleSet,
    cfg: &ExperimentConfig,
    out_dir: &Path,
    mut progress: impl FnMut(usize, &RunRecord),
) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let label = cfg.label();
    let mut runs = Vec::with_capacity(cfg.repetitions);
    for r in 0..cfg.repetitions {
        let run = identify(obj, u, cfg, r)?;
        let path = run_path(out_dir, &label, r);
        io::write_json(&path, &run)?;
        io::write_run_csv(&path.with_extension("csv"), &run)?;
        progress(r, &run);
        runs.push(run);
    }
    Ok(runs)
}

/// Aggregate of one batch of runs sharing algorithm and tuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub k_max: usize,
    pub gamma: f64,
    pub v: f64,
    pub repetitions: usize,
    /// Mean number of local solves.
    pub mean_starts: f64,
    /// Runs with `J_ISOC ≤ −0.999`.
    pub converged: usize,
    /// Worst final objective over the batch.
    pub j_max: f64,
    pub t_comp_mean: f64,
}

impl SummaryRow {
    fn key(&self) -> (String, usize, u64, u64) {
        (self.algorithm.clone(), self.k_max, self.gamma.to_bits(), self.v.to_bits())
    }
}

/// One row per (algorithm, k_max, γ, v), in order of first appearance.
pub fn summarize(runs: &[RunRecord]) -> Vec<SummaryRow> {
    let mut rows: Vec<(SummaryRow, Vec<&RunRecord>)> = Vec::new();
    for run in runs {
        let row = SummaryRow {
            algorithm: run.algorithm.clone(),
            k_max: run.config.k_max,
            gamma: run.config.gamma,
            v: run.config.v,
            repetitions: 0,
            mean_starts: 0.0,
            converged: 0,
            j_max: f64::NEG_INFINITY,
            t_comp_mean: 0.0,
        };
        match rows.iter_mut().find(|(r, _)| r.key() == row.key()) {
            Some((_, group)) => group.push(run),
            None => rows.push((row, vec![run])),
        }
    }
    rows.into_iter()
        .map(|(mut row, group)| {
            let n = group.len() as f64;
            row.repetitions = group.len();
            row.mean_starts = group.iter().map(|r| r.n_starts() as f64).sum::<f64>() / n;
            row.converged = group.iter().filter(|r| r.j_opt <= CONVERGENCE_LEVEL).count();
            row.j_max = group.iter().map(|r| r.j_opt).fold(f64::NEG_INFINITY, f64::max);
            row.t_comp_mean = group.iter().map(|r| r.elapsed_secs).sum::<f64>() / n;
            row
        })
        .collect()
}

/// All `run_*.json` files in `dir`, sorted by file name.
pub fn load_runs(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("run_"))
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| io::read_json(p)).collect()
}

/// Writes `summary.csv` and `summary.json` into `dir`.
pub fn write_summary(dir: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["algorithm", "k_max", "gamma", "v", "repetitions", "mean_starts", "converged", "j_max", "t_comp_mean"])?;
    for r in rows {
        w.write_record([
            r.algorithm.clone(),
            r.k_max.to_string(),
            fmt(r.gamma),
            fmt(r.v),
            r.repetitions.to_string(),
            fmt(r.mean_starts),
            r.converged.to_string(),
            fmt(r.j_max),
            fmt(r.t_comp_mean),
        ])?;
    }
    w.flush()?;
    io::write_json(&dir.join("summary.json"), &rows)
}

/// `J_ISOC` on a grid in the plane of two θ components, the rest at θ*.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceGrid {
    /// 0-based component indices.
    pub axes: (usize, usize),
    pub values_i: Vec<f64>,
    pub values_j: Vec<f64>,
    /// `j[a][b]` at `(values_i[a], values_j[b])`; `None` where the lower
    /// level failed.
    pub j: Vec<Vec<Option<f64>>>,
}

impl SliceGrid {
    /// Finite grid points as `(x_i, x_j, J)`.
    pub fn points(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for (a, row) in self.j.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    out.push((self.values_i[a], self.values_j[b], *v));
                }
            }
        }
        out
    }
}

/// `steps` equidistant values of component `i`: `[0.5, 1.5]·θ*_i`, or
/// `[0, 1]` when `θ*_i = 0`.
pub fn slice_axis(theta_star: &[f64], i: usize, steps: usize) -> Vec<f64> {
    let (lo, hi) = if theta_star[i] == 0.0 { (0.0, 1.0) } else { (0.5 * theta_star[i], 1.5 * theta_star[i]) };
    let last = steps.saturating_sub(1).max(1) as f64;
    (0..steps).map(|s| lo + (hi - lo) * s as f64 / last).collect()
}

fn map_points(obj: &dyn Objective, points: &[Vec<f64>]) -> Vec<Option<f64>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        points.par_iter().map(|p| obj.try_value(p)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    points.iter().map(|p| obj.try_value(p)).collect()
}

/// Scans the `(i, j)` plane through `theta_star` (0-based indices).
pub fn slice_scan(obj: &dyn Objective, theta_star: &[f64], i: usize, j: usize, steps: usize) -> Result<SliceGrid> {
    let dim = obj.dim();
    if theta_star.len() != dim || i >= dim || j >= dim {
        return Err(structure(format!("slice axes must index a θ of length {dim}")));
    }
    if i == j {
        return Err(Error::Precondition("slice axes must differ".into()));
    }
    if steps < 2 {
        return Err(Error::Precondition("a slice needs at least two steps per axis".into()));
    }
    let values_i = slice_axis(theta_star, i, steps);
    let values_j = slice_axis(theta_star, j, steps);
    let mut points = Vec::with_capacity(steps * steps);
    for &xi in &values_i {
        for &xj in &values_j {
            let mut p = theta_star.to_vec();
            p[i] = xi;
            p[j] = xj;
            points.push(p);
        }
    }
    let flat = map_points(obj, &points);
    let j_grid = flat.chunks(steps).map(<[_]>::to_vec).collect();
    Ok(SliceGrid { axes: (i, j), values_i, values_j, j: j_grid })
}

/// `J_ISOC` along `from + λ (to − from)` for each λ.
pub fn ray_scan(obj: &dyn Objective, from: &[f64], to: &[f64], lambdas: &[f64]) -> Result<Vec<(f64, Option<f64>)>> {
    if from.len() != obj.dim() || to.len() != obj.dim() {
        return Err(structure(format!("ray end points must have length {}", obj.dim())));
    }
    let points: Vec<Vec<f64>> =
        lambdas.iter().map(|l| from.iter().zip(to).map(|(a, b)| a + l * (b - a)).collect()).collect();
    Ok(lambdas.iter().copied().zip(map_points(obj, &points)).collect())
}

fn opt_fmt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// Long format `x_i, x_j, j`; failed points have an empty `j`.
pub fn write_slice_csv(path: &Path, grid: &SliceGrid) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([format!("theta_{}", grid.axes.0 + 1), format!("theta_{}", grid.axes.1 + 1), "j_isoc".into()])?;
    for (a, row) in grid.j.iter().enumerate() {
        for (b, v) in row.iter().enumerate() {
            w.write_record([fmt(grid.values_i[a]), fmt(grid.values_j[b]), opt_fmt(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ray_csv(path: &Path, ray: &[(f64, Option<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lambda", "j_isoc"])?;
    for (l, v) in ray {
        w.write_record([fmt(*l), opt_fmt(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Number of sign changes in consecutive differences of the finite values;
/// positive means the profile is not monotone.
pub fn direction_changes(values: &[f64]) -> usize {
    let signs: Vec<f64> =
        values.windows(2).map(|w| w[1] - w[0]).filter(|d| *d != 0.0).map(f64::signum).collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Convenience for tests and demos: full-state means and covariances at θ
/// restricted to the measured channels.
pub fn measured_moments(setup: &Setup, theta: &ThetaVector) -> Result<crate::moments::MeasuredMoments> {
    restrict_moments(&setup.forward(theta)?.moments, &setup.selector)
}
