//! `isoc`: ground-truth generation, identification runs, tuning sweeps,
//! objective slices and report regeneration.
//!
//! Every command reads the model either from `--model <file>` or from the
//! built-in reaching example (`--preset default|scaled`) and writes CSV and
//! JSON under its output directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use isoc_core::experiment::{
    self, generate_gt, load_runs, run_repetitions, summarize, write_summary, Algorithm, ExperimentConfig, GtMode,
    Setup, SummaryRow,
};
use isoc_core::io::{read_json, write_gt_csv, write_json, GtFile, ModelFile};
use isoc_core::objective::{GroundTruthData, Objective};
use isoc_core::optimizer::{LocalSolverConfig, RunRecord, CONVERGENCE_LEVEL};
use isoc_core::reaching::ReachingConfig;

#[derive(Parser)]
#[command(name = "isoc", version, about = "Inverse stochastic optimal control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write model and ground-truth moments at the true parameters.
    GenerateGt(GenerateGtArgs),
    /// Run repeated identifications and write run records plus a summary.
    Identify(IdentifyArgs),
    /// Identify over a grid of (gamma, v) tunings.
    Sweep(SweepArgs),
    /// Scan the objective on a plane through the true parameters.
    SliceScan(SliceArgs),
    /// Rebuild summary.csv / summary.json from persisted runs.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Reaching example, N = 50.
    Default,
    /// Reaching example, N = 30.
    Scaled,
}

#[derive(Args)]
struct ModelArgs {
    /// Model definition JSON; the built-in reaching example when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "default")]
    preset: Preset,
    /// Common upper bound of the feasible box (reaching example only).
    #[arg(long)]
    upper_bound: Option<f64>,
    /// Horizon N override (reaching example only).
    #[arg(long)]
    horizon: Option<usize>,
}

impl ModelArgs {
    fn setup(&self) -> Result<Setup> {
        if let Some(path) = &self.model {
            if self.upper_bound.is_some() || self.horizon.is_some() {
                bail!("--upper-bound and --horizon apply to the built-in example only");
            }
            let file: ModelFile = read_json(path).with_context(|| format!("reading {}", path.display()))?;
            return Ok(Setup::from_model_file(&file)?);
        }
        let mut cfg = match self.preset {
            Preset::Default => ReachingConfig::default(),
            Preset::Scaled => ReachingConfig::scaled(),
        };
        if let Some(b) = self.upper_bound {
            cfg.upper_bound = b;
        }
        if let Some(n) = self.horizon {
            cfg.horizon = n;
        }
        Ok(Setup::reaching(&cfg)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GtKind {
    Analytic,
    MonteCarlo,
}

#[derive(Args)]
struct GenerateGtArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "analytic")]
    mode: GtKind,
    #[arg(long, default_value_t = 100_000)]
    rollouts: usize,
    #[arg(long, default_value_t = 0)]
    mc_seed: u64,
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Pms,
    Trl,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Ground-truth JSON; analytic moments at the true parameters when omitted.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "trl")]
    algorithm: AlgorithmArg,
    #[arg(long, default_value_t = 10_000)]
    k_max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 10)]
    repetitions: usize,
    /// Stop a run once it reaches J_ISOC ≤ −0.999.
    #[arg(long)]
    stop_on_convergence: bool,
    /// Local solver iteration cap.
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct IdentifyArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 0.6)]
    gamma: f64,
    #[arg(long, default_value_t = 0.7)]
    v: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.6, 0.7])]
    gammas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.7])]
    vs: Vec<f64>,
}

#[derive(Args)]
struct SliceArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    gt: Option<PathBuf>,
    /// 1-based component indices of the plane.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2])]
    axes: Vec<usize>,
    #[arg(long, default_value_t = 101)]
    steps: usize,
    /// Also scan the ray from the true parameters to this run's best point.
    #[arg(long)]
    ray_to: Option<PathBuf>,
    /// λ runs over [0, ray_max] on the ray.
    #[arg(long, default_value_t = 1.0)]
    ray_max: f64,
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding run_*.json files.
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenerateGt(a) => generate(a),
        Command::Identify(a) => {
            let (gamma, v) = (a.gamma, a.v);
            run_batches(&a.run, &[(gamma, v)])
        }
        Command::Sweep(a) => {
            let grid: Vec<(f64, f64)> = a.gammas.iter().flat_map(|&g| a.vs.iter().map(move |&v| (g, v))).collect();
            run_batches(&a.run, &grid)
        }
        Command::SliceScan(a) => slice(a),
        Command::Report(a) => report(&a.output_dir),
    }
}

fn generate(a: GenerateGtArgs) -> Result<()> {
    let setup = a.model.setup()?;
    let mode = match a.mode {
        GtKind::Analytic => GtMode::Analytic,
        GtKind::MonteCarlo => GtMode::MonteCarlo { n_rollouts: a.rollouts, seed: a.mc_seed },
    };
    std::fs::create_dir_all(&a.output_dir)?;
    let gt_file = generate_gt(&setup, mode)?;
    let gt = gt_file.build()?;
    write_json(&a.output_dir.join("model.json"), &setup.model_file())?;
    write_json(&a.output_dir.join("gt.json"), &gt_file)?;
    write_gt_csv(&a.output_dir.join("gt_mean.csv"), &a.output_dir.join("gt_cov.csv"), &gt)?;
    let score = setup.problem(gt)?.evaluate(&setup.theta_true()?.to_flat())?;
    println!("wrote model.json, gt.json, gt_mean.csv, gt_cov.csv to {}", a.output_dir.display());
    println!("J_ISOC at the true parameters: {:.12}", score.j_isoc);
    Ok(())
}

fn load_gt(setup: &Setup, path: Option<&Path>) -> Result<GroundTruthData> {
    match path {
        Some(p) => {
            let file: GtFile = read_json(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(file.build()?)
        }
        None => Ok(generate_gt(setup, GtMode::Analytic)?.build()?),
    }
}

fn run_batches(a: &RunArgs, tunings: &[(f64, f64)]) -> Result<()> {
    let setup = a.model.setup()?;
    let problem = setup.problem(load_gt(&setup, a.gt.as_deref())?)?;
    let mut solver = LocalSolverConfig::default();
    if let Some(m) = a.max_iters {
        solver.max_iters = m;
    }
    let algorithm = match a.algorithm {
        AlgorithmArg::Pms => Algorithm::Pms,
        AlgorithmArg::Trl => Algorithm::Trl,
    };
    let mut runs: Vec<RunRecord> = Vec::new();
    for &(gamma, v) in tunings {
        let cfg = ExperimentConfig {
            algorithm,
            k_max: a.k_max,
            gamma,
            v,
            seed: a.seed,
            workers: a.workers,
            repetitions: a.repetitions,
            stop_on_convergence: a.stop_on_convergence,
            solver,
        };
        eprintln!("batch {}", cfg.label());
        let batch = run_repetitions(&problem, &setup.feasible, &cfg, &a.output_dir, |r, run| {
            eprintln!(
                "  rep {r:2}: J = {:+.6} starts = {:5} {:.1}s{}",
                run.j_opt,
                run.n_starts(),
                run.elapsed_secs,
                if run.j_opt <= CONVERGENCE_LEVEL { "" } else { "  (not converged)" }
            );
        })?;
        runs.extend(batch);
    }
    let rows = summarize(&runs);
    write_summary(&a.output_dir, &rows)?;
    print_rows(&rows);
    Ok(())
}

fn slice(a: SliceArgs) -> Result<()> {
    let setup = a.model.setup()?;
    let problem = setup.problem(load_gt(&setup, a.gt.as_deref())?)?;
    let theta_star = setup.theta_true()?.to_flat();
    let &[i, j] = a.axes.as_slice() else {
        bail!("--axes takes exactly two components, e.g. 1,2");
    };
    if i == 0 || j == 0 {
        bail!("axes are 1-based");
    }
    std::fs::create_dir_all(&a.output_dir)?;
    let grid = experiment::slice_scan(&problem, &theta_star, i - 1, j - 1, a.steps)?;
    let path = a.output_dir.join(format!("slice_{i}_{j}.csv"));
    experiment::write_slice_csv(&path, &grid)?;
    let failed = grid.j.iter().flatten().filter(|v| v.is_none()).count();
    println!("wrote {} ({} points, {failed} failed)", path.display(), a.steps * a.steps);
    if let Some(run_path) = &a.ray_to {
        let run: RunRecord = read_json(run_path).with_context(|| format!("reading {}", run_path.display()))?;
        if run.theta_opt.len() != problem.dim() {
            bail!("run record has no best point of dimension {}", problem.dim());
        }
        let lambdas: Vec<f64> = (0..=200).map(|s| a.ray_max * s as f64 / 200.0).collect();
        let ray = experiment::ray_scan(&problem, &theta_star, &run.theta_opt, &lambdas)?;
        let ray_path = a.output_dir.join("ray.csv");
        experiment::write_ray_csv(&ray_path, &ray)?;
        let finite: Vec<f64> = ray.iter().filter_map(|(_, v)| *v).collect();
        println!(
            "wrote {} (direction changes along the ray: {})",
            ray_path.display(),
            experiment::direction_changes(&finite)
        );
    }
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    let runs = load_runs(dir).with_context(|| format!("reading runs in {}", dir.display()))?;
    if runs.is_empty() {
        bail!("no run_*.json files in {}", dir.display());
    }
    let rows = summarize(&runs);
    write_summary(dir, &rows)?;
    print_rows(&rows);
    Ok(())
}

fn print_rows(rows: &[SummaryRow]) {
    println!("{:<5} {:>7} {:>5} {:>5} {:>4} {:>10} {:>4} {:>12} {:>10}", "alg", "k_max", "gamma", "v", "reps", "starts", "#l", "J_max", "t_mean[s]");
    for r in rows {
        println!(
            "{:<5} {:>7} {:>5} {:>5} {:>4} {:>10.1} {:>4} {:>12.6} {:>10.1}",
            r.algorithm, r.k_max, r.gamma, r.v, r.repetitions, r.mean_starts, r.converged, r.j_max, r.t_comp_mean
        );
    }
}
