//! File formats.
//!
//! JSON files carry a `schema_version`; matrices are nested row-major
//! arrays. CSV exports are long-format tables:
//!
//! | file            | columns                                   |
//! |-----------------|-------------------------------------------|
//! | moments         | `t, block, row, col, value`               |
//! | gains           | `t, row, col, value`                      |
//! | GT means        | `t, channel, value`                       |
//! | GT covariances  | `t, row, col, value`                      |
//! | run starts      | one row per local solve, θ_min flattened  |
//!
//! Moment blocks are `mean_x`, `mean_xh` (col 0), `cov_x`, `cov_x_xh`,
//! `cov_xh`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{structure, Result};
use crate::model::{CostStructure, FeasibleSet, LqsSystem, SystemParts};
use crate::moments::{MomentTrajectory, Selector};
use crate::objective::GroundTruthData;
use crate::optimizer::RunRecord;
use crate::reaching::ReachingExample;

pub const MODEL_SCHEMA_VERSION: u32 = 1;
pub const GT_SCHEMA_VERSION: u32 = 1;

type Rows = Vec<Vec<f64>>;

fn to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &Rows, what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(structure(format!("{what}: rows have unequal length")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn mats_from_rows(list: &[Rows], what: &str) -> Result<Vec<DMatrix<f64>>> {
    list.iter().map(|m| from_rows(m, what)).collect()
}

fn vecs(list: &[Vec<f64>]) -> Vec<DVector<f64>> {
    list.iter().map(|v| DVector::from_column_slice(v)).collect()
}

fn unvecs(list: &[DVector<f64>]) -> Vec<Vec<f64>> {
    list.iter().map(|v| v.iter().copied().collect()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub a: Vec<Rows>,
    pub b: Vec<Rows>,
    pub h: Vec<Rows>,
    pub f_list: Vec<Rows>,
    pub g_list: Vec<Rows>,
    pub alpha_dim: usize,
    pub alpha_pattern: Vec<(usize, usize)>,
    pub beta_dim: usize,
    pub beta_pattern: Vec<(usize, usize)>,
    pub horizon: usize,
    pub x0_mean: Vec<f64>,
    pub x0_cov: Rows,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub terminal: Vec<Vec<f64>>,
    pub running: Vec<Vec<Vec<f64>>>,
    pub control: Vec<Vec<f64>>,
}

/// Model definition file: structure plus optional identification setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub system: SystemSpec,
    pub cost: CostSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_true: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector_rows: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_m: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_v: Option<Vec<f64>>,
}

impl ModelFile {
    pub fn from_parts(sys: &LqsSystem, cost: &CostStructure) -> Self {
        let p = sys.parts();
        let rows = |list: &[DMatrix<f64>]| list.iter().map(to_rows).collect();
        Self {
            schema_version: MODEL_SCHEMA_VERSION,
            system: SystemSpec {
                a: rows(&p.a),
                b: rows(&p.b),
                h: rows(&p.h),
                f_list: rows(&p.f_list),
                g_list: rows(&p.g_list),
                alpha_dim: p.alpha_dim,
                alpha_pattern: p.alpha_pattern,
                beta_dim: p.beta_dim,
                beta_pattern: p.beta_pattern,
                horizon: p.horizon,
                x0_mean: p.x0_mean.iter().copied().collect(),
                x0_cov: to_rows(&p.x0_cov),
            },
            cost: CostSpec {
                terminal: unvecs(cost.terminal()),
                running: cost.running().iter().map(|s| unvecs(s)).collect(),
                control: unvecs(cost.control()),
            },
            theta_true: None,
            lower: None,
            upper: None,
            selector_rows: None,
            w_m: None,
            w_v: None,
        }
    }

    pub fn from_reaching(ex: &ReachingExample) -> Self {
        Self {
            theta_true: Some(ex.theta_true.to_flat()),
            lower: Some(ex.feasible.lower().to_vec()),
            upper: Some(ex.feasible.upper().to_vec()),
            selector_rows: Some(ex.selector.rows().to_vec()),
            w_m: Some(ex.w_m.iter().copied().collect()),
            w_v: Some(ex.w_v.iter().copied().collect()),
            ..Self::from_parts(&ex.system, &ex.cost)
        }
    }

    pub fn build(&self) -> Result<(LqsSystem, CostStructure)> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(structure(format!("unsupported model schema version {}", self.schema_version)));
        }
        let s = &self.system;
        let sys = LqsSystem::new(SystemParts {
            a: mats_from_rows(&s.a, "a")?,
            b: mats_from_rows(&s.b, "b")?,
            h: mats_from_rows(&s.h, "h")?,
            f_list: mats_from_rows(&s.f_list, "f_list")?,
            g_list: mats_from_rows(&s.g_list, "g_list")?,
            alpha_dim: s.alpha_dim,
            alpha_pattern: s.alpha_pattern.clone(),
            beta_dim: s.beta_dim,
            beta_pattern: s.beta_pattern.clone(),
            horizon: s.horizon,
            x0_mean: DVector::from_column_slice(&s.x0_mean),
            x0_cov: from_rows(&s.x0_cov, "x0_cov")?,
        })?;
        let cost = CostStructure::new(
            &sys,
            vecs(&self.cost.terminal),
            self.cost.running.iter().map(|s| vecs(s)).collect(),
            vecs(&self.cost.control),
        )?;
        Ok((sys, cost))
    }

    pub fn feasible_set(&self) -> Result<Option<FeasibleSet>> {
        match (&self.lower, &self.upper) {
            (Some(a), Some(b)) => FeasibleSet::new(a.clone(), b.clone()).map(Some),
            (None, None) => Ok(None),
            _ => Err(structure("model file gives only one of lower/upper bounds")),
        }
    }
}

/// How ground-truth moments were produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GtSource {
    Analytic,
    MonteCarlo { n_rollouts: usize, seed: u64 },
    External,
}

/// Ground-truth data file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtFile {
    pub schema_version: u32,
    pub source: GtSource,
    pub n_states: usize,
    pub selector_rows: Vec<usize>,
    pub w_m: Vec<f64>,
    pub w_v: Vec<f64>,
    /// `m̂_t`, one row per `t = 0..=N`.
    pub m_hat: Vec<Vec<f64>>,
    /// `Ω̂_t`, one matrix per `t`.
    pub om_hat: Vec<Rows>,
}

impl GtFile {
    pub fn new(gt: &GroundTruthData, source: GtSource) -> Self {
        Self {
            schema_version: GT_SCHEMA_VERSION,
            source,
            n_states: gt.selector().n_states(),
            selector_rows: gt.selector().rows().to_vec(),
            w_m: gt.w_m().iter().copied().collect(),
            w_v: gt.w_v().iter().copied().collect(),
            m_hat: unvecs(gt.m_hat()),
            om_hat: gt.om_hat().iter().map(to_rows).collect(),
        }
    }

    pub fn build(&self) -> Result<GroundTruthData> {
        if self.schema_version != GT_SCHEMA_VERSION {
            return Err(structure(format!("unsupported ground-truth schema version {}", self.schema_version)));
        }
        GroundTruthData::new(
            Selector::new(self.n_states, self.selector_rows.clone())?,
            vecs(&self.m_hat),
            mats_from_rows(&self.om_hat, "om_hat")?,
            DVector::from_column_slice(&self.w_m),
            DVector::from_column_slice(&self.w_v),
        )
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Writes `m̂_t` as `t, channel, value` and `Ω̂_t` as `t, row, col, value`.
pub fn write_gt_csv(mean_path: &Path, cov_path: &Path, gt: &GroundTruthData) -> Result<()> {
    let mut w = csv::Writer::from_path(mean_path)?;
    w.write_record(["t", "channel", "value"])?;
    for (t, m) in gt.m_hat().iter().enumerate() {
        for (i, v) in m.iter().enumerate() {
            w.write_record([t.to_string(), i.to_string(), fmt(*v)])?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(cov_path)?;
    w.write_record(["t", "row", "col", "value"])?;
    for (t, m) in gt.om_hat().iter().enumerate() {
        write_matrix_rows(&mut w, t, None, m)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest decimal that round-trips the `f64` exactly.
pub(crate) fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn write_matrix_rows(w: &mut csv::Writer<File>, t: usize, block: Option<&str>, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let mut rec = vec![t.to_string()];
            if let Some(b) = block {
                rec.push(b.to_string());
            }
            rec.extend([i.to_string(), j.to_string(), fmt(m[(i, j)])]);
            w.write_record(&rec)?;
        }
    }
    Ok(())
}

/// Reads the two GT CSV files back; selector and weights come separately.
pub fn read_gt_csv(
    mean_path: &Path,
    cov_path: &Path,
    selector: Selector,
    w_m: DVector<f64>,
    w_v: DVector<f64>,
) -> Result<GroundTruthData> {
    let k = selector.n_measured();
    let mut means: Vec<DVector<f64>> = Vec::new();
    for rec in csv::Reader::from_path(mean_path)?.records() {
        let rec = rec?;
        let (t, i, v) = (parse::<usize>(&rec, 0)?, parse::<usize>(&rec, 1)?, parse::<f64>(&rec, 2)?);
        if i >= k {
            return Err(structure(format!("GT mean channel {i} outside {k} channels")));
        }
        while means.len() <= t {
            means.push(DVector::from_element(k, f64::NAN));
        }
        means[t][i] = v;
    }
    let mut covs: Vec<DMatrix<f64>> = Vec::new();
    for rec in csv::Reader::from_path(cov_path)?.records() {
        let rec = rec?;
        let (t, i, j, v) = (
            parse::<usize>(&rec, 0)?,
            parse::<usize>(&rec, 1)?,
            parse::<usize>(&rec, 2)?,
            parse::<f64>(&rec, 3)?,
        );
        if i >= k || j >= k {
            return Err(structure(format!("GT covariance entry ({i},{j}) outside {k} channels")));
        }
        while covs.len() <= t {
            covs.push(DMatrix::from_element(k, k, f64::NAN));
        }
        covs[t][(i, j)] = v;
    }
    GroundTruthData::new(selector, means, covs, w_m, w_v)
}

fn parse<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize) -> Result<T> {
    rec.get(idx)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| structure(format!("bad CSV field {idx} in record {:?}", rec.position().map(|p| p.line()))))
}

/// Long-format export of a moment trajectory.
pub fn write_moments_csv(path: &Path, mt: &MomentTrajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "block", "row", "col", "value"])?;
    for t in 0..mt.len() {
        write_matrix_rows(&mut w, t, Some("mean_x"), &DMatrix::from_column_slice(mt.n_states(), 1, mt.mean_x[t].as_slice()))?;
        write_matrix_rows(&mut w, t, Some("mean_xh"), &DMatrix::from_column_slice(mt.n_states(), 1, mt.mean_xh[t].as_slice()))?;
        write_matrix_rows(&mut w, t, Some("cov_x"), &mt.cov_x(t))?;
        write_matrix_rows(&mut w, t, Some("cov_x_xh"), &mt.cov_x_xh(t))?;
        write_matrix_rows(&mut w, t, Some("cov_xh"), &mt.cov_xh(t))?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format export of one gain sequence (`L_t` or `K_t`).
pub fn write_gains_csv(path: &Path, gains: &[DMatrix<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "row", "col", "value"])?;
    for (t, g) in gains.iter().enumerate() {
        write_matrix_rows(&mut w, t, None, g)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per local solve.
pub fn write_run_csv(path: &Path, run: &RunRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = run.theta_opt.len();
    let mut header: Vec<String> =
        ["k", "j_min", "iterations", "evaluations", "status", "delta_roa", "minima_known"].map(String::from).to_vec();
    header.extend((0..dim).map(|i| format!("theta_{}", i + 1)));
    w.write_record(&header)?;
    for s in &run.starts {
        let status = serde_json::to_value(s.status)?.as_str().unwrap_or_default().to_string();
        let mut rec = vec![
            s.k.to_string(),
            fmt(s.j_min),
            s.iterations.to_string(),
            s.evaluations.to_string(),
            status,
            fmt(s.delta_roa),
            s.minima_known.to_string(),
        ];
        rec.extend(s.theta_min.iter().map(|v| fmt(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the sample set of a persisted run (for resuming).
pub fn read_samples(path: &Path) -> Result<(Vec<Vec<f64>>, Option<Vec<f64>>)> {
    let run: RunRecord = read_json(path)?;
    let j: Option<Vec<f64>> = run.samples.iter().map(|s| s.j).collect();
    let thetas = run.samples.into_iter().map(|s| s.theta).collect();
    Ok((thetas, j))
}
