//! Experiment runner emitting long-format result tables.

use std::cmp::Ordering;
use std::io::{Read, Write};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{cross_validate, forest_grid, trim_grid, CvConfig, CvResult, MethodGrid};
use crate::datasets::{
    load_csv, sample_scenario, sample_seir, seir_true_egop, true_egop, Dataset, Region, Scenario,
    ScenarioSpec, DEFAULT_TRUE_EGOP_SAMPLES,
};
use crate::egop::{EgopEstimate, IndicatorMode, TransformMatrix};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::subspace::{max_angle_to, mse, top_eigvec_subspace, SubspaceBasis};
use crate::trim::{fit_from_egop, fit_transformed, fit_trim, TrimConfig};

/// Column layout of every results file.
pub const RESULT_SCHEMA: &str = include_str!("../schema/results.schema.json");

/// Rank of the SEIR relevant subspace: the quadrature EGOP has a wide gap
/// after its second eigenvalue in both regions.
pub const SEIR_SUBSPACE_RANK: usize = 2;

const TEST_SEED_TAG: u64 = 0x7e57_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    SubspaceConvergence,
    MseVsLifetime,
    TrimReiterate,
    Ebola,
    CvBench,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 5] = [
        ExperimentId::SubspaceConvergence,
        ExperimentId::MseVsLifetime,
        ExperimentId::TrimReiterate,
        ExperimentId::Ebola,
        ExperimentId::CvBench,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::SubspaceConvergence => "subspace_convergence",
            ExperimentId::MseVsLifetime => "mse_vs_lifetime",
            ExperimentId::TrimReiterate => "trim_reiterate",
            ExperimentId::Ebola => "ebola",
            ExperimentId::CvBench => "cv_bench",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub id: ExperimentId,
    /// Training sizes for subspace-recovery rows.
    pub n_grid: Vec<usize>,
    /// Lifetimes for test-MSE rows.
    pub lambda_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub n_trees: usize,
    pub step: f64,
    /// Lifetime of the forests the EGOP is estimated from.
    pub estimation_lifetime: f64,
    /// Training size for test-MSE rows.
    pub mse_n: usize,
    pub test_size: usize,
    /// Iteration counts K compared by the reiteration studies.
    pub iterations: Vec<usize>,
    pub indicator: IndicatorMode,
    pub scenarios: Vec<Scenario>,
    pub regions: Vec<Region>,
    /// Overrides the scenarios' noise level.
    pub noise_sd: Option<f64>,
    pub seir_noise_sd: f64,
    /// Monte Carlo size of the scenarios' true EGOP.
    pub n_mc: usize,
    pub dataset: Option<PathBuf>,
    pub target: String,
    pub cv: CvConfig,
}

impl ExperimentConfig {
    pub fn new(id: ExperimentId) -> Self {
        ExperimentConfig {
            id,
            n_grid: vec![100, 200, 400, 800, 1600, 3200],
            lambda_grid: (0..=5).map(f64::from).collect(),
            seeds: (0..10).collect(),
            n_trees: 10,
            step: 0.1,
            estimation_lifetime: 5.0,
            mse_n: 3200,
            test_size: 1000,
            iterations: vec![1, 2],
            indicator: IndicatorMode::ForestAllPopulated,
            scenarios: Scenario::ALL.to_vec(),
            regions: Region::ALL.to_vec(),
            noise_sd: None,
            seir_noise_sd: 0.0,
            n_mc: DEFAULT_TRUE_EGOP_SAMPLES,
            dataset: None,
            target: "y".into(),
            cv: CvConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.seeds.is_empty() {
            return bad("seed list is empty");
        }
        if self.n_grid.contains(&0) || self.mse_n == 0 || self.test_size == 0 {
            return bad("sample sizes must be positive");
        }
        if self
            .lambda_grid
            .iter()
            .any(|&l| !(l >= 0.0 && l.is_finite()))
        {
            return bad("lifetimes must be nonnegative");
        }
        if self.iterations.contains(&0) {
            return bad("iteration counts must be >= 1");
        }
        Ok(())
    }

    fn trim_config(&self, lifetime: f64, iterations: usize, seed: u64) -> TrimConfig {
        TrimConfig {
            lifetime,
            n_trees: self.n_trees,
            step: self.step,
            iterations,
            indicator: self.indicator,
            seed,
            ..TrimConfig::default()
        }
    }
}

/// One long-format result value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub case: String,
    pub n: usize,
    pub lambda: f64,
    pub iters: usize,
    pub seed: u64,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

fn row_order(a: &ResultRow, b: &ResultRow) -> Ordering {
    a.experiment
        .cmp(&b.experiment)
        .then_with(|| a.case.cmp(&b.case))
        .then_with(|| a.n.cmp(&b.n))
        .then_with(|| a.lambda.total_cmp(&b.lambda))
        .then_with(|| a.seed.cmp(&b.seed))
        .then_with(|| a.method.cmp(&b.method))
        .then_with(|| a.iters.cmp(&b.iters))
        .then_with(|| a.metric.cmp(&b.metric))
}

pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(row_order);
}

/// Median of a nonempty sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// A data-generating case with a known EGOP.
#[derive(Debug, Clone)]
enum Case {
    Scenario(ScenarioSpec),
    Seir(Region, f64),
}

struct CaseTruth {
    egop: EgopEstimate,
    subspace: SubspaceBasis,
}

impl Case {
    fn name(&self) -> String {
        match self {
            Case::Scenario(s) => format!("scenario{}", s.id.unwrap_or(0)),
            Case::Seir(r, _) => r.name().to_string(),
        }
    }

    fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        match self {
            Case::Scenario(s) => Ok(sample_scenario(s, n, seed)?.0),
            Case::Seir(r, sd) => sample_seir(*r, n, *sd, seed),
        }
    }

    fn truth(&self, n_mc: usize) -> Result<CaseTruth> {
        match self {
            Case::Scenario(s) => Ok(CaseTruth {
                egop: true_egop(s, n_mc, 0)?,
                subspace: SubspaceBasis::row_span(&s.b)?,
            }),
            Case::Seir(r, _) => {
                let egop = seir_true_egop(*r)?;
                let subspace = top_eigvec_subspace(&egop, SEIR_SUBSPACE_RANK)?.basis;
                Ok(CaseTruth { egop, subspace })
            }
        }
    }
}

fn cases(cfg: &ExperimentConfig) -> Vec<Case> {
    match cfg.id {
        ExperimentId::Ebola => cfg
            .regions
            .iter()
            .map(|&r| Case::Seir(r, cfg.seir_noise_sd))
            .collect(),
        _ => cfg
            .scenarios
            .iter()
            .map(|&s| {
                let spec = ScenarioSpec::new(s);
                Case::Scenario(match cfg.noise_sd {
                    Some(sd) => spec.with_noise(sd),
                    None => spec,
                })
            })
            .collect(),
    }
}

/// What a (case, seed) cell reports.
struct Plan {
    /// K values whose maximum principal angle is reported for every n.
    angle_iters: Vec<usize>,
    /// Report the untransformed forest in the MSE sweep.
    baseline: bool,
    /// K values whose EGOP drives a "proposed" forest in the MSE sweep.
    mse_iters: Vec<usize>,
    oracle: bool,
}

fn plan(cfg: &ExperimentConfig) -> Plan {
    match cfg.id {
        ExperimentId::SubspaceConvergence => Plan {
            angle_iters: vec![1],
            baseline: false,
            mse_iters: vec![],
            oracle: false,
        },
        ExperimentId::MseVsLifetime => Plan {
            angle_iters: vec![],
            baseline: true,
            mse_iters: vec![1],
            oracle: true,
        },
        ExperimentId::TrimReiterate => Plan {
            angle_iters: cfg.iterations.clone(),
            baseline: false,
            mse_iters: cfg.iterations.clone(),
            oracle: true,
        },
        ExperimentId::Ebola => Plan {
            angle_iters: cfg.iterations.clone(),
            baseline: true,
            mse_iters: cfg.iterations.clone(),
            oracle: true,
        },
        ExperimentId::CvBench => unreachable!("cv_bench has no synthetic plan"),
    }
}

/// `Ĥ` after each of `1..=max_k` rounds, estimated at the estimation lifetime.
fn egop_path(
    cfg: &ExperimentConfig,
    train: &Dataset,
    max_k: usize,
    seed: u64,
) -> Result<Vec<EgopEstimate>> {
    let fit = fit_trim(
        train,
        &cfg.trim_config(cfg.estimation_lifetime, max_k, seed),
    )?;
    Ok(fit.rounds.into_iter().map(|r| r.egop).collect())
}

struct Row<'a> {
    cfg: &'a ExperimentConfig,
    case: &'a str,
    seed: u64,
}

impl Row<'_> {
    fn make(
        &self,
        n: usize,
        lambda: f64,
        iters: usize,
        method: &str,
        metric: &str,
        value: f64,
    ) -> ResultRow {
        ResultRow {
            experiment: self.cfg.id.name().to_string(),
            case: self.case.to_string(),
            n,
            lambda,
            iters,
            seed: self.seed,
            method: method.to_string(),
            metric: metric.to_string(),
            value,
        }
    }
}

fn angle_rows(
    cfg: &ExperimentConfig,
    case: &Case,
    name: &str,
    truth: &CaseTruth,
    ks: &[usize],
    n: usize,
    seed: u64,
) -> Result<Vec<ResultRow>> {
    let max_k = ks.iter().copied().max().unwrap_or(1);
    let train = case.sample(n, derive_seed(seed, n as u64))?;
    let path = egop_path(cfg, &train, max_k, seed)?;
    let mk = Row {
        cfg,
        case: name,
        seed,
    };
    ks.iter()
        .map(|&k| {
            let angle = max_angle_to(&path[k - 1], &truth.subspace)?;
            Ok(mk.make(
                n,
                cfg.estimation_lifetime,
                k,
                "proposed",
                "max_principal_angle",
                angle,
            ))
        })
        .collect()
}

fn mse_rows(
    cfg: &ExperimentConfig,
    plan: &Plan,
    case: &Case,
    name: &str,
    truth: &CaseTruth,
    seed: u64,
) -> Result<Vec<ResultRow>> {
    let n = cfg.mse_n;
    let train = case.sample(n, derive_seed(seed, n as u64))?;
    let test = case.sample(cfg.test_size, derive_seed(seed, TEST_SEED_TAG))?;
    let max_k = plan.mse_iters.iter().copied().max().unwrap_or(0);
    let path = if max_k > 0 {
        egop_path(cfg, &train, max_k, seed)?
    } else {
        Vec::new()
    };
    let mk = Row {
        cfg,
        case: name,
        seed,
    };
    let identity = TransformMatrix::identity(train.dim());
    let mut rows = Vec::new();
    for &lambda in &cfg.lambda_grid {
        let tc = cfg.trim_config(lambda, 1, seed);
        if plan.baseline {
            let m = fit_transformed(&train, &identity, &tc)?;
            rows.push(mk.make(n, lambda, 0, "baseline", "test_mse", mse(&m, &test)?));
        }
        for &k in &plan.mse_iters {
            let m = fit_from_egop(&train, &path[k - 1], &tc)?;
            rows.push(mk.make(n, lambda, k, "proposed", "test_mse", mse(&m, &test)?));
        }
        if plan.oracle {
            let m = fit_from_egop(&train, &truth.egop, &tc)?;
            rows.push(mk.make(n, lambda, 0, "oracle", "test_mse", mse(&m, &test)?));
        }
    }
    Ok(rows)
}

fn run_synthetic(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let plan = plan(cfg);
    let cases = cases(cfg);
    let truths: Vec<CaseTruth> = cases
        .par_iter()
        .map(|c| c.truth(cfg.n_mc))
        .collect::<Result<_>>()?;

    enum Job {
        Angles(usize, usize, u64),
        Mse(usize, u64),
    }
    let mut jobs = Vec::new();
    for ci in 0..cases.len() {
        for &seed in &cfg.seeds {
            if !plan.angle_iters.is_empty() {
                for &n in &cfg.n_grid {
                    jobs.push(Job::Angles(ci, n, seed));
                }
            }
            let any_mse = plan.baseline || plan.oracle || !plan.mse_iters.is_empty();
            if any_mse && !cfg.lambda_grid.is_empty() {
                jobs.push(Job::Mse(ci, seed));
            }
        }
    }
    let names: Vec<String> = cases.iter().map(Case::name).collect();
    let chunks: Vec<Vec<ResultRow>> = jobs
        .par_iter()
        .map(|job| match *job {
            Job::Angles(ci, n, seed) => angle_rows(
                cfg,
                &cases[ci],
                &names[ci],
                &truths[ci],
                &plan.angle_iters,
                n,
                seed,
            ),
            Job::Mse(ci, seed) => mse_rows(cfg, &plan, &cases[ci], &names[ci], &truths[ci], seed),
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// Long-format rows of a cross-validation run: one `mse` row per (repeat,
/// method). `lambda` is the most frequently selected lifetime, `iters` the
/// largest selected number of transform updates and `seed` the repeat index.
pub fn cv_rows(case: &str, n: usize, result: &CvResult) -> Vec<ResultRow> {
    let mut rows: Vec<ResultRow> = result
        .records
        .iter()
        .map(|rec| ResultRow {
            experiment: ExperimentId::CvBench.name().to_string(),
            case: case.to_string(),
            n,
            lambda: rec.modal_lifetime(),
            iters: rec.selected.iter().map(|s| s.updates).max().unwrap_or(0),
            seed: rec.repeat as u64,
            method: rec.method.clone(),
            metric: "mse".into(),
            value: rec.mean_mse,
        })
        .collect();
    sort_rows(&mut rows);
    rows
}

/// The MF grid and the TrIM grid used by `cv_bench`.
pub fn cv_method_grids(n_trees: usize) -> Vec<MethodGrid> {
    vec![
        MethodGrid::new("MF", forest_grid(n_trees)),
        MethodGrid::new("TrIM", trim_grid(n_trees)),
    ]
}

fn run_cv(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("cv_bench needs a dataset path".into()))?;
    let data = load_csv(path, &cfg.target)?;
    let case = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let mut cv = cfg.cv;
    cv.seed = cfg.seeds[0];
    let result = cross_validate(&data, &cv_method_grids(cfg.n_trees), &cv)?;
    Ok(cv_rows(&case, data.n(), &result))
}

/// Runs an experiment; rows come back sorted.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut rows = match cfg.id {
        ExperimentId::CvBench => run_cv(cfg)?,
        _ => run_synthetic(cfg)?,
    };
    sort_rows(&mut rows);
    Ok(rows)
}

pub fn write_results<W: Write>(rows: &[ResultRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(schema_columns()?.iter().map(|(n, _)| n.as_str()))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct Schema {
    columns: Vec<Column>,
}

#[derive(Deserialize)]
struct Column {
    name: String,
    #[serde(rename = "type")]
    kind: String,
}

/// (name, type) pairs of [`RESULT_SCHEMA`].
pub fn schema_columns() -> Result<Vec<(String, String)>> {
    let schema: Schema = serde_json::from_str(RESULT_SCHEMA)?;
    Ok(schema
        .columns
        .into_iter()
        .map(|c| (c.name, c.kind))
        .collect())
}

/// Checks a results CSV against [`RESULT_SCHEMA`]; returns the row count.
pub fn validate_results_csv<R: Read>(reader: R) -> Result<usize> {
    let columns = schema_columns()?;
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let expected: Vec<&str> = columns.iter().map(|(n, _)| n.as_str()).collect();
    if header != expected {
        return Err(Error::Format(format!(
            "results header {header:?} does not match schema {expected:?}"
        )));
    }
    let mut count = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        for (cell, (name, kind)) in rec.iter().zip(&columns) {
            let ok = match kind.as_str() {
                "integer" => cell.parse::<u64>().is_ok(),
                "number" => cell.parse::<f64>().is_ok(),
                "string" => !cell.is_empty(),
                other => return Err(Error::Format(format!("unknown column type '{other}'"))),
            };
            if !ok {
                return Err(Error::Parse {
                    row: i + 2,
                    column: name.clone(),
                    message: format!("'{cell}' is not a valid {kind}"),
                });
            }
        }
        count += 1;
    }
    Ok(count)
}
