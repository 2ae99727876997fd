mod args;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::Parser;
use serde::Serialize;
use trim_forest::datasets::{
    load_csv, read_features, sample_scenario, sample_seir, seir_true_egop, write_csv, Dataset,
    Region, Scenario, ScenarioSpec,
};
use trim_forest::harness::{
    run_experiment, validate_results_csv, write_results, ExperimentConfig, ExperimentId,
    SEIR_SUBSPACE_RANK,
};
use trim_forest::linalg::symmetric_eigen;
use trim_forest::subspace::{mse, principal_angles, top_eigvec_subspace, SubspaceBasis};
use trim_forest::trim::{self, TrimFit, TrimMode, TrimModel};
use trim_forest::Error;

use args::{
    Cli, Command, CvArgs, EgopArgs, ExperimentArgs, FitArgs, GenerateArgs, PredictArgs, SourceArgs,
    ValidateArgs,
};

const THREADS_VAR: &str = "TRIM_THREADS";

/// Exit status for command-line usage errors.
const USAGE_EXIT: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let rendered = e.render().to_string();
            let mut lines = rendered.trim_end().lines();
            let first = lines.next().unwrap_or_default();
            eprintln!(
                "error: usage: {}",
                first.strip_prefix("error: ").unwrap_or(first)
            );
            for line in lines {
                eprintln!("{line}");
            }
            return ExitCode::from(USAGE_EXIT);
        }
        Err(e) => e.exit(),
    };
    match configure_threads().and_then(|()| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = category(&e);
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {category}: {message}");
            ExitCode::FAILURE
        }
    }
}

fn category(e: &anyhow::Error) -> &'static str {
    if let Some(e) = e.downcast_ref::<Error>() {
        e.category()
    } else if e.downcast_ref::<io::Error>().is_some() {
        "io"
    } else if e.downcast_ref::<serde_json::Error>().is_some() {
        "format"
    } else {
        "cli"
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = value.parse().ok().filter(|&t| t > 0).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "{THREADS_VAR} must be a positive integer, got '{value}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| anyhow!(e))
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Egop(a) => egop(a),
        Command::Experiment(a) => experiment(a),
        Command::Cv(a) => cv(a),
        Command::Generate(a) => generate(a),
        Command::Validate(a) => validate(a),
    }
}

/// Output file, or stdout when `path` is `None`.
fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

enum Truth {
    Known(SubspaceBasis),
    Unknown,
}

fn load_source(src: &SourceArgs, want_truth: bool) -> anyhow::Result<(Dataset, Truth)> {
    if let Some(path) = &src.data {
        let data =
            load_csv(path, &src.target).with_context(|| format!("reading {}", path.display()))?;
        return Ok((data, Truth::Unknown));
    }
    if let Some(id) = src.scenario {
        let mut spec = ScenarioSpec::new(Scenario::from_id(id)?);
        if let Some(sd) = src.noise {
            spec = spec.with_noise(sd);
        }
        let (data, truth) = sample_scenario(&spec, src.n, src.data_seed)?;
        return Ok((data, Truth::Known(truth.subspace)));
    }
    if let Some(region) = src.region {
        let region = Region::from(region);
        let data = sample_seir(region, src.n, src.noise.unwrap_or(0.0), src.data_seed)?;
        let truth = if want_truth {
            Truth::Known(top_eigvec_subspace(&seir_true_egop(region)?, SEIR_SUBSPACE_RANK)?.basis)
        } else {
            Truth::Unknown
        };
        return Ok((data, truth));
    }
    bail!(Error::InvalidParameter(
        "choose a data source with --data, --scenario or --region".into()
    ))
}

#[derive(Serialize)]
struct Weights<'a> {
    omega: &'a [f64],
    normalized: &'a [f64],
    degenerate: bool,
}

#[derive(Serialize)]
struct FitReport<'a> {
    mode: &'static str,
    n: usize,
    dim: usize,
    lambda: f64,
    trees: usize,
    step: f64,
    iters: usize,
    seed: u64,
    train_mse: f64,
    forest_fits: usize,
    degenerate_fallback: bool,
    wall_time_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Weights<'a>>,
}

fn mode_name(mode: TrimMode) -> &'static str {
    match mode {
        TrimMode::Transform => "transform",
        TrimMode::Reweight => "reweight",
    }
}

fn fit(a: FitArgs) -> anyhow::Result<()> {
    let (data, _) = load_source(&a.source, false)?;
    let config = a.model.config();
    let start = Instant::now();
    let result: TrimFit = trim::fit(&data, &config)?;
    let wall_time_secs = start.elapsed().as_secs_f64();
    let model = &result.model;
    fs::write(&a.out, model.to_json()?).with_context(|| format!("writing {}", a.out.display()))?;

    let report = FitReport {
        mode: mode_name(config.mode),
        n: data.n(),
        dim: data.dim(),
        lambda: config.lifetime,
        trees: config.n_trees,
        step: config.step,
        iters: config.iterations,
        seed: config.seed,
        train_mse: mse(model, &data)?,
        forest_fits: result.forest_fits,
        degenerate_fallback: model.degenerate_fallback,
        wall_time_secs,
        weights: (config.mode == TrimMode::Reweight).then(|| Weights {
            omega: &result.weights.omega,
            normalized: &result.weights.normalized,
            degenerate: result.weights.degenerate,
        }),
    };
    let mut w = output(a.report.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn predict(a: PredictArgs) -> anyhow::Result<()> {
    let text =
        fs::read_to_string(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let model = TrimModel::from_json(&text)?;
    let file = File::open(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let (_, x) = read_features(file, Some(&a.target))?;
    let mut w = output(a.out.as_deref())?;
    writeln!(w, "prediction")?;
    for row in x.rows_iter() {
        writeln!(w, "{}", model.predict(row)?)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EgopReport<'a> {
    mode: &'static str,
    n: usize,
    dim: usize,
    lambda: f64,
    trees: usize,
    step: f64,
    iters: usize,
    seed: u64,
    n_eval: usize,
    matrix: Vec<&'a [f64]>,
    eigenvalues: Vec<f64>,
    weights: Weights<'a>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_principal_angle: Option<f64>,
}

fn egop(a: EgopArgs) -> anyhow::Result<()> {
    let (data, truth) = load_source(&a.source, true)?;
    let config = a.model.config();
    let result = trim::fit(&data, &config)?;
    let h = &result.egop;
    let d = h.dim();
    let eigenvalues = symmetric_eigen(&h.matrix)?.values;
    let max_principal_angle = match truth {
        Truth::Known(basis) => {
            let estimate = top_eigvec_subspace(h, basis.dim())?;
            Some(principal_angles(&estimate.basis, &basis)?.max_angle)
        }
        Truth::Unknown => None,
    };
    let report = EgopReport {
        mode: mode_name(config.mode),
        n: data.n(),
        dim: d,
        lambda: config.lifetime,
        trees: config.n_trees,
        step: config.step,
        iters: config.iterations,
        seed: config.seed,
        n_eval: h.n_eval,
        matrix: h.matrix.rows_iter().collect(),
        eigenvalues,
        weights: Weights {
            omega: &result.weights.omega,
            normalized: &result.weights.normalized,
            degenerate: result.weights.degenerate,
        },
        max_principal_angle,
    };
    let mut w = output(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn experiment(a: ExperimentArgs) -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::new(a.id);
    if let Some(n) = a.n {
        cfg.n_grid = n;
    }
    if let Some(l) = a.lambda {
        cfg.lambda_grid = l.0;
    }
    if let Some(s) = a.seeds {
        cfg.seeds = s.0;
    }
    if let Some(k) = a.iters {
        cfg.iterations = k;
    }
    if let Some(m) = a.trees {
        cfg.n_trees = m;
    }
    if let Some(t) = a.step {
        cfg.step = t;
    }
    if let Some(l) = a.estimation_lambda {
        cfg.estimation_lifetime = l;
    }
    if let Some(n) = a.mse_n {
        cfg.mse_n = n;
    }
    if let Some(n) = a.test_size {
        cfg.test_size = n;
    }
    if let Some(i) = a.indicator {
        cfg.indicator = i.into();
    }
    if let Some(ids) = a.scenario {
        cfg.scenarios = ids
            .into_iter()
            .map(Scenario::from_id)
            .collect::<Result<_, _>>()?;
    }
    if let Some(r) = a.region {
        cfg.regions = r.into_iter().map(Region::from).collect();
    }
    if a.noise.is_some() {
        cfg.noise_sd = a.noise;
    }
    if let Some(sd) = a.seir_noise {
        cfg.seir_noise_sd = sd;
    }
    if let Some(n) = a.n_mc {
        cfg.n_mc = n;
    }
    apply_cv(&mut cfg, a.cv);
    write_rows(&cfg, a.out.as_deref())
}

fn apply_cv(cfg: &mut ExperimentConfig, cv: args::CvOptions) {
    cfg.dataset = cv.data;
    cfg.target = cv.target;
    cfg.cv.folds = cv.folds;
    cfg.cv.repeats = cv.repeats;
    cfg.cv.inner_folds = cv.inner_folds;
}

fn cv(a: CvArgs) -> anyhow::Result<()> {
    if a.cv.data.is_none() {
        bail!(Error::InvalidParameter("cv needs --data".into()));
    }
    let mut cfg = ExperimentConfig::new(ExperimentId::CvBench);
    cfg.n_trees = a.trees;
    cfg.seeds = vec![a.seed];
    apply_cv(&mut cfg, a.cv);
    write_rows(&cfg, a.out.as_deref())
}

fn write_rows(cfg: &ExperimentConfig, out: Option<&Path>) -> anyhow::Result<()> {
    let rows = run_experiment(cfg)?;
    write_results(&rows, output(out)?)?;
    Ok(())
}

fn generate(a: GenerateArgs) -> anyhow::Result<()> {
    if a.source.data.is_some() {
        bail!(Error::InvalidParameter(
            "generate takes --scenario or --region, not --data".into()
        ));
    }
    let (data, _) = load_source(&a.source, false)?;
    write_csv(&data, &a.source.target, output(a.out.as_deref())?)?;
    Ok(())
}

fn validate(a: ValidateArgs) -> anyhow::Result<()> {
    let file = File::open(&a.path).with_context(|| format!("reading {}", a.path.display()))?;
    let rows = validate_results_csv(file)?;
    println!("{}: {rows} rows match the results schema", a.path.display());
    Ok(())
}
