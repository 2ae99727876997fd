use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use trim_forest::egop::IndicatorMode;
use trim_forest::harness::ExperimentId;
use trim_forest::trim::{EvalPointMode, TrimConfig, TrimMode};

#[derive(Parser)]
#[command(
    name = "trim",
    version,
    about = "Transformed iterative Mondrian forests"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Fit a model and write it as JSON, with a JSON fit report.
    Fit(FitArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Estimate the expected gradient outer product of a fitted model.
    Egop(EgopArgs),
    /// Run one of the experiment studies and write long-format CSV results.
    Experiment(ExperimentArgs),
    /// Repeated k-fold comparison of Mondrian and TrIM forests on a CSV file.
    Cv(CvArgs),
    /// Write a synthetic scenario or SEIR dataset as CSV.
    Generate(GenerateArgs),
    /// Check a results CSV against the results schema.
    Validate(ValidateArgs),
}

#[derive(Args)]
pub struct SourceArgs {
    /// Numeric CSV file with a header row.
    #[arg(long, conflicts_with_all = ["scenario", "region"])]
    pub data: Option<PathBuf>,
    /// Response column of --data.
    #[arg(long, default_value = "y")]
    pub target: String,
    /// Synthetic ridge-function scenario (1-4).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4), conflicts_with = "region")]
    pub scenario: Option<u8>,
    /// SEIR reproduction-number study.
    #[arg(long, value_enum)]
    pub region: Option<RegionArg>,
    /// Sample size for generated data.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Noise standard deviation for generated data (scenario default 0.1, SEIR default 0).
    #[arg(long)]
    pub noise: Option<f64>,
    /// Seed for generated data.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

#[derive(Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 5.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 10)]
    pub trees: usize,
    /// Difference-quotient step t.
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    /// Number of forest fits K.
    #[arg(long, default_value_t = 1)]
    pub iters: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Transform)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = IndicatorArg::Forest)]
    pub indicator: IndicatorArg,
    #[arg(long, value_enum, default_value_t = EvalPointsArg::Train)]
    pub eval_points: EvalPointsArg,
    /// Fraction held out for gradient evaluation with --eval-points heldout.
    #[arg(long, default_value_t = 0.2)]
    pub heldout_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ModelArgs {
    pub fn config(&self) -> TrimConfig {
        TrimConfig {
            lifetime: self.lambda,
            n_trees: self.trees,
            step: self.step,
            iterations: self.iters,
            mode: self.mode.into(),
            indicator: self.indicator.into(),
            eval_points: match self.eval_points {
                EvalPointsArg::Train => EvalPointMode::Train,
                EvalPointsArg::Heldout => EvalPointMode::Heldout {
                    fraction: self.heldout_fraction,
                },
            },
            seed: self.seed,
        }
    }
}

#[derive(Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Model output file.
    #[arg(long)]
    pub out: PathBuf,
    /// Report output file; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV of inputs; a --target column, if present, is ignored.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "y")]
    pub target: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EgopArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ExperimentArgs {
    #[arg(value_parser = parse_experiment)]
    pub id: ExperimentId,
    /// Training sizes for subspace rows.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Lifetimes for test-MSE rows; pass "none" to skip them.
    #[arg(long)]
    pub lambda: Option<LifetimeGrid>,
    /// Seeds as a list (0,3,7) or a half-open range (0..10).
    #[arg(long)]
    pub seeds: Option<SeedList>,
    /// Iteration counts compared by the reiteration studies.
    #[arg(long, value_delimiter = ',')]
    pub iters: Option<Vec<usize>>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub step: Option<f64>,
    /// Lifetime of the forests the EGOP is estimated from.
    #[arg(long)]
    pub estimation_lambda: Option<f64>,
    /// Training size for test-MSE rows.
    #[arg(long)]
    pub mse_n: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    #[arg(long, value_enum)]
    pub indicator: Option<IndicatorArg>,
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=4))]
    pub scenario: Option<Vec<u8>>,
    #[arg(long, value_delimiter = ',', value_enum)]
    pub region: Option<Vec<RegionArg>>,
    /// Overrides the scenarios' noise level.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seir_noise: Option<f64>,
    /// Monte Carlo size of the scenarios' true EGOP.
    #[arg(long)]
    pub n_mc: Option<usize>,
    #[command(flatten)]
    pub cv: CvOptions,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CvOptions {
    /// Dataset for cv_bench.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    pub target: String,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 15)]
    pub repeats: usize,
    /// Folds of the model-selection split inside each training fold.
    #[arg(long, default_value_t = 3)]
    pub inner_folds: usize,
}

#[derive(Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub cv: CvOptions,
    #[arg(long, default_value_t = 10)]
    pub trees: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ValidateArgs {
    pub path: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum RegionArg {
    Liberia,
    SierraLeone,
}

impl From<RegionArg> for trim_forest::datasets::Region {
    fn from(r: RegionArg) -> Self {
        match r {
            RegionArg::Liberia => Self::Liberia,
            RegionArg::SierraLeone => Self::SierraLeone,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Transform,
    Reweight,
}

impl From<ModeArg> for TrimMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Transform => TrimMode::Transform,
            ModeArg::Reweight => TrimMode::Reweight,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum IndicatorArg {
    /// Zero a gradient component unless every tree has data at both shifted points.
    Forest,
    Off,
}

impl From<IndicatorArg> for IndicatorMode {
    fn from(i: IndicatorArg) -> Self {
        match i {
            IndicatorArg::Forest => IndicatorMode::ForestAllPopulated,
            IndicatorArg::Off => IndicatorMode::Off,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum EvalPointsArg {
    Train,
    Heldout,
}

fn parse_experiment(s: &str) -> Result<ExperimentId, String> {
    ExperimentId::parse(s).map_err(|_| {
        let names: Vec<&str> = ExperimentId::ALL.iter().map(|id| id.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

#[derive(Clone, Debug)]
pub struct SeedList(pub Vec<u64>);

impl FromStr for SeedList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = |_| format!("'{s}' is neither a seed list nor a range a..b");
        let seeds: Vec<u64> = match s.split_once("..") {
            Some((a, b)) => {
                (a.trim().parse().map_err(bad)?..b.trim().parse().map_err(bad)?).collect()
            }
            None => s
                .split(',')
                .map(|p| p.trim().parse().map_err(bad))
                .collect::<Result<_, _>>()?,
        };
        if seeds.is_empty() {
            return Err(format!("'{s}' selects no seeds"));
        }
        Ok(SeedList(seeds))
    }
}

#[derive(Clone, Debug)]
pub struct LifetimeGrid(pub Vec<f64>);

impl FromStr for LifetimeGrid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "none" {
            return Ok(LifetimeGrid(Vec::new()));
        }
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("'{p}' is not a number"))
            })
            .collect::<Result<_, _>>()
            .map(LifetimeGrid)
    }
}
