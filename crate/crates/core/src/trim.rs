//! Transformed and iterated Mondrian forests.
//!
//! `fit_transformed` trains a forest on `{(A·xᵢ, yᵢ)}` and predicts through
//! `A`. `fit_trim` alternates that fit with re-estimating the EGOP of the
//! fitted model, starting from the identity. `fit_weighted` keeps the cuts
//! axis-aligned and instead reweights the per-dimension cut rates by the EGOP
//! diagonal.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::egop::{
    gradients, normalize_transform, outer_product_mean, weights_from_gradients, EgopEstimate,
    ImportanceWeights, IndicatorMode, TransformMatrix,
};
use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::mondrian::{ForestConfig, MondrianForest};
use crate::regressor::Regressor;
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimMode {
    /// Oblique forest: transform inputs by the normalized EGOP.
    #[default]
    Transform,
    /// Axis-aligned forest with cut rates weighted by the EGOP diagonal.
    Reweight,
}

/// Which points the EGOP is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalPointMode {
    /// The training inputs themselves.
    #[default]
    Train,
    /// Hold out this fraction of the data, fit every forest on the rest, and
    /// evaluate gradients only on the held-out inputs.
    Heldout { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimConfig {
    pub lifetime: f64,
    pub n_trees: usize,
    pub step: f64,
    pub iterations: usize,
    pub mode: TrimMode,
    pub indicator: IndicatorMode,
    pub eval_points: EvalPointMode,
    pub seed: u64,
}

impl Default for TrimConfig {
    fn default() -> Self {
        TrimConfig {
            lifetime: 5.0,
            n_trees: 10,
            step: 0.1,
            iterations: 1,
            mode: TrimMode::Transform,
            indicator: IndicatorMode::ForestAllPopulated,
            eval_points: EvalPointMode::Train,
            seed: 0,
        }
    }
}

impl TrimConfig {
    pub fn validate(&self) -> Result<()> {
        // λ = 0 is allowed: it is the single-cell forest used at the start of
        // lifetime sweeps.
        if !(self.lifetime >= 0.0 && self.lifetime.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lifetime must be nonnegative, got {}",
                self.lifetime
            )));
        }
        if self.n_trees == 0 {
            return Err(Error::InvalidParameter("need at least one tree".into()));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step must be positive, got {}",
                self.step
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter(
                "need at least one iteration".into(),
            ));
        }
        if let EvalPointMode::Heldout { fraction } = self.eval_points {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "held-out fraction must be in (0, 1), got {fraction}"
                )));
            }
        }
        Ok(())
    }

    fn forest_config(&self, seed: u64) -> ForestConfig {
        ForestConfig::new(self.lifetime, self.n_trees, seed)
    }
}

/// Seed for forest fit number `round`; round 0 uses the master seed so a
/// one-round fit reproduces the plain forest.
pub fn round_seed(seed: u64, round: usize) -> u64 {
    if round == 0 {
        seed
    } else {
        derive_seed(seed, round as u64)
    }
}

/// Forest trained on transformed inputs; predicts at `A·x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimModel {
    pub transform: TransformMatrix,
    pub forest: MondrianForest,
    /// Number of EGOP-driven updates behind `transform` (or the weights).
    pub iteration: usize,
    pub config: TrimConfig,
    /// The requested transform was degenerate and the identity was used.
    pub degenerate_fallback: bool,
}

pub const MODEL_FORMAT: &str = "trim-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: TrimModel,
}

impl TrimModel {
    pub fn dim(&self) -> usize {
        self.transform.dim()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.predict_point(x))
    }

    fn mapped(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.transform.matrix.nrows()];
        self.transform.matrix.matvec_into(x, &mut z);
        z
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "expected {MODEL_FORMAT} v{MODEL_FORMAT_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        // Round-trip the forest through its own validation.
        let forest = MondrianForest::from_json(&file.model.forest.to_json()?)?;
        check_dim(file.model.transform.dim(), forest.dim())?;
        check_dim(
            file.model.transform.dim(),
            file.model.transform.matrix.ncols(),
        )?;
        Ok(TrimModel {
            forest,
            ..file.model
        })
    }
}

impl Regressor for TrimModel {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn predict_point(&self, x: &[f64]) -> f64 {
        self.forest.predict_unchecked(&self.mapped(x))
    }

    fn is_populated(&self, x: &[f64]) -> bool {
        self.forest.all_populated_unchecked(&self.mapped(x))
    }
}

/// Trains a uniform-weight forest on `{(A·xᵢ, yᵢ)}` with `config.seed`.
pub fn fit_transformed(
    data: &Dataset,
    transform: &TransformMatrix,
    config: &TrimConfig,
) -> Result<TrimModel> {
    config.validate()?;
    fit_transformed_seeded(data, transform.clone(), config, config.seed, 0, false)
}

fn fit_transformed_seeded(
    data: &Dataset,
    transform: TransformMatrix,
    config: &TrimConfig,
    seed: u64,
    iteration: usize,
    degenerate_fallback: bool,
) -> Result<TrimModel> {
    if data.is_empty() {
        return Err(Error::Empty("training data".into()));
    }
    check_dim(data.dim(), transform.dim())?;
    check_dim(data.dim(), transform.matrix.ncols())?;
    let mapped = if transform.is_identity() {
        data.clone()
    } else {
        data.map_inputs(&transform.matrix)?
    };
    let forest = MondrianForest::fit(&mapped, &config.forest_config(seed))?;
    Ok(TrimModel {
        transform,
        forest,
        iteration,
        config: config.clone(),
        degenerate_fallback,
    })
}

/// Like [`fit_transformed`], but a degenerate EGOP falls back to the identity
/// transform and sets `degenerate_fallback`.
pub fn fit_from_egop(
    data: &Dataset,
    egop: &EgopEstimate,
    config: &TrimConfig,
) -> Result<TrimModel> {
    config.validate()?;
    let (transform, degenerate) = transform_or_identity(egop)?;
    fit_transformed_seeded(data, transform, config, config.seed, 1, degenerate)
}

fn transform_or_identity(egop: &EgopEstimate) -> Result<(TransformMatrix, bool)> {
    match normalize_transform(egop) {
        Ok(t) => Ok((t, false)),
        Err(Error::DegenerateEgop) => Ok((TransformMatrix::identity(egop.dim()), true)),
        Err(e) => Err(e),
    }
}

/// Per-round record of an iterated fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub seed: u64,
    pub egop: EgopEstimate,
    pub weights: ImportanceWeights,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimFit {
    pub model: TrimModel,
    /// EGOP estimated from the last fitted model.
    pub egop: EgopEstimate,
    /// Importance weights (EGOP diagonal) from the last fitted model.
    pub weights: ImportanceWeights,
    pub rounds: Vec<RoundRecord>,
    pub forest_fits: usize,
    pub egop_estimates: usize,
}

/// Fit and evaluation sets according to the eval-point mode.
fn split_for_eval(data: &Dataset, config: &TrimConfig) -> Result<(Dataset, Matrix)> {
    match config.eval_points {
        EvalPointMode::Train => Ok((data.clone(), data.x().clone())),
        EvalPointMode::Heldout { fraction } => {
            let n = data.n();
            let n_eval = ((n as f64) * fraction).round() as usize;
            if n_eval == 0 || n_eval >= n {
                return Err(Error::InvalidParameter(format!(
                    "held-out fraction {fraction} leaves an empty side for n = {n}"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut stream_rng(derive_seed(config.seed, u64::MAX), 0));
            let (eval, fit) = order.split_at(n_eval);
            Ok((data.subset(fit), data.subset(eval).x().clone()))
        }
    }
}

/// Iterated transform fit: `K` rounds of (fit on `A_k·x`, estimate `Ĥ` from
/// the fitted model). Returns the last model and the last `Ĥ`.
pub fn fit_trim(data: &Dataset, config: &TrimConfig) -> Result<TrimFit> {
    config.validate()?;
    if config.mode != TrimMode::Transform {
        return Err(Error::InvalidParameter(
            "fit_trim needs mode = transform; use fit_weighted for reweight".into(),
        ));
    }
    let (fit_data, eval) = split_for_eval(data, config)?;
    let d = data.dim();
    let mut transform = TransformMatrix::identity(d);
    let mut degenerate = false;
    let mut rounds = Vec::with_capacity(config.iterations);
    let mut last = None;

    for round in 0..config.iterations {
        let seed = round_seed(config.seed, round);
        let model = fit_transformed_seeded(&fit_data, transform, config, seed, round, degenerate)?;
        // Gradients are taken in original coordinates: the model maps x ± t·e_j
        // through its transform internally.
        let grads = gradients(&model, &eval, config.step, config.indicator)?;
        let egop = EgopEstimate {
            matrix: outer_product_mean(&grads, d)?,
            step: config.step,
            n_eval: grads.len(),
            indicator_mode: config.indicator,
        };
        let weights = weights_from_gradients(&grads, d);
        let (next, next_degenerate) = transform_or_identity(&egop)?;
        rounds.push(RoundRecord {
            round,
            seed,
            egop: egop.clone(),
            weights: weights.clone(),
            degenerate: next_degenerate,
        });
        transform = next;
        degenerate = next_degenerate;
        last = Some((model, egop, weights));
    }

    let (model, egop, weights) = last.expect("iterations >= 1");
    Ok(TrimFit {
        model,
        egop,
        weights,
        forest_fits: rounds.len(),
        egop_estimates: rounds.len(),
        rounds,
    })
}

/// Weighted-Mondrian fit: `K` rounds of (fit axis-aligned forest with the
/// current cut weights, estimate ω from it), then a final fit with the last
/// normalized ω. The first round uses uniform weights.
pub fn fit_weighted(data: &Dataset, config: &TrimConfig) -> Result<TrimFit> {
    config.validate()?;
    if config.mode != TrimMode::Reweight {
        return Err(Error::InvalidParameter(
            "fit_weighted needs mode = reweight; use fit_trim for transform".into(),
        ));
    }
    let (fit_data, eval) = split_for_eval(data, config)?;
    if fit_data.is_empty() {
        return Err(Error::Empty("training data".into()));
    }
    let d = data.dim();
    let identity = TransformMatrix::identity(d);
    let mut dir_weights: Option<Vec<f64>> = None;
    let mut rounds = Vec::with_capacity(config.iterations);
    let mut last_egop = None;

    for round in 0..config.iterations {
        let seed = round_seed(config.seed, round);
        let forest_cfg = ForestConfig {
            dir_weights: dir_weights.clone(),
            ..config.forest_config(seed)
        };
        let forest = MondrianForest::fit(&fit_data, &forest_cfg)?;
        let grads = gradients(&forest, &eval, config.step, config.indicator)?;
        let weights = weights_from_gradients(&grads, d);
        let egop = EgopEstimate {
            matrix: outer_product_mean(&grads, d)?,
            step: config.step,
            n_eval: grads.len(),
            indicator_mode: config.indicator,
        };
        rounds.push(RoundRecord {
            round,
            seed,
            egop: egop.clone(),
            weights: weights.clone(),
            degenerate: weights.degenerate,
        });
        dir_weights = Some(weights.normalized.clone());
        last_egop = Some((egop, weights));
    }

    let (egop, weights) = last_egop.expect("iterations >= 1");
    let final_seed = round_seed(config.seed, config.iterations);
    let forest = MondrianForest::fit(
        &fit_data,
        &ForestConfig {
            dir_weights: Some(weights.normalized.clone()),
            ..config.forest_config(final_seed)
        },
    )?;
    Ok(TrimFit {
        model: TrimModel {
            transform: identity,
            forest,
            iteration: config.iterations,
            config: config.clone(),
            degenerate_fallback: weights.degenerate,
        },
        egop,
        weights,
        forest_fits: config.iterations + 1,
        egop_estimates: config.iterations,
        rounds,
    })
}

/// Dispatches on `config.mode`.
pub fn fit(data: &Dataset, config: &TrimConfig) -> Result<TrimFit> {
    match config.mode {
        TrimMode::Transform => fit_trim(data, config),
        TrimMode::Reweight => fit_weighted(data, config),
    }
}

/// Multipliers for [`default_schedule`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConstants {
    pub lifetime: f64,
    pub trees: f64,
    pub step: f64,
}

impl Default for ScheduleConstants {
    fn default() -> Self {
        ScheduleConstants {
            lifetime: 1.0,
            trees: 1.0,
            step: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lifetime: f64,
    pub n_trees: usize,
    pub step: f64,
}

/// Consistency-rate parameter scaling: `λ ∝ n^{1/(d+3)}`, `M ∝ n^{1/(d+3)}`
/// (rounded up), `t ∝ n^{-3/(4d+12)}`.
pub fn default_schedule(n: usize, d: usize, c: ScheduleConstants) -> Result<Schedule> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidParameter(
            "schedule needs n >= 1 and d >= 1".into(),
        ));
    }
    let n = n as f64;
    let d = d as f64;
    let growth = n.powf(1.0 / (d + 3.0));
    Ok(Schedule {
        lifetime: c.lifetime * growth,
        n_trees: ((c.trees * growth).ceil() as usize).max(1),
        step: c.step * n.powf(-3.0 / (4.0 * d + 12.0)),
    })
}
