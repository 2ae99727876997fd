//! Repeated K-fold cross-validation with nested grid selection.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::subspace::mse;
use crate::trim::{fit_trim, TrimConfig, TrimModel};

/// One hyperparameter setting. `updates = 0` is the plain Mondrian forest;
/// `updates = k` fits the forest after `k` EGOP transform updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub lifetime: f64,
    pub n_trees: usize,
    pub step: f64,
    pub updates: usize,
}

impl ModelSpec {
    pub fn method(&self) -> &'static str {
        if self.updates == 0 {
            "MF"
        } else {
            "TrIM"
        }
    }

    pub fn config(&self, seed: u64) -> TrimConfig {
        TrimConfig {
            lifetime: self.lifetime,
            n_trees: self.n_trees,
            step: self.step,
            iterations: self.updates + 1,
            seed,
            ..TrimConfig::default()
        }
    }

    pub fn fit(&self, data: &Dataset, seed: u64) -> Result<TrimModel> {
        Ok(fit_trim(data, &self.config(seed))?.model)
    }
}

/// Lifetimes {1,…,5}.
pub fn forest_grid(n_trees: usize) -> Vec<ModelSpec> {
    (1..=5)
        .map(|l| ModelSpec {
            lifetime: l as f64,
            n_trees,
            step: 0.1,
            updates: 0,
        })
        .collect()
}

/// Lifetimes {1,…,5} × steps {0.1, 0.2, 0.5} × updates {1, 2}.
pub fn trim_grid(n_trees: usize) -> Vec<ModelSpec> {
    let mut grid = Vec::new();
    for l in 1..=5 {
        for step in [0.1, 0.2, 0.5] {
            for updates in [1, 2] {
                grid.push(ModelSpec {
                    lifetime: l as f64,
                    n_trees,
                    step,
                    updates,
                });
            }
        }
    }
    grid
}

/// A named grid competing as one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodGrid {
    pub name: String,
    pub specs: Vec<ModelSpec>,
}

impl MethodGrid {
    pub fn new(name: impl Into<String>, specs: Vec<ModelSpec>) -> Self {
        MethodGrid {
            name: name.into(),
            specs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub repeats: usize,
    /// Folds of the selection CV run inside each training fold.
    pub inner_folds: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            repeats: 15,
            inner_folds: 3,
            seed: 0,
        }
    }
}

/// Test-fold indices of a shuffled split of `0..n` into `folds` parts whose
/// sizes differ by at most one. Each fold is sorted.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    if n < folds {
        return Err(Error::InvalidParameter(format!(
            "need n >= folds, got n = {n} and {folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        let mut fold = order[start..start + len].to_vec();
        fold.sort_unstable();
        out.push(fold);
        start += len;
    }
    Ok(out)
}

fn split(data: &Dataset, test: &[usize]) -> (Dataset, Dataset) {
    let mut in_test = vec![false; data.n()];
    test.iter().for_each(|&i| in_test[i] = true);
    let train: Vec<usize> = (0..data.n()).filter(|&i| !in_test[i]).collect();
    (data.subset(&train), data.subset(test))
}

/// Mean validation MSE of `spec` over a `folds`-fold split of `data`.
pub fn cv_score(data: &Dataset, spec: &ModelSpec, folds: usize, seed: u64) -> Result<f64> {
    let assignment = fold_assignment(data.n(), folds, seed)?;
    let mut total = 0.0;
    for (f, test) in assignment.iter().enumerate() {
        let (train, held) = split(data, test);
        let model = spec.fit(&train, derive_seed(seed, f as u64))?;
        total += mse(&model, &held)?;
    }
    Ok(total / folds as f64)
}

/// Index of the spec with the lowest inner CV score; ties keep the earlier one.
/// A single-spec grid, or too little data for an inner split, selects index 0.
pub fn select(data: &Dataset, specs: &[ModelSpec], inner_folds: usize, seed: u64) -> Result<usize> {
    if specs.is_empty() {
        return Err(Error::Empty("model grid".into()));
    }
    let folds = inner_folds.min(data.n());
    if specs.len() == 1 || folds < 2 {
        return Ok(0);
    }
    let scores: Vec<f64> = specs
        .par_iter()
        .map(|s| cv_score(data, s, folds, seed))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Outcome of one method in one repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRecord {
    pub repeat: usize,
    pub method: String,
    /// Mean test MSE over the folds.
    pub mean_mse: f64,
    pub fold_mse: Vec<f64>,
    /// Spec chosen in each fold.
    pub selected: Vec<ModelSpec>,
}

impl CvRecord {
    /// Most frequently selected lifetime; ties go to the smaller value.
    pub fn modal_lifetime(&self) -> f64 {
        let mut best = (0usize, f64::INFINITY);
        for s in &self.selected {
            let count = self
                .selected
                .iter()
                .filter(|t| t.lifetime == s.lifetime)
                .count();
            if count > best.0 || (count == best.0 && s.lifetime < best.1) {
                best = (count, s.lifetime);
            }
        }
        best.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub config: CvConfig,
    /// Ordered by repeat, then by method in grid order.
    pub records: Vec<CvRecord>,
}

/// Repeated K-fold CV. In every (repeat, fold) each method picks its spec by
/// inner CV on the training fold, refits it there and is scored on the test
/// fold.
pub fn cross_validate(
    data: &Dataset,
    methods: &[MethodGrid],
    config: &CvConfig,
) -> Result<CvResult> {
    if methods.is_empty() {
        return Err(Error::Empty("method list".into()));
    }
    if config.repeats == 0 {
        return Err(Error::InvalidParameter("need at least one repeat".into()));
    }
    let assignments: Vec<Vec<Vec<usize>>> = (0..config.repeats)
        .map(|r| fold_assignment(data.n(), config.folds, derive_seed(config.seed, r as u64)))
        .collect::<Result<_>>()?;

    let cells: Vec<(usize, usize)> = (0..config.repeats)
        .flat_map(|r| (0..config.folds).map(move |f| (r, f)))
        .collect();
    let outcomes: Vec<Vec<(f64, ModelSpec)>> = cells
        .par_iter()
        .map(|&(r, f)| {
            let (train, test) = split(data, &assignments[r][f]);
            if train.is_empty() || test.is_empty() {
                return Err(Error::Empty(format!("fold {f} of repeat {r}")));
            }
            let seed = derive_seed(derive_seed(config.seed, r as u64), (f + 1) as u64);
            methods
                .iter()
                .map(|m| {
                    let pick = select(&train, &m.specs, config.inner_folds, seed)?;
                    let spec = m.specs[pick];
                    let model = spec.fit(&train, seed)?;
                    Ok((mse(&model, &test)?, spec))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(config.repeats * methods.len());
    for r in 0..config.repeats {
        for (mi, m) in methods.iter().enumerate() {
            let per_fold: Vec<&(f64, ModelSpec)> = (0..config.folds)
                .map(|f| &outcomes[r * config.folds + f][mi])
                .collect();
            let fold_mse: Vec<f64> = per_fold.iter().map(|o| o.0).collect();
            records.push(CvRecord {
                repeat: r,
                method: m.name.clone(),
                mean_mse: fold_mse.iter().sum::<f64>() / config.folds as f64,
                fold_mse,
                selected: per_fold.iter().map(|o| o.1).collect(),
            });
        }
    }
    Ok(CvResult {
        config: *config,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn line(n: usize) -> Dataset {
        let x =
            Matrix::from_row_major(n, 1, (0..n).map(|i| i as f64 / n as f64).collect()).unwrap();
        let y = (0..n).map(|i| 2.0 * i as f64 / n as f64).collect();
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn folds_partition_the_indices() {
        let folds = fold_assignment(23, 5, 1).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(folds.iter().all(|f| f.len() == 4 || f.len() == 5));
        assert_eq!(folds, fold_assignment(23, 5, 1).unwrap());
        assert!(fold_assignment(3, 4, 0).is_err());
        assert!(fold_assignment(3, 1, 0).is_err());
    }

    #[test]
    fn leave_one_out_with_constant_model() {
        let x = Matrix::from_rows(&[[0.0], [0.5], [1.0]]).unwrap();
        let data = Dataset::new(x, vec![1.0, 2.0, 3.0]).unwrap();
        let spec = ModelSpec {
            lifetime: 0.0,
            n_trees: 1,
            step: 0.1,
            updates: 0,
        };
        let cfg = CvConfig {
            folds: 3,
            repeats: 2,
            inner_folds: 3,
            seed: 4,
        };
        let grid = [MethodGrid::new("MF", vec![spec])];
        let a = cross_validate(&data, &grid, &cfg).unwrap();
        // Leaving out y_i, the constant fit is the mean of the other two.
        let want = (1.5f64.powi(2) + 0.0 + 1.5f64.powi(2)) / 3.0;
        for rec in &a.records {
            assert!((rec.mean_mse - want).abs() < 1e-12);
        }
        assert_eq!(a, cross_validate(&data, &grid, &cfg).unwrap());
    }

    #[test]
    fn single_spec_grid_is_selected() {
        let spec = forest_grid(2)[3];
        assert_eq!(select(&line(30), &[spec], 3, 0).unwrap(), 0);
    }

    #[test]
    fn selection_prefers_finer_partitions_on_a_trend() {
        let data = line(200);
        let specs = [
            ModelSpec {
                lifetime: 0.0,
                n_trees: 5,
                step: 0.1,
                updates: 0,
            },
            ModelSpec {
                lifetime: 20.0,
                n_trees: 5,
                step: 0.1,
                updates: 0,
            },
        ];
        assert_eq!(select(&data, &specs, 3, 0).unwrap(), 1);
    }

    #[test]
    fn grids_match_the_protocol() {
        assert_eq!(forest_grid(10).len(), 5);
        let g = trim_grid(10);
        assert_eq!(g.len(), 30);
        assert!(g.iter().all(|s| s.method() == "TrIM" && s.updates <= 2));
        assert!(forest_grid(10).iter().all(|s| s.method() == "MF"));
    }

    #[test]
    fn one_row_per_repeat_and_method() {
        let cfg = CvConfig {
            folds: 4,
            repeats: 3,
            inner_folds: 2,
            seed: 0,
        };
        let grids = [
            MethodGrid::new("MF", forest_grid(2)[..2].to_vec()),
            MethodGrid::new("TrIM", trim_grid(2)[..2].to_vec()),
        ];
        let res = cross_validate(&line(40), &grids, &cfg).unwrap();
        assert_eq!(res.records.len(), 6);
        for rec in &res.records {
            assert_eq!(rec.selected.len(), 4);
            assert!([1.0, 2.0].contains(&rec.modal_lifetime()));
        }
    }
}
