//! Mondrian (and weighted-Mondrian) tree partitions and the forest regressor
//! built from them.
//!
//! A tree is grown by racing one exponential clock per input dimension in
//! each cell. Clock `j` rings at rate `d · w_j · extent_j`, so uniform
//! weights `w_j = 1/d` give the usual Mondrian rate `extent_j`. The winning
//! clock picks the cut dimension, the cut location is uniform over the
//! extent, and recursion stops once the accumulated split time passes the
//! lifetime λ.
//!
//! [`grow_tree`] measures extents on the training points inside each cell,
//! so every cut separates data and every leaf holds at least one point;
//! cells with a single point are never cut. [`sample_partition`] runs the
//! same race on the geometric cells themselves, which is the Mondrian
//! process on a fixed box.
//!
//! Points exactly on a cut go right: children are `[l, ξ)` and `[ξ, u]`.
//! Queries outside the root box are routed by the same comparisons, so cuts
//! effectively extend to infinity.

use rand::Rng;
use rand_distr::Open01;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::regressor::Regressor;
use crate::rng::{stream_rng, StreamRng};

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Axis-aligned cell `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl AxisBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        for (j, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l <= u) {
                return Err(Error::InvalidParameter(format!(
                    "box bounds in dimension {j} must satisfy lower <= upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(AxisBox { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        AxisBox {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    /// Smallest box containing every row of the dataset. An empty dataset
    /// gives the degenerate box at the origin.
    pub fn bounding(data: &Dataset) -> Self {
        let d = data.dim();
        if data.is_empty() {
            return AxisBox {
                lower: vec![0.0; d],
                upper: vec![0.0; d],
            };
        }
        let mut lower = vec![f64::INFINITY; d];
        let mut upper = vec![f64::NEG_INFINITY; d];
        for row in data.x().rows_iter() {
            for j in 0..d {
                lower[j] = lower[j].min(row[j]);
                upper[j] = upper[j].max(row[j]);
            }
        }
        AxisBox { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn extent(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l <= v && v <= u)
    }

    fn split(&self, dim: usize, loc: f64) -> (AxisBox, AxisBox) {
        let mut left = self.clone();
        let mut right = self.clone();
        left.upper[dim] = loc;
        right.lower[dim] = loc;
        (left, right)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeKind {
    Leaf {
        count: usize,
        label_sum: f64,
    },
    Split {
        dim: usize,
        loc: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MondrianNode {
    pub cell: AxisBox,
    pub birth_time: f64,
    pub kind: NodeKind,
}

/// One Mondrian tree stored as a node arena; the root is node 0 and children
/// always have larger indices than their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MondrianTree {
    nodes: Vec<MondrianNode>,
}

impl MondrianTree {
    pub fn nodes(&self) -> &[MondrianNode] {
        &self.nodes
    }

    pub fn root(&self) -> &MondrianNode {
        &self.nodes[0]
    }

    pub fn dim(&self) -> usize {
        self.root().cell.dim()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut max = 0;
        for (i, node) in self.nodes.iter().enumerate() {
            if let NodeKind::Split { left, right, .. } = node.kind {
                depth[left] = depth[i] + 1;
                depth[right] = depth[i] + 1;
                max = max.max(depth[i] + 1);
            }
        }
        max
    }

    /// Dimension, location and time of the root cut, if any.
    pub fn first_split(&self) -> Option<(usize, f64, f64)> {
        match self.root().kind {
            NodeKind::Split { dim, loc, left, .. } => Some((dim, loc, self.nodes[left].birth_time)),
            NodeKind::Leaf { .. } => None,
        }
    }

    /// Index of the leaf whose cell contains `x`. Unchecked dimension.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i].kind {
                NodeKind::Leaf { .. } => return i,
                NodeKind::Split {
                    dim,
                    loc,
                    left,
                    right,
                } => i = if x[dim] < loc { left } else { right },
            }
        }
    }

    fn leaf_stats(&self, x: &[f64]) -> (usize, f64) {
        match self.nodes[self.leaf_index(x)].kind {
            NodeKind::Leaf { count, label_sum } => (count, label_sum),
            NodeKind::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let (count, sum) = self.leaf_stats(x);
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Leaf mean at `x`, or 0 when the leaf holds no training points.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.predict_unchecked(x))
    }

    pub fn leaf_is_populated(&self, x: &[f64]) -> Result<bool> {
        check_dim(self.dim(), x.len())?;
        Ok(self.leaf_stats(x).0 > 0)
    }

    /// Builds a tree from explicit nodes, validating the arena structure.
    pub fn from_nodes(nodes: Vec<MondrianNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Format("tree has no nodes".into()));
        }
        let d = nodes[0].cell.dim();
        for (i, node) in nodes.iter().enumerate() {
            check_dim(d, node.cell.dim())?;
            if let NodeKind::Split {
                dim,
                loc,
                left,
                right,
            } = node.kind
            {
                if dim >= d
                    || left <= i
                    || right <= i
                    || left >= nodes.len()
                    || right >= nodes.len()
                {
                    return Err(Error::Format(format!("malformed split at node {i}")));
                }
                if !loc.is_finite() {
                    return Err(Error::Format(format!("non-finite split at node {i}")));
                }
            }
        }
        Ok(MondrianTree { nodes })
    }
}

fn validate_weights(weights: &[f64], dim: usize) -> Result<()> {
    check_dim(dim, weights.len())?;
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidParameter(
            "direction weights must be finite and nonnegative".into(),
        ));
    }
    let sum: f64 = weights.iter().sum();
    if dim > 0 && (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidParameter(format!(
            "direction weights must sum to 1, got {sum}"
        )));
    }
    Ok(())
}

fn validate_lifetime(lifetime: f64) -> Result<()> {
    if lifetime.is_finite() && lifetime >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "lifetime must be finite and nonnegative, got {lifetime}"
        )))
    }
}

pub fn uniform_weights(dim: usize) -> Vec<f64> {
    vec![1.0 / dim as f64; dim]
}

/// Exponential waiting time by inversion; rate 0 never rings.
fn exponential(rate: f64, rng: &mut StreamRng) -> f64 {
    if rate > 0.0 {
        let u: f64 = rng.sample(Open01);
        -u.ln() / rate
    } else {
        f64::INFINITY
    }
}

struct Grower<'a> {
    /// With data, extents are taken over the points in each cell; without,
    /// over the cell itself.
    data: Option<&'a Dataset>,
    lifetime: f64,
    rate_scale: Vec<f64>,
}

impl Grower<'_> {
    fn grow(&self, root_box: &AxisBox, rng: &mut StreamRng) -> MondrianTree {
        let d = root_box.dim();
        let all: Vec<usize> = self
            .data
            .map_or_else(Vec::new, |data| (0..data.n()).collect());
        let mut nodes = vec![MondrianNode {
            cell: root_box.clone(),
            birth_time: 0.0,
            kind: NodeKind::Leaf {
                count: 0,
                label_sum: 0.0,
            },
        }];
        let mut stack = vec![(0usize, all)];

        while let Some((id, members)) = stack.pop() {
            let leaf = |members: &[usize]| NodeKind::Leaf {
                count: members.len(),
                label_sum: self
                    .data
                    .map_or(0.0, |data| members.iter().map(|&i| data.y()[i]).sum()),
            };
            let range = match self.data {
                Some(data) => match data_range(data, &members, d) {
                    Some(r) => r,
                    None => {
                        nodes[id].kind = leaf(&members);
                        continue;
                    }
                },
                None => {
                    let cell = &nodes[id].cell;
                    (cell.lower.clone(), cell.upper.clone())
                }
            };
            let (lower, upper) = range;

            let mut wait = f64::INFINITY;
            let mut cut_dim = 0;
            for j in 0..d {
                let t = exponential(self.rate_scale[j] * (upper[j] - lower[j]), rng);
                if t < wait {
                    wait = t;
                    cut_dim = j;
                }
            }
            let split_time = nodes[id].birth_time + wait;
            if !(split_time <= self.lifetime) {
                nodes[id].kind = leaf(&members);
                continue;
            }

            let (lo, hi) = (lower[cut_dim], upper[cut_dim]);
            let u: f64 = rng.sample(Open01);
            let loc = lo + u * (hi - lo);
            if !(lo < loc && loc < hi) {
                // Extent below float resolution; cannot be cut.
                nodes[id].kind = leaf(&members);
                continue;
            }

            let cell = &nodes[id].cell;

            let (left_box, right_box) = cell.split(cut_dim, loc);
            let (left_members, right_members): (Vec<usize>, Vec<usize>) = match self.data {
                Some(data) => members.iter().partition(|&&i| data.point(i)[cut_dim] < loc),
                None => (Vec::new(), Vec::new()),
            };
            let left = nodes.len();
            let right = left + 1;
            for cell in [left_box, right_box] {
                nodes.push(MondrianNode {
                    cell,
                    birth_time: split_time,
                    kind: NodeKind::Leaf {
                        count: 0,
                        label_sum: 0.0,
                    },
                });
            }
            nodes[id].kind = NodeKind::Split {
                dim: cut_dim,
                loc,
                left,
                right,
            };
            stack.push((right, right_members));
            stack.push((left, left_members));
        }
        MondrianTree { nodes }
    }
}

/// Bounding box of the listed points, or `None` if there are none.
fn data_range(data: &Dataset, members: &[usize], d: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let (&first, rest) = members.split_first()?;
    let mut lower = data.point(first).to_vec();
    let mut upper = lower.clone();
    for &i in rest {
        let x = data.point(i);
        for j in 0..d {
            lower[j] = lower[j].min(x[j]);
            upper[j] = upper[j].max(x[j]);
        }
    }
    Some((lower, upper))
}

fn rate_scale(weights: &[f64]) -> Vec<f64> {
    let d = weights.len() as f64;
    weights.iter().map(|w| d * w).collect()
}

/// Grows one (weighted) Mondrian tree over `root_box` and records leaf label
/// statistics for `data`. Clock rates use the extent of the points in each cell.
pub fn grow_tree(
    data: &Dataset,
    root_box: &AxisBox,
    lifetime: f64,
    dir_weights: &[f64],
    rng: &mut StreamRng,
) -> Result<MondrianTree> {
    check_dim(root_box.dim(), data.dim())?;
    validate_lifetime(lifetime)?;
    validate_weights(dir_weights, root_box.dim())?;
    if let Some(i) = (0..data.n()).find(|&i| !root_box.contains(data.point(i))) {
        return Err(Error::InvalidParameter(format!(
            "training point {i} lies outside the root box"
        )));
    }
    let grower = Grower {
        data: Some(data),
        lifetime,
        rate_scale: rate_scale(dir_weights),
    };
    Ok(grower.grow(root_box, rng))
}

/// Samples the full (weighted) Mondrian partition of `root_box` with no data
/// attached; every leaf has count 0.
pub fn sample_partition(
    root_box: &AxisBox,
    lifetime: f64,
    dir_weights: &[f64],
    rng: &mut StreamRng,
) -> Result<MondrianTree> {
    validate_lifetime(lifetime)?;
    validate_weights(dir_weights, root_box.dim())?;
    let grower = Grower {
        data: None,
        lifetime,
        rate_scale: rate_scale(dir_weights),
    };
    Ok(grower.grow(root_box, rng))
}

/// Forest hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub lifetime: f64,
    pub n_trees: usize,
    /// Per-dimension split weights; `None` means uniform.
    pub dir_weights: Option<Vec<f64>>,
    pub seed: u64,
}

impl ForestConfig {
    pub fn new(lifetime: f64, n_trees: usize, seed: u64) -> Self {
        ForestConfig {
            lifetime,
            n_trees,
            dir_weights: None,
            seed,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.dir_weights = Some(weights);
        self
    }
}

/// Average of `M` independently grown Mondrian trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MondrianForest {
    trees: Vec<MondrianTree>,
    lifetime: f64,
    dim: usize,
    dir_weights: Vec<f64>,
    seed: u64,
}

pub const FOREST_FORMAT: &str = "mondrian-forest";
pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ForestFile {
    format: String,
    version: u32,
    forest: MondrianForest,
}

impl MondrianForest {
    /// Fits on the bounding box of the training inputs. Tree `m` uses RNG
    /// stream `m` of `config.seed`.
    pub fn fit(data: &Dataset, config: &ForestConfig) -> Result<Self> {
        Self::fit_in_box(data, &AxisBox::bounding(data), config)
    }

    pub fn fit_in_box(data: &Dataset, root_box: &AxisBox, config: &ForestConfig) -> Result<Self> {
        let dim = data.dim();
        if config.n_trees == 0 {
            return Err(Error::InvalidParameter(
                "forest needs at least one tree".into(),
            ));
        }
        let dir_weights = config
            .dir_weights
            .clone()
            .unwrap_or_else(|| uniform_weights(dim));
        let trees = (0..config.n_trees)
            .into_par_iter()
            .map(|m| {
                let mut rng = stream_rng(config.seed, m as u64);
                grow_tree(data, root_box, config.lifetime, &dir_weights, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MondrianForest {
            trees,
            lifetime: config.lifetime,
            dim,
            dir_weights,
            seed: config.seed,
        })
    }

    pub fn trees(&self) -> &[MondrianTree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn lifetime(&self) -> f64 {
        self.lifetime
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dir_weights(&self) -> &[f64] {
        &self.dir_weights
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_unchecked(x)).sum();
        sum / self.trees.len() as f64
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.predict_unchecked(x))
    }

    pub fn tree_predictions(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok(self.trees.iter().map(|t| t.predict_unchecked(x)).collect())
    }

    pub(crate) fn all_populated_unchecked(&self, x: &[f64]) -> bool {
        self.trees.iter().all(|t| t.leaf_stats(x).0 > 0)
    }

    /// True iff `x` lands in a populated leaf of every tree.
    pub fn all_populated(&self, x: &[f64]) -> Result<bool> {
        check_dim(self.dim, x.len())?;
        Ok(self.all_populated_unchecked(x))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ForestFile {
            format: FOREST_FORMAT.into(),
            version: FOREST_FORMAT_VERSION,
            forest: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ForestFile = serde_json::from_str(s)?;
        if file.format != FOREST_FORMAT || file.version != FOREST_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "expected {FOREST_FORMAT} v{FOREST_FORMAT_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        file.forest.validate()?;
        Ok(file.forest)
    }

    fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::Format("forest has no trees".into()));
        }
        validate_weights(&self.dir_weights, self.dim)?;
        for tree in &self.trees {
            MondrianTree::from_nodes(tree.nodes.clone())?;
            check_dim(self.dim, tree.dim())?;
        }
        Ok(())
    }
}

impl Regressor for MondrianForest {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn predict_point(&self, x: &[f64]) -> f64 {
        self.predict_unchecked(x)
    }

    fn is_populated(&self, x: &[f64]) -> bool {
        self.all_populated_unchecked(x)
    }
}

impl Regressor for MondrianTree {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn predict_point(&self, x: &[f64]) -> f64 {
        self.predict_unchecked(x)
    }

    fn is_populated(&self, x: &[f64]) -> bool {
        self.leaf_stats(x).0 > 0
    }
}
