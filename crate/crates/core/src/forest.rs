//! Random-forest regression on fusion features.
//!
//! Trees are CART regressors grown greedily on weighted variance reduction.
//! Each feature keeps a presorted list of sample positions; a split stably
//! partitions every list, so one tree level costs `O(features × samples)`.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeaturesMode {
    /// Fresh feature subset at every split.
    PerSplit,
    /// One subset per tree.
    PerTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub max_features_fraction: f64,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
    pub max_features_mode: MaxFeaturesMode,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 120,
            max_depth: 30,
            max_features_fraction: 0.8,
            min_samples_leaf: 1,
            bootstrap: true,
            seed: 1024,
            max_features_mode: MaxFeaturesMode::PerSplit,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(invalid("n_trees must be at least 1"));
        }
        if !(self.max_features_fraction > 0.0 && self.max_features_fraction <= 1.0) {
            return Err(invalid("max_features_fraction must lie in (0, 1]"));
        }
        if self.min_samples_leaf == 0 {
            return Err(invalid("min_samples_leaf must be at least 1"));
        }
        Ok(())
    }

    fn features_per_split(&self, n_features: usize) -> usize {
        ((self.max_features_fraction * n_features as f64).ceil() as usize).clamp(1, n_features)
    }
}

/// Dense row-major sample matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub n_features: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_features: usize) -> Self {
        Self { n_features, data: Vec::new() }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_features = rows.first().map_or(0, Vec::len);
        let mut m = Self::new(n_features);
        for r in rows {
            m.push(r)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_features {
            return Err(invalid(format!("row has {} features, expected {}", row.len(), self.n_features)));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        if self.n_features == 0 {
            0
        } else {
            self.data.len() / self.n_features
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    fn get(&self, row: usize, f: usize) -> f64 {
        self.data[row * self.n_features + f]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

/// Nodes in preorder; the root is node 0. Samples with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &RegressionTree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }
}

struct Builder<'a> {
    x: &'a FeatureMatrix,
    y: &'a [f64],
    /// Sample row for each position (bootstrap draws may repeat rows).
    rows: Vec<usize>,
    /// Per feature: positions sorted by that feature's value.
    order: Vec<Vec<u32>>,
    go_left: Vec<bool>,
    scratch: Vec<u32>,
    config: &'a ForestConfig,
    tree_features: Option<Vec<usize>>,
    nodes: Vec<TreeNode>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl<'a> Builder<'a> {
    /// `rows` must be sorted so each row's repeats occupy consecutive positions.
    fn new(x: &'a FeatureMatrix, y: &'a [f64], rows: Vec<usize>, config: &'a ForestConfig, pre: &Presorted) -> Self {
        let n = rows.len();
        let mut start = vec![0u32; x.n_rows() + 1];
        for &r in &rows {
            start[r + 1] += 1;
        }
        for i in 0..x.n_rows() {
            start[i + 1] += start[i];
        }
        let order = pre
            .order
            .iter()
            .map(|global| {
                let mut o = Vec::with_capacity(n);
                for &r in global {
                    o.extend(start[r as usize]..start[r as usize + 1]);
                }
                o
            })
            .collect();
        Self {
            x,
            y,
            rows,
            order,
            go_left: vec![false; n],
            scratch: Vec::with_capacity(n),
            config,
            tree_features: None,
            nodes: Vec::new(),
        }
    }

    fn value(&self, pos: u32, f: usize) -> f64 {
        self.x.get(self.rows[pos as usize], f)
    }

    fn target(&self, pos: u32) -> f64 {
        self.y[self.rows[pos as usize]]
    }

    fn candidate_features<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        if let Some(f) = &self.tree_features {
            return f.clone();
        }
        let d = self.x.n_features;
        let k = self.config.features_per_split(d);
        if k == d {
            return (0..d).collect();
        }
        let mut fs = sample_indices(rng, d, k).into_vec();
        fs.sort_unstable();
        fs
    }

    fn best_split(&self, lo: usize, hi: usize, features: &[usize]) -> Option<BestSplit> {
        let n = (hi - lo) as f64;
        let min_leaf = self.config.min_samples_leaf;
        let total: f64 = self.order[0][lo..hi].iter().map(|&p| self.target(p)).sum();
        let parent = total * total / n;
        let mut best: Option<BestSplit> = None;
        for &f in features {
            let ord = &self.order[f][lo..hi];
            let mut left_sum = 0.0;
            for i in 0..ord.len() - 1 {
                left_sum += self.target(ord[i]);
                let n_left = i + 1;
                let n_right = ord.len() - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let a = self.value(ord[i], f);
                let b = self.value(ord[i + 1], f);
                if a == b {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64 - parent;
                if best.as_ref().is_none_or(|bs| gain > bs.gain) {
                    let mut threshold = 0.5 * (a + b);
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(BestSplit { gain, feature: f, threshold });
                }
            }
        }
        best
    }

    fn leaf(&mut self, lo: usize, hi: usize) -> usize {
        let sum: f64 = self.order[0][lo..hi].iter().map(|&p| self.target(p)).sum();
        self.nodes.push(TreeNode::Leaf { value: sum / (hi - lo) as f64 });
        self.nodes.len() - 1
    }

    fn build<R: Rng>(&mut self, lo: usize, hi: usize, depth: usize, rng: &mut R) -> usize {
        let n = hi - lo;
        let first = self.target(self.order[0][lo]);
        let pure = self.order[0][lo..hi].iter().all(|&p| self.target(p) == first);
        if pure || depth >= self.config.max_depth || n < 2 * self.config.min_samples_leaf {
            return self.leaf(lo, hi);
        }
        let features = self.candidate_features(rng);
        let Some(split) = self.best_split(lo, hi, &features) else {
            return self.leaf(lo, hi);
        };

        let f = split.feature;
        let mut n_left = 0;
        for k in lo..hi {
            let p = self.order[f][k];
            let left = self.value(p, f) <= split.threshold;
            self.go_left[p as usize] = left;
            n_left += left as usize;
        }
        for feat in 0..self.order.len() {
            self.scratch.clear();
            let ord = &mut self.order[feat];
            let mut w = lo;
            for k in lo..hi {
                let p = ord[k];
                if self.go_left[p as usize] {
                    ord[w] = p;
                    w += 1;
                } else {
                    self.scratch.push(p);
                }
            }
            ord[w..hi].copy_from_slice(&self.scratch);
        }

        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: f64::NAN });
        let left = self.build(lo, lo + n_left, depth + 1, rng);
        let right = self.build(lo + n_left, hi, depth + 1, rng);
        self.nodes[id] = TreeNode::Split { feature: f, threshold: split.threshold, left, right };
        id
    }
}

/// Row indices sorted by each feature, shared by every tree of a forest.
#[derive(Debug, Clone)]
pub struct Presorted {
    order: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(x: &FeatureMatrix) -> Self {
        let order = (0..x.n_features)
            .map(|f| {
                let mut o: Vec<u32> = (0..x.n_rows() as u32).collect();
                o.sort_by(|&a, &b| x.get(a as usize, f).total_cmp(&x.get(b as usize, f)).then(a.cmp(&b)));
                o
            })
            .collect();
        Self { order }
    }
}

fn check_inputs(x: &FeatureMatrix, y: &[f64]) -> Result<()> {
    if x.n_rows() == 0 {
        return Err(invalid("cannot fit a tree on zero samples"));
    }
    if x.n_rows() != y.len() {
        return Err(invalid(format!("{} rows but {} targets", x.n_rows(), y.len())));
    }
    if !y.iter().all(|v| v.is_finite()) || !x.data.iter().all(|v| v.is_finite()) {
        return Err(invalid("features and targets must be finite"));
    }
    Ok(())
}

/// Grows one tree on the given sample rows (repeats allowed).
pub fn fit_tree_on<R: Rng>(
    x: &FeatureMatrix,
    y: &[f64],
    rows: Vec<usize>,
    config: &ForestConfig,
    rng: &mut R,
) -> Result<RegressionTree> {
    check_inputs(x, y)?;
    config.validate()?;
    grow(x, y, rows, config, &Presorted::new(x), rng)
}

fn grow<R: Rng>(
    x: &FeatureMatrix,
    y: &[f64],
    mut rows: Vec<usize>,
    config: &ForestConfig,
    pre: &Presorted,
    rng: &mut R,
) -> Result<RegressionTree> {
    if rows.is_empty() {
        return Err(invalid("cannot fit a tree on zero samples"));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= x.n_rows()) {
        return Err(invalid(format!("sample row {bad} out of range")));
    }
    rows.sort_unstable();
    let mut b = Builder::new(x, y, rows, config, pre);
    if config.max_features_mode == MaxFeaturesMode::PerTree {
        let d = x.n_features;
        let k = config.features_per_split(d);
        let mut fs = sample_indices(rng, d, k).into_vec();
        fs.sort_unstable();
        b.tree_features = Some(fs);
    }
    let n = b.rows.len();
    b.build(0, n, 0, rng);
    Ok(RegressionTree { nodes: b.nodes })
}

/// Grows one tree on every row of `x`.
pub fn fit_tree<R: Rng>(x: &FeatureMatrix, y: &[f64], config: &ForestConfig, rng: &mut R) -> Result<RegressionTree> {
    fit_tree_on(x, y, (0..x.n_rows()).collect(), config, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<RegressionTree>,
    pub n_features: usize,
}

impl ForestModel {
    /// Mean of per-tree leaf values, summed in tree order.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(invalid(format!("feature has length {}, expected {}", x.len(), self.n_features)));
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    pub fn predict_rows(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        (0..x.n_rows()).map(|i| self.predict(x.row(i))).collect()
    }
}

/// Tree `i` draws from its own stream seeded `seed + i`, so the result does not
/// depend on the order trees are grown in.
pub fn fit_forest(x: &FeatureMatrix, y: &[f64], config: &ForestConfig) -> Result<ForestModel> {
    check_inputs(x, y)?;
    config.validate()?;
    let n = x.n_rows();
    let pre = Presorted::new(x);
    let trees = (0..config.n_trees)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(i as u64));
            let rows = if config.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow(x, y, rows, config, &pre, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel { trees, n_features: x.n_features })
}

/// One grid point and its validation RMSE.
#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub config: ForestConfig,
    pub val_rmse: f64,
}

/// The sweep over `{n_trees} × {max_depth} × {max_features}` used for tuning.
pub fn default_grid(base: &ForestConfig) -> Vec<ForestConfig> {
    let mut out = Vec::new();
    for n_trees in [60, 120] {
        for max_depth in [10, 30] {
            for max_features_fraction in [0.5, 0.8, 1.0] {
                out.push(ForestConfig { n_trees, max_depth, max_features_fraction, ..base.clone() });
            }
        }
    }
    out
}

/// Fits every config on the training rows, scores RMSE on validation, and
/// returns results sorted best-first (stable on ties).
pub fn grid_search(
    train_x: &FeatureMatrix,
    train_y: &[f64],
    val_x: &FeatureMatrix,
    val_y: &[f64],
    grid: &[ForestConfig],
) -> Result<Vec<GridResult>> {
    let mut out = Vec::with_capacity(grid.len());
    for cfg in grid {
        let model = fit_forest(train_x, train_y, cfg)?;
        let preds = model.predict_rows(val_x)?;
        let mse = preds.iter().zip(val_y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / val_y.len().max(1) as f64;
        out.push(GridResult { config: cfg.clone(), val_rmse: mse.sqrt() });
    }
    out.sort_by(|a, b| a.val_rmse.total_cmp(&b.val_rmse));
    Ok(out)
}
