//! CART classification trees.
//!
//! Nodes live in an arena (`nodes[0]` is the root). A split sends rows with
//! `x[feature] <= threshold` to the left child. Exact-mode thresholds sit at
//! midpoints between consecutive distinct values; random-threshold mode (used
//! by extra trees) draws one uniform threshold per candidate feature.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::seed::{self, Rng};

/// Decreases closer than this are treated as ties.
pub const GAIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    #[default]
    Gini,
    Entropy,
}

impl Criterion {
    pub(crate) fn impurity(self, counts: &[f64], total: f64) -> f64 {
        match self {
            Criterion::Gini => gini_from(counts, total),
            Criterion::Entropy => entropy_from(counts, total),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    Exact,
    RandomThreshold,
}

/// Candidate features examined at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    #[default]
    All,
    /// `floor(sqrt(P))`, at least one.
    Sqrt,
    Count(usize),
}

impl FeatureSubset {
    pub fn size(self, n_features: usize) -> usize {
        let m = match self {
            FeatureSubset::All => n_features,
            FeatureSubset::Sqrt => (n_features as f64).sqrt().floor() as usize,
            FeatureSubset::Count(m) => m,
        };
        m.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub criterion: Criterion,
    pub feature_subset: FeatureSubset,
    pub split_mode: SplitMode,
    pub seed: u64,
}

impl Default for TreeParams {
    /// Depth 8, minimum split 8, minimum leaf 3, Gini.
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_samples_split: 8,
            min_samples_leaf: 3,
            criterion: Criterion::Gini,
            feature_subset: FeatureSubset::All,
            split_mode: SplitMode::Exact,
            seed: 0,
        }
    }
}

impl TreeParams {
    /// Fully grown tree: no depth limit, split while at least two rows remain.
    pub fn unbounded() -> Self {
        Self {
            max_depth: usize::MAX,
            min_samples_split: 2,
            min_samples_leaf: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(invalid("max_depth must be at least 1"));
        }
        if self.min_samples_split < 2 {
            return Err(invalid("min_samples_split must be at least 2"));
        }
        if self.min_samples_leaf < 1 {
            return Err(invalid("min_samples_leaf must be at least 1"));
        }
        if let FeatureSubset::Count(0) = self.feature_subset {
            return Err(invalid("feature subset size must be at least 1"));
        }
        Ok(())
    }
}

fn check_counts(counts: &[usize]) -> Result<(Vec<f64>, f64)> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(invalid("impurity of an empty node"));
    }
    Ok((counts.iter().map(|&c| c as f64).collect(), total as f64))
}

/// `1 - sum(p_i^2)`.
pub fn gini_impurity(counts: &[usize]) -> Result<f64> {
    let (c, total) = check_counts(counts)?;
    Ok(gini_from(&c, total))
}

/// `-sum(p_i log2 p_i)` with `0 log 0 = 0`.
pub fn entropy_impurity(counts: &[usize]) -> Result<f64> {
    let (c, total) = check_counts(counts)?;
    Ok(entropy_from(&c, total))
}

fn gini_from(counts: &[f64], total: f64) -> f64 {
    let sq: f64 = counts.iter().map(|&c| c * c).sum();
    1.0 - sq / (total * total)
}

fn entropy_from(counts: &[f64], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            -p * p.log2()
        })
        .sum()
}

/// Best split found at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature_index: usize,
    pub threshold: f64,
    pub impurity_decrease: f64,
    pub left_count: usize,
    pub right_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        impurity: f64,
        samples: usize,
        decrease: f64,
    },
    Leaf {
        class_counts: Vec<u64>,
        predicted: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub params: TreeParams,
    pub n_features: usize,
    pub n_classes: usize,
}

/// Lowest index among the maxima.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn better(cand: &SplitCandidate, best: &Option<SplitCandidate>) -> bool {
    match best {
        None => true,
        Some(b) => cand.impurity_decrease > b.impurity_decrease + GAIN_EPS,
    }
}

/// Midpoint of two consecutive distinct values, kept strictly below `hi`.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo / 2.0 + hi / 2.0;
    if mid >= hi || mid < lo {
        lo
    } else {
        mid
    }
}

struct NodeStats {
    counts: Vec<f64>,
    total: f64,
    impurity: f64,
}

fn node_stats(data: &Dataset, indices: &[usize], criterion: Criterion) -> NodeStats {
    let mut counts = vec![0.0; data.n_classes()];
    for &i in indices {
        counts[data.labels()[i]] += 1.0;
    }
    let total = indices.len() as f64;
    let impurity = criterion.impurity(&counts, total);
    NodeStats {
        counts,
        total,
        impurity,
    }
}

/// Best split of `indices` over `features` (tried in ascending order).
///
/// Returns `None` when no threshold leaves `min_samples_leaf` rows on both
/// sides with a positive impurity decrease. Ties go to the lowest feature
/// index, then the lowest threshold.
pub fn best_split(
    data: &Dataset,
    indices: &[usize],
    params: &TreeParams,
    features: &[usize],
    rng: &mut Rng,
) -> Option<SplitCandidate> {
    let stats = node_stats(data, indices, params.criterion);
    best_split_with(data, indices, params, features, &stats, rng)
}

fn best_split_with(
    data: &Dataset,
    indices: &[usize],
    params: &TreeParams,
    features: &[usize],
    stats: &NodeStats,
    rng: &mut Rng,
) -> Option<SplitCandidate> {
    let mut features = features.to_vec();
    features.sort_unstable();
    features.dedup();
    let mut best = None;
    let mut buf: Vec<(f64, usize)> = Vec::with_capacity(indices.len());
    for &f in &features {
        let cand = match params.split_mode {
            SplitMode::Exact => exact_split_on(data, indices, params, f, stats, &mut buf),
            SplitMode::RandomThreshold => random_split_on(data, indices, params, f, stats, rng),
        };
        if let Some(c) = cand {
            if better(&c, &best) {
                best = Some(c);
            }
        }
    }
    best
}

fn exact_split_on(
    data: &Dataset,
    indices: &[usize],
    params: &TreeParams,
    feature: usize,
    stats: &NodeStats,
    buf: &mut Vec<(f64, usize)>,
) -> Option<SplitCandidate> {
    let labels = data.labels();
    buf.clear();
    buf.extend(indices.iter().map(|&i| (data.value(i, feature), labels[i])));
    buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let n = buf.len();
    let min_leaf = params.min_samples_leaf;
    let mut left = vec![0.0; stats.counts.len()];
    let mut right = stats.counts.clone();
    let mut best: Option<SplitCandidate> = None;
    for i in 0..n.saturating_sub(1) {
        let (value, label) = buf[i];
        left[label] += 1.0;
        right[label] -= 1.0;
        let next = buf[i + 1].0;
        if value == next {
            continue;
        }
        let n_left = i + 1;
        let n_right = n - n_left;
        if n_left < min_leaf {
            continue;
        }
        if n_right < min_leaf {
            break;
        }
        let (nl, nr) = (n_left as f64, n_right as f64);
        let child = nl / stats.total * params.criterion.impurity(&left, nl)
            + nr / stats.total * params.criterion.impurity(&right, nr);
        let decrease = stats.impurity - child;
        if decrease <= GAIN_EPS {
            continue;
        }
        let cand = SplitCandidate {
            feature_index: feature,
            threshold: midpoint(value, next),
            impurity_decrease: decrease,
            left_count: n_left,
            right_count: n_right,
        };
        if better(&cand, &best) {
            best = Some(cand);
        }
    }
    best
}

fn random_split_on(
    data: &Dataset,
    indices: &[usize],
    params: &TreeParams,
    feature: usize,
    stats: &NodeStats,
    rng: &mut Rng,
) -> Option<SplitCandidate> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &i in indices {
        let v = data.value(i, feature);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(lo < hi) {
        return None;
    }
    let threshold = rng.gen_range(lo..hi);
    let labels = data.labels();
    let mut left = vec![0.0; stats.counts.len()];
    let mut n_left = 0usize;
    for &i in indices {
        if data.value(i, feature) <= threshold {
            left[labels[i]] += 1.0;
            n_left += 1;
        }
    }
    let n_right = indices.len() - n_left;
    if n_left < params.min_samples_leaf || n_right < params.min_samples_leaf {
        return None;
    }
    let right: Vec<f64> = stats.counts.iter().zip(&left).map(|(t, l)| t - l).collect();
    let (nl, nr) = (n_left as f64, n_right as f64);
    let child = nl / stats.total * params.criterion.impurity(&left, nl)
        + nr / stats.total * params.criterion.impurity(&right, nr);
    let decrease = stats.impurity - child;
    (decrease > GAIN_EPS).then_some(SplitCandidate {
        feature_index: feature,
        threshold,
        impurity_decrease: decrease,
        left_count: n_left,
        right_count: n_right,
    })
}

/// Draw `m` distinct features out of `p`, returned in ascending order
/// together with the features left out.
fn draw_features(p: usize, m: usize, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let mut pool: Vec<usize> = (0..p).collect();
    if m < p {
        for i in 0..m {
            let j = rng.gen_range(i..p);
            pool.swap(i, j);
        }
    }
    let mut rest = pool.split_off(m.min(p));
    pool.sort_unstable();
    rest.sort_unstable();
    (pool, rest)
}

fn make_leaf(counts: &[f64]) -> TreeNode {
    TreeNode::Leaf {
        class_counts: counts.iter().map(|&c| c as u64).collect(),
        predicted: argmax(counts),
    }
}

/// Fit a tree on every row of `data`.
pub fn fit_tree(data: &Dataset, params: &TreeParams) -> Result<DecisionTree> {
    let indices: Vec<usize> = (0..data.n_rows()).collect();
    let mut rng = seed::rng(params.seed, "cart.tree", 0);
    fit_tree_on(data, indices, params, &mut rng)
}

/// Fit a tree on the rows at `indices` (duplicates allowed).
pub(crate) fn fit_tree_on(
    data: &Dataset,
    mut indices: Vec<usize>,
    params: &TreeParams,
    rng: &mut Rng,
) -> Result<DecisionTree> {
    params.validate()?;
    data.ensure_trainable()?;
    if indices.is_empty() {
        return Err(Error::NoRows);
    }
    let p = data.n_features();
    let m = params.feature_subset.size(p);
    let mut nodes: Vec<TreeNode> = vec![make_leaf(&[])];
    // (node slot, start, end, depth)
    let mut stack = vec![(0usize, 0usize, indices.len(), 0usize)];
    while let Some((slot, start, end, depth)) = stack.pop() {
        let rows = &mut indices[start..end];
        let stats = node_stats(data, rows, params.criterion);
        let n = rows.len();
        let pure = stats.counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        if pure || depth >= params.max_depth || n < params.min_samples_split {
            nodes[slot] = make_leaf(&stats.counts);
            continue;
        }
        let (subset, rest) = draw_features(p, m, rng);
        let mut split = best_split_with(data, rows, params, &subset, &stats, rng);
        if split.is_none() && !rest.is_empty() {
            split = best_split_with(data, rows, params, &rest, &stats, rng);
        }
        let Some(split) = split else {
            nodes[slot] = make_leaf(&stats.counts);
            continue;
        };
        let mut mid = 0;
        for i in 0..n {
            if data.value(rows[i], split.feature_index) <= split.threshold {
                rows.swap(i, mid);
                mid += 1;
            }
        }
        debug_assert_eq!(mid, split.left_count);
        let left = nodes.len();
        let right = left + 1;
        nodes.push(make_leaf(&[]));
        nodes.push(make_leaf(&[]));
        nodes[slot] = TreeNode::Split {
            feature: split.feature_index,
            threshold: split.threshold,
            left,
            right,
            impurity: stats.impurity,
            samples: n,
            decrease: split.impurity_decrease,
        };
        // right pushed first so the left subtree is grown first
        stack.push((right, start + mid, end, depth + 1));
        stack.push((left, start, start + mid, depth + 1));
    }
    Ok(DecisionTree {
        nodes,
        params: params.clone(),
        n_features: p,
        n_classes: data.n_classes(),
    })
}

impl DecisionTree {
    fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_features {
            return Err(Error::SchemaMismatch(format!(
                "row has {} features, tree expects {}",
                row.len(),
                self.n_features
            )));
        }
        Ok(())
    }

    /// Leaf reached by `row`. The row length is not checked.
    pub(crate) fn leaf(&self, row: &[f64]) -> (&[u64], usize) {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => idx = if row[*feature] <= *threshold { *left } else { *right },
                TreeNode::Leaf {
                    class_counts,
                    predicted,
                } => return (class_counts, *predicted),
            }
        }
    }

    pub fn predict_class(&self, row: &[f64]) -> Result<usize> {
        self.check_row(row)?;
        Ok(self.leaf(row).1)
    }

    /// Predicted class and the normalized class counts of the leaf.
    pub fn predict(&self, row: &[f64]) -> Result<(usize, Vec<f64>)> {
        self.check_row(row)?;
        let (counts, predicted) = self.leaf(row);
        let total: u64 = counts.iter().sum();
        let dist = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok((predicted, dist))
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], idx: usize) -> usize {
            match &nodes[idx] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn root_samples(&self) -> usize {
        match &self.nodes[0] {
            TreeNode::Split { samples, .. } => *samples,
            TreeNode::Leaf { class_counts, .. } => class_counts.iter().sum::<u64>() as usize,
        }
    }

    /// Weighted impurity decrease per feature, normalized to sum to one. A
    /// tree without splits yields all zeros.
    pub fn feature_importance(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        let total = self.root_samples() as f64;
        for node in &self.nodes {
            if let TreeNode::Split {
                feature,
                samples,
                decrease,
                ..
            } = node
            {
                imp[*feature] += *samples as f64 / total * decrease;
            }
        }
        normalize_importance(imp)
    }
}

pub(crate) fn normalize_importance(mut imp: Vec<f64>) -> Vec<f64> {
    let sum: f64 = imp.iter().sum();
    if sum > 0.0 {
        imp.iter_mut().for_each(|v| *v /= sum);
    }
    imp
}

/// Convenience wrapper matching [`DecisionTree::predict`].
pub fn predict_tree(tree: &DecisionTree, row: &[f64]) -> Result<(usize, Vec<f64>)> {
    tree.predict(row)
}

/// Per-tree feature importance.
pub fn tree_feature_importance(tree: &DecisionTree) -> Vec<f64> {
    tree.feature_importance()
}

/// Cost-complexity score: misclassification rate on `eval` plus
/// `alpha * leaf count`.
pub fn cost_complexity(tree: &DecisionTree, alpha: f64, eval: &Dataset) -> Result<f64> {
    if alpha < 0.0 {
        return Err(invalid("alpha must be non-negative"));
    }
    if eval.is_empty() {
        return Err(Error::NoRows);
    }
    let mut wrong = 0usize;
    for (row, &label) in eval.rows().zip(eval.labels()) {
        if tree.predict_class(row)? != label {
            wrong += 1;
        }
    }
    let risk = wrong as f64 / eval.n_rows() as f64;
    Ok(risk + alpha * tree.n_leaves() as f64)
}
