//! Gradient-boosted trees with a softmax objective and second-order
//! (Newton) leaf weights.
//!
//! Each round fits one regression tree per class on the gradient statistics
//! `g = p - y`, `h = p (1 - p)`. A leaf with gradient sum `G` and hessian sum
//! `H` has weight `-G / (H + lambda)` and contributes `-G^2 / (2 (H + lambda))
//! + gamma` to the regularized objective; a split is kept only when it lowers
//! that objective (see [`split_gain`]).
//!
//! Split search is exact: every feature is presorted once and each tree level
//! is evaluated with one sweep per feature over the presorted rows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{argmax, midpoint, GAIN_EPS};
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};

/// Floor applied to per-row hessians so `lambda = 0` never divides by zero.
const MIN_HESSIAN: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Penalty per leaf.
    pub gamma: f64,
    pub learning_rate: f64,
    /// Minimum hessian sum on each side of a split.
    pub min_child_weight: f64,
    /// Class count; defaults to the dataset's label count.
    pub class_count: Option<usize>,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            n_rounds: 200,
            max_depth: 8,
            lambda: 1.0,
            gamma: 0.0,
            learning_rate: 0.3,
            min_child_weight: 1.0,
            class_count: None,
            seed: 0,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(invalid("max_depth must be at least 1"));
        }
        if !(self.lambda >= 0.0) || !(self.gamma >= 0.0) || !(self.min_child_weight >= 0.0) {
            return Err(invalid("lambda, gamma and min_child_weight must be non-negative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(invalid("learning_rate must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Sums of first and second order gradients over a set of rows.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradStats {
    pub grad: f64,
    pub hess: f64,
}

/// Unscaled optimal leaf weight `-G / (H + lambda)`.
pub fn leaf_weight(stats: GradStats, lambda: f64) -> f64 {
    let w = -stats.grad / (stats.hess + lambda);
    if w.is_finite() {
        w
    } else {
        0.0
    }
}

/// Reduction of the regularized objective obtained by splitting a leaf:
/// `1/2 [G_L^2/(H_L+l) + G_R^2/(H_R+l) - (G_L+G_R)^2/(H_L+H_R+l)] - gamma`.
pub fn split_gain(left: GradStats, right: GradStats, lambda: f64, gamma: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(left.grad, left.hess) + score(right.grad, right.hess)
        - score(left.grad + right.grad, left.hess + right.hess))
        - gamma
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
        sum_grad: f64,
        sum_hess: f64,
        samples: usize,
    },
    Leaf {
        /// Leaf weight, already scaled by the learning rate.
        weight: f64,
        sum_grad: f64,
        sum_hess: f64,
        samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<RegNode>,
}

impl RegressionTree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                RegNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => idx = if row[*feature] <= *threshold { *left } else { *right },
                RegNode::Leaf { weight, .. } => return *weight,
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, RegNode::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    /// `stages[round][class]`.
    pub stages: Vec<Vec<RegressionTree>>,
    pub base_score: Vec<f64>,
    pub params: BoostParams,
    pub n_features: usize,
    pub n_classes: usize,
}

/// Row indices sorted by each feature's value.
struct Presorted {
    by_feature: Vec<Vec<u32>>,
}

impl Presorted {
    fn new(data: &Dataset) -> Self {
        let n = data.n_rows();
        let by_feature = (0..data.n_features())
            .into_par_iter()
            .map(|f| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| {
                    data.value(a as usize, f)
                        .total_cmp(&data.value(b as usize, f))
                        .then(a.cmp(&b))
                });
                idx
            })
            .collect();
        Self { by_feature }
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
    left: GradStats,
}

#[derive(Clone, Copy)]
struct Sweep {
    left: GradStats,
    n_left: usize,
    last: f64,
}

const NOT_ACTIVE: u32 = u32::MAX;

/// Grow one regression tree on `(grad, hess)`. Returns the tree and the leaf
/// node index reached by every row.
fn grow_tree(
    data: &Dataset,
    sorted: &Presorted,
    grad: &[f64],
    hess: &[f64],
    params: &BoostParams,
) -> (RegressionTree, Vec<u32>) {
    let n = data.n_rows();
    let total = GradStats {
        grad: grad.iter().sum(),
        hess: hess.iter().sum(),
    };
    let mut nodes = vec![RegNode::Leaf {
        weight: 0.0,
        sum_grad: total.grad,
        sum_hess: total.hess,
        samples: n,
    }];
    // node of every row; rows in finished leaves keep their leaf id
    let mut node_of = vec![0u32; n];
    // (node id, stats, samples) of the current level
    let mut frontier: Vec<(usize, GradStats, usize)> = vec![(0, total, n)];
    for _depth in 0..params.max_depth {
        if frontier.is_empty() {
            break;
        }
        // position of each node in `frontier`, NOT_ACTIVE otherwise
        let mut slot = vec![NOT_ACTIVE; nodes.len()];
        for (i, &(id, _, _)) in frontier.iter().enumerate() {
            slot[id] = i as u32;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];
        for (f, order) in sorted.by_feature.iter().enumerate() {
            let mut sweeps = vec![
                Sweep {
                    left: GradStats::default(),
                    n_left: 0,
                    last: f64::NAN,
                };
                frontier.len()
            ];
            for &row in order {
                let row = row as usize;
                let s = slot[node_of[row] as usize];
                if s == NOT_ACTIVE {
                    continue;
                }
                let s = s as usize;
                let v = data.value(row, f);
                let sw = &mut sweeps[s];
                if sw.n_left > 0 && v != sw.last {
                    let parent = frontier[s].1;
                    let right = GradStats {
                        grad: parent.grad - sw.left.grad,
                        hess: parent.hess - sw.left.hess,
                    };
                    if sw.left.hess >= params.min_child_weight && right.hess >= params.min_child_weight {
                        let gain = split_gain(sw.left, right, params.lambda, params.gamma);
                        let better = match &best[s] {
                            None => gain > 0.0,
                            Some(b) => gain > b.gain + GAIN_EPS,
                        };
                        if better {
                            best[s] = Some(Candidate {
                                feature: f,
                                threshold: midpoint(sw.last, v),
                                gain,
                                left: sw.left,
                            });
                        }
                    }
                }
                sw.left.grad += grad[row];
                sw.left.hess += hess[row];
                sw.n_left += 1;
                sw.last = v;
            }
        }
        let mut next = Vec::new();
        let mut child_of: Vec<Option<(u32, u32, usize, f64)>> = vec![None; frontier.len()];
        for (s, cand) in best.iter().enumerate() {
            let Some(c) = cand else { continue };
            let (id, stats, samples) = frontier[s];
            let left = nodes.len();
            let right = left + 1;
            let right_stats = GradStats {
                grad: stats.grad - c.left.grad,
                hess: stats.hess - c.left.hess,
            };
            nodes[id] = RegNode::Split {
                feature: c.feature,
                threshold: c.threshold,
                left,
                right,
                gain: c.gain,
                sum_grad: stats.grad,
                sum_hess: stats.hess,
                samples,
            };
            nodes.push(RegNode::Leaf {
                weight: 0.0,
                sum_grad: c.left.grad,
                sum_hess: c.left.hess,
                samples: 0,
            });
            nodes.push(RegNode::Leaf {
                weight: 0.0,
                sum_grad: right_stats.grad,
                sum_hess: right_stats.hess,
                samples: 0,
            });
            child_of[s] = Some((left as u32, right as u32, c.feature, c.threshold));
            next.push((left, c.left, 0));
            next.push((right, right_stats, 0));
        }
        if next.is_empty() {
            break;
        }
        let mut counts = vec![0usize; nodes.len()];
        for row in 0..n {
            let s = match slot.get(node_of[row] as usize) {
                Some(&s) if s != NOT_ACTIVE => s as usize,
                _ => continue,
            };
            if let Some((l, r, f, t)) = child_of[s] {
                let child = if data.value(row, f) <= t { l } else { r };
                node_of[row] = child;
                counts[child as usize] += 1;
            }
        }
        for entry in &mut next {
            entry.2 = counts[entry.0];
        }
        frontier = next;
    }
    let mut leaf_rows = vec![0usize; nodes.len()];
    for &id in &node_of {
        leaf_rows[id as usize] += 1;
    }
    for (id, node) in nodes.iter_mut().enumerate() {
        if let RegNode::Leaf {
            weight,
            sum_grad,
            sum_hess,
            samples,
        } = node
        {
            let stats = GradStats {
                grad: *sum_grad,
                hess: *sum_hess,
            };
            *weight = params.learning_rate * leaf_weight(stats, params.lambda);
            *samples = leaf_rows[id];
        }
    }
    (RegressionTree { nodes }, node_of)
}

fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    scores.iter_mut().for_each(|s| *s /= sum);
}

/// Mean multiclass log-loss of raw scores (`n x k`, row-major).
fn log_loss_of_scores(scores: &[f64], labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for (row, &y) in scores.chunks_exact(k).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

/// Fit a boosted model. See [`fit_boosted_traced`] for the loss history.
pub fn fit_boosted(data: &Dataset, params: &BoostParams) -> Result<BoostedModel> {
    fit_boosted_traced(data, params).map(|(m, _)| m)
}

/// Fit a boosted model and report the training log-loss before the first
/// round and after each round.
pub fn fit_boosted_traced(data: &Dataset, params: &BoostParams) -> Result<(BoostedModel, Vec<f64>)> {
    params.validate()?;
    data.ensure_trainable()?;
    let k = params.class_count.unwrap_or(data.n_classes());
    if k < 2 {
        return Err(invalid("boosting needs at least two classes"));
    }
    if let Some(&bad) = data.labels().iter().find(|&&l| l >= k) {
        return Err(invalid(format!("label {bad} exceeds class count {k}")));
    }
    let n = data.n_rows();
    let labels = data.labels();
    let sorted = Presorted::new(data);
    let base_score = vec![0.0; k];
    let mut scores: Vec<f64> = base_score.iter().copied().cycle().take(n * k).collect();
    let mut history = vec![log_loss_of_scores(&scores, labels, k)];
    let mut stages = Vec::with_capacity(params.n_rounds);
    let mut probs = vec![0.0; n * k];
    for _round in 0..params.n_rounds {
        probs.copy_from_slice(&scores);
        probs.chunks_exact_mut(k).for_each(softmax_in_place);
        let trees: Vec<(RegressionTree, Vec<u32>)> = (0..k)
            .into_par_iter()
            .map(|class| {
                let mut grad = Vec::with_capacity(n);
                let mut hess = Vec::with_capacity(n);
                for (i, &y) in labels.iter().enumerate() {
                    let p = probs[i * k + class];
                    let target = if y == class { 1.0 } else { 0.0 };
                    grad.push(p - target);
                    hess.push((p * (1.0 - p)).max(MIN_HESSIAN));
                }
                grow_tree(data, &sorted, &grad, &hess, params)
            })
            .collect();
        for (class, (tree, leaf_of)) in trees.iter().enumerate() {
            for (i, &leaf) in leaf_of.iter().enumerate() {
                if let RegNode::Leaf { weight, .. } = tree.nodes[leaf as usize] {
                    scores[i * k + class] += weight;
                }
            }
        }
        history.push(log_loss_of_scores(&scores, labels, k));
        stages.push(trees.into_iter().map(|(t, _)| t).collect());
    }
    Ok((
        BoostedModel {
            stages,
            base_score,
            params: params.clone(),
            n_features: data.n_features(),
            n_classes: k,
        },
        history,
    ))
}

impl BoostedModel {
    /// Raw per-class scores: base score plus the sum of leaf weights.
    pub fn scores(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.n_features {
            return Err(Error::SchemaMismatch(format!(
                "row has {} features, model expects {}",
                row.len(),
                self.n_features
            )));
        }
        let mut scores = self.base_score.clone();
        for stage in &self.stages {
            for (s, tree) in scores.iter_mut().zip(stage) {
                *s += tree.predict(row);
            }
        }
        Ok(scores)
    }

    /// Argmax class (lowest id on ties) and softmax probabilities.
    pub fn predict(&self, row: &[f64]) -> Result<(usize, Vec<f64>)> {
        let mut p = self.scores(row)?;
        let class = argmax(&p);
        softmax_in_place(&mut p);
        Ok((class, p))
    }

    /// Total split gain per feature over every tree, normalized.
    pub fn feature_importance(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        for tree in self.stages.iter().flatten() {
            for node in &tree.nodes {
                if let RegNode::Split { feature, gain, .. } = node {
                    imp[*feature] += gain;
                }
            }
        }
        crate::cart::normalize_importance(imp)
    }

    /// Mean multiclass log-loss on `data`.
    pub fn log_loss(&self, data: &Dataset) -> Result<f64> {
        let mut scores = Vec::with_capacity(data.n_rows() * self.n_classes);
        for row in data.rows() {
            scores.extend(self.scores(row)?);
        }
        Ok(log_loss_of_scores(&scores, data.labels(), self.n_classes))
    }
}

pub fn predict_boosted(model: &BoostedModel, row: &[f64]) -> Result<(usize, Vec<f64>)> {
    model.predict(row)
}
