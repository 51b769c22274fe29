//! Random forests and extra trees with majority voting.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{self, argmax, DecisionTree, FeatureSubset, SplitMode, TreeParams};
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestKind {
    RandomForest,
    ExtraTrees,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    pub bootstrap: bool,
    pub seed: u64,
}

impl ForestParams {
    /// Bootstrapped exact-split trees over `floor(sqrt(P))` features per split.
    pub fn random_forest(n_trees: usize) -> Self {
        Self {
            n_trees,
            tree: TreeParams {
                feature_subset: FeatureSubset::Sqrt,
                ..TreeParams::default()
            },
            bootstrap: true,
            seed: 0,
        }
    }

    /// Full-sample trees with one random threshold per candidate feature.
    pub fn extra_trees(n_trees: usize) -> Self {
        Self {
            n_trees,
            tree: TreeParams {
                feature_subset: FeatureSubset::Sqrt,
                split_mode: SplitMode::RandomThreshold,
                ..TreeParams::default()
            },
            bootstrap: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub kind: ForestKind,
    pub trees: Vec<DecisionTree>,
    pub bootstrap: bool,
    pub seed: u64,
    pub n_features: usize,
    pub n_classes: usize,
}

/// Seed of tree `index` in a forest with master seed `seed`.
pub fn tree_seed(seed: u64, index: usize) -> u64 {
    seed::derive(seed, "forest.tree", index as u64)
}

/// The `n`-row bootstrap sample drawn for the tree with seed `tree_seed`.
pub fn bootstrap_indices(n: usize, tree_seed: u64) -> Vec<usize> {
    let mut rng = seed::rng(tree_seed, "forest.bootstrap", 0);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Fit `params.n_trees` trees in parallel on the current rayon pool. Tree `i`
/// depends only on `(data, params, i)`, so the result is independent of the
/// number of workers.
pub fn fit_forest(data: &Dataset, kind: ForestKind, params: &ForestParams) -> Result<ForestModel> {
    if params.n_trees < 1 {
        return Err(invalid("a forest needs at least one tree"));
    }
    params.tree.validate()?;
    data.ensure_trainable()?;
    let n = data.n_rows();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let s = tree_seed(params.seed, i);
            let tree_params = TreeParams {
                seed: s,
                ..params.tree.clone()
            };
            let indices = if params.bootstrap {
                bootstrap_indices(n, s)
            } else {
                (0..n).collect()
            };
            let mut rng = seed::rng(s, "cart.tree", 0);
            cart::fit_tree_on(data, indices, &tree_params, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        kind,
        trees,
        bootstrap: params.bootstrap,
        seed: params.seed,
        n_features: data.n_features(),
        n_classes: data.n_classes(),
    })
}

/// Random forest: bootstrap on, exact splits.
pub fn fit_random_forest(data: &Dataset, n_trees: usize, tree: &TreeParams, seed: u64) -> Result<ForestModel> {
    let params = ForestParams {
        n_trees,
        tree: TreeParams {
            split_mode: SplitMode::Exact,
            ..tree.clone()
        },
        bootstrap: true,
        seed,
    };
    fit_forest(data, ForestKind::RandomForest, &params)
}

/// Extra trees: bootstrap off, random thresholds.
pub fn fit_extra_trees(data: &Dataset, n_trees: usize, tree: &TreeParams, seed: u64) -> Result<ForestModel> {
    let params = ForestParams {
        n_trees,
        tree: TreeParams {
            split_mode: SplitMode::RandomThreshold,
            ..tree.clone()
        },
        bootstrap: false,
        seed,
    };
    fit_forest(data, ForestKind::ExtraTrees, &params)
}

impl ForestModel {
    /// One vote per tree; the winner has the most votes, ties going to the
    /// lowest class id. Returns the winner and the vote shares.
    pub fn majority_vote(&self, row: &[f64]) -> Result<(usize, Vec<f64>)> {
        if row.len() != self.n_features {
            return Err(Error::SchemaMismatch(format!(
                "row has {} features, forest expects {}",
                row.len(),
                self.n_features
            )));
        }
        let mut votes = vec![0.0; self.n_classes];
        for tree in &self.trees {
            votes[tree.leaf(row).1] += 1.0;
        }
        let winner = argmax(&votes);
        let t = self.trees.len() as f64;
        votes.iter_mut().for_each(|v| *v /= t);
        Ok((winner, votes))
    }

    /// Mean of the per-tree importances, renormalized.
    pub fn feature_importance(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.n_features];
        for tree in &self.trees {
            for (s, v) in sum.iter_mut().zip(tree.feature_importance()) {
                *s += v;
            }
        }
        cart::normalize_importance(sum)
    }
}

pub fn majority_vote(forest: &ForestModel, row: &[f64]) -> Result<(usize, Vec<f64>)> {
    forest.majority_vote(row)
}
