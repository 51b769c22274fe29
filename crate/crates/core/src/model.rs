//! A single entry point over every learner: specs describe what to fit,
//! [`Model`] is the fitted result with a uniform prediction interface.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::boost::{fit_boosted, BoostParams, BoostedModel};
use crate::cart::{fit_tree, DecisionTree, TreeParams};
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::forest::{fit_forest, ForestKind, ForestModel, ForestParams};
use crate::stack::{fit_stacking, StackingModel};

/// Learner families. The declaration order is the fixed tie-break order used
/// by base-model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dt,
    Rf,
    Et,
    Boost,
    Stacking,
}

impl ModelKind {
    /// The four single learners.
    pub const SINGULAR: [ModelKind; 4] = [ModelKind::Dt, ModelKind::Rf, ModelKind::Et, ModelKind::Boost];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Dt => "dt",
            ModelKind::Rf => "rf",
            ModelKind::Et => "et",
            ModelKind::Boost => "boost",
            ModelKind::Stacking => "stacking",
        }
    }

    /// Display name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Dt => "DT",
            ModelKind::Rf => "RF",
            ModelKind::Et => "ET",
            ModelKind::Boost => "Boosted",
            ModelKind::Stacking => "Stacking",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dt" => Ok(ModelKind::Dt),
            "rf" => Ok(ModelKind::Rf),
            "et" => Ok(ModelKind::Et),
            "boost" | "xgb" | "boosted" => Ok(ModelKind::Boost),
            "stacking" | "stack" => Ok(ModelKind::Stacking),
            other => Err(invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingSpec {
    pub bases: Vec<ModelSpec>,
    pub meta: Box<ModelSpec>,
    /// Folds used to generate out-of-fold meta features.
    pub folds: usize,
    pub seed: u64,
}

/// Everything needed to fit one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Dt(TreeParams),
    Rf(ForestParams),
    Et(ForestParams),
    Boost(BoostParams),
    Stacking(StackingSpec),
}

impl ModelSpec {
    /// Default hyperparameters for `kind`: 200 trees / rounds of depth 8.
    /// Stacking defaults to DT + RF + ET bases with an RF meta model.
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Dt => ModelSpec::Dt(TreeParams::default()),
            ModelKind::Rf => ModelSpec::Rf(ForestParams::random_forest(200)),
            ModelKind::Et => ModelSpec::Et(ForestParams::extra_trees(200)),
            ModelKind::Boost => ModelSpec::Boost(BoostParams::default()),
            ModelKind::Stacking => ModelSpec::Stacking(StackingSpec {
                bases: vec![
                    ModelSpec::default_for(ModelKind::Dt),
                    ModelSpec::default_for(ModelKind::Rf),
                    ModelSpec::default_for(ModelKind::Et),
                ],
                meta: Box::new(ModelSpec::default_for(ModelKind::Rf)),
                folds: 5,
                seed: 0,
            }),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Dt(_) => ModelKind::Dt,
            ModelSpec::Rf(_) => ModelKind::Rf,
            ModelSpec::Et(_) => ModelKind::Et,
            ModelSpec::Boost(_) => ModelKind::Boost,
            ModelSpec::Stacking(_) => ModelKind::Stacking,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ModelSpec::Dt(p) => p.seed,
            ModelSpec::Rf(p) | ModelSpec::Et(p) => p.seed,
            ModelSpec::Boost(p) => p.seed,
            ModelSpec::Stacking(s) => s.seed,
        }
    }

    /// The same spec with `seed` as its master seed. Stacking components get
    /// seeds derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            ModelSpec::Dt(p) => p.seed = seed,
            ModelSpec::Rf(p) | ModelSpec::Et(p) => p.seed = seed,
            ModelSpec::Boost(p) => p.seed = seed,
            ModelSpec::Stacking(s) => {
                s.seed = seed;
                for (i, b) in s.bases.iter_mut().enumerate() {
                    *b = b.clone().with_seed(crate::seed::derive(seed, "stack.base", i as u64));
                }
                let meta = (*s.meta).clone().with_seed(crate::seed::derive(seed, "stack.meta", 0));
                *s.meta = meta;
            }
        }
        self
    }

    /// Set tree count (forests, boosting rounds) where the spec has one.
    pub fn with_trees(mut self, t: usize) -> Self {
        match &mut self {
            ModelSpec::Rf(p) | ModelSpec::Et(p) => p.n_trees = t,
            ModelSpec::Boost(p) => p.n_rounds = t,
            ModelSpec::Stacking(s) => {
                s.bases = s.bases.drain(..).map(|b| b.with_trees(t)).collect();
                *s.meta = (*s.meta).clone().with_trees(t);
            }
            ModelSpec::Dt(_) => {}
        }
        self
    }

    /// Set maximum depth everywhere in the spec.
    pub fn with_depth(mut self, d: usize) -> Self {
        match &mut self {
            ModelSpec::Dt(p) => p.max_depth = d,
            ModelSpec::Rf(p) | ModelSpec::Et(p) => p.tree.max_depth = d,
            ModelSpec::Boost(p) => p.max_depth = d,
            ModelSpec::Stacking(s) => {
                s.bases = s.bases.drain(..).map(|b| b.with_depth(d)).collect();
                *s.meta = (*s.meta).clone().with_depth(d);
            }
        }
        self
    }

    /// Apply `f` to every CART parameter block in the spec.
    pub fn map_tree_params(mut self, f: &impl Fn(&mut TreeParams)) -> Self {
        match &mut self {
            ModelSpec::Dt(p) => f(p),
            ModelSpec::Rf(p) | ModelSpec::Et(p) => f(&mut p.tree),
            ModelSpec::Boost(_) => {}
            ModelSpec::Stacking(s) => {
                s.bases = s.bases.drain(..).map(|b| b.map_tree_params(f)).collect();
                *s.meta = (*s.meta).clone().map_tree_params(f);
            }
        }
        self
    }

    /// Short human-readable description used in error messages and tables.
    pub fn describe(&self) -> String {
        match self {
            ModelSpec::Dt(p) => format!("dt(D={})", p.max_depth),
            ModelSpec::Rf(p) => format!("rf(T={}, D={})", p.n_trees, p.tree.max_depth),
            ModelSpec::Et(p) => format!("et(T={}, D={})", p.n_trees, p.tree.max_depth),
            ModelSpec::Boost(p) => format!("boost(T={}, D={})", p.n_rounds, p.max_depth),
            ModelSpec::Stacking(s) => format!(
                "stacking([{}] -> {})",
                s.bases.iter().map(|b| b.describe()).collect::<Vec<_>>().join(", "),
                s.meta.describe()
            ),
        }
    }

    /// Fit the described model on `data`.
    pub fn fit(&self, data: &Dataset) -> Result<Model> {
        match self {
            ModelSpec::Dt(p) => fit_tree(data, p).map(Model::Dt),
            ModelSpec::Rf(p) => fit_forest(data, ForestKind::RandomForest, p).map(Model::Rf),
            ModelSpec::Et(p) => fit_forest(data, ForestKind::ExtraTrees, p).map(Model::Et),
            ModelSpec::Boost(p) => {
                let params = BoostParams {
                    class_count: p.class_count.or(Some(data.n_classes().max(2))),
                    ..p.clone()
                };
                fit_boosted(data, &params).map(Model::Boost)
            }
            ModelSpec::Stacking(s) => {
                fit_stacking(data, &s.bases, &s.meta, s.folds, s.seed).map(|m| Model::Stacking(Box::new(m)))
            }
        }
    }
}

/// A fitted model of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum Model {
    Dt(DecisionTree),
    Rf(ForestModel),
    Et(ForestModel),
    Boost(BoostedModel),
    Stacking(Box<StackingModel>),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Dt(_) => ModelKind::Dt,
            Model::Rf(_) => ModelKind::Rf,
            Model::Et(_) => ModelKind::Et,
            Model::Boost(_) => ModelKind::Boost,
            Model::Stacking(_) => ModelKind::Stacking,
        }
    }

    /// Predicted class and class distribution: leaf class shares for a tree,
    /// vote shares for forests, softmax probabilities for boosting and the
    /// meta model's output for stacking.
    pub fn predict(&self, row: &[f64]) -> Result<(usize, Vec<f64>)> {
        match self {
            Model::Dt(t) => t.predict(row),
            Model::Rf(f) | Model::Et(f) => f.majority_vote(row),
            Model::Boost(b) => b.predict(row),
            Model::Stacking(s) => s.predict(row),
        }
    }

    pub fn predict_class(&self, row: &[f64]) -> Result<usize> {
        self.predict(row).map(|(c, _)| c)
    }

    /// Predicted classes for every row of `data`.
    pub fn predict_all(&self, data: &Dataset) -> Result<Vec<usize>> {
        data.rows().map(|r| self.predict_class(r)).collect()
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::Dt(t) => t.n_features,
            Model::Rf(f) | Model::Et(f) => f.n_features,
            Model::Boost(b) => b.n_features,
            Model::Stacking(s) => s.n_features,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Model::Dt(t) => t.n_classes,
            Model::Rf(f) | Model::Et(f) => f.n_classes,
            Model::Boost(b) => b.n_classes,
            Model::Stacking(s) => s.n_classes,
        }
    }

    /// Normalized importance over input features (all zeros if the model
    /// never split). Stacking averages its base models.
    pub fn feature_importance(&self) -> Vec<f64> {
        match self {
            Model::Dt(t) => t.feature_importance(),
            Model::Rf(f) | Model::Et(f) => f.feature_importance(),
            Model::Boost(b) => b.feature_importance(),
            Model::Stacking(s) => s.feature_importance(),
        }
    }
}

/// Importance vector of any fitted ensemble (or single tree).
pub fn ensemble_feature_importance(model: &Model) -> Vec<f64> {
    model.feature_importance()
}
