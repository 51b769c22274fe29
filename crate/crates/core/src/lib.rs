//! Tree-ensemble intrusion detection.
//!
//! The pipeline reads CAN-bus captures or network flow tables ([`ingest`]),
//! normalizes and splits them ([`data`]), optionally oversamples minority
//! classes ([`resample`]), and trains decision trees ([`cart`]), random
//! forests and extra trees ([`forest`]), gradient-boosted trees ([`boost`])
//! or a stacking ensemble over them ([`stack`]). [`select`] averages feature
//! importances and keeps the features covering a cumulative share of the
//! total; [`eval`] provides metrics, cross-validation and grid search;
//! [`artifact`] persists fitted models.
//!
//! All randomness derives from one master seed ([`seed`]), and every parallel
//! fit merges results in a fixed order, so a model is determined by its data,
//! parameters and seed regardless of the number of worker threads.

pub mod artifact;
pub mod boost;
pub mod cart;
pub mod data;
pub mod error;
pub mod eval;
pub mod forest;
pub mod ingest;
pub mod model;
pub mod resample;
pub mod seed;
pub mod select;
pub mod stack;
pub mod synth;

pub use artifact::{load_model, save_model, ModelArtifact, TrainingMetadata, FORMAT_VERSION};
pub use boost::{fit_boosted, predict_boosted, BoostParams, BoostedModel, GradStats};
pub use cart::{
    best_split, entropy_impurity, fit_tree, gini_impurity, predict_tree, Criterion, DecisionTree, FeatureSubset,
    SplitCandidate, SplitMode, TreeNode, TreeParams,
};
pub use data::{
    compute_min_max, drop_invalid_rows, normalize, stratified_folds, stratified_sample, Dataset, FeatureKind,
    FeatureSchema, FoldPlan, NormalizationParams,
};
pub use error::{Error, Result};
pub use eval::{
    compute_metrics, confusion_matrix, cross_validate, grid_search, ConfusionMatrix, CvOptions, CvReport, FeatureMode,
    GridSearchResult, MetricsReport, ResampleSpec, StopReason,
};
pub use forest::{fit_extra_trees, fit_random_forest, majority_vote, ForestKind, ForestModel, ForestParams};
pub use ingest::{CanEncoding, CanFrameRecord, FlowRecord, LabelMapSpec};
pub use model::{ensemble_feature_importance, Model, ModelKind, ModelSpec, StackingSpec};
pub use resample::{random_oversample, resample, smote_oversample, ResampleMethod, ResamplePlan};
pub use select::{
    average_importance, per_attack_importance, select_base_and_meta, select_features, ImportanceReport, SingularReport,
};
pub use stack::{fit_stacking, generate_oof_features, predict_stacking, StackingModel};

/// Run `f` on a dedicated pool of `threads` workers (`0` = rayon's default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParam(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}
