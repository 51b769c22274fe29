//! Dataset representation, min-max normalization, cleaning and stratified
//! fold assignment.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    OneHot,
}

/// Ordered feature names with their kinds. One-hot columns derived from the
/// same source field share a group id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    names: Vec<String>,
    kinds: Vec<FeatureKind>,
    group_ids: Vec<Option<String>>,
}

impl FeatureSchema {
    pub fn new(names: Vec<String>, kinds: Vec<FeatureKind>, group_ids: Vec<Option<String>>) -> Result<Self> {
        if names.len() != kinds.len() || names.len() != group_ids.len() {
            return Err(invalid("schema field lengths differ"));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.is_empty() {
                return Err(invalid("empty feature name"));
            }
            if !seen.insert(name.as_str()) {
                return Err(invalid(format!("duplicate feature name {name:?}")));
            }
        }
        for ((name, kind), group) in names.iter().zip(&kinds).zip(&group_ids) {
            match (kind, group) {
                (FeatureKind::OneHot, None) => return Err(invalid(format!("one-hot feature {name:?} has no group"))),
                (FeatureKind::Numeric, Some(_)) => {
                    return Err(invalid(format!("numeric feature {name:?} has a group")))
                }
                _ => {}
            }
        }
        Ok(Self {
            names,
            kinds,
            group_ids,
        })
    }

    /// All-numeric schema.
    pub fn numeric<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let n = names.len();
        Self::new(names, vec![FeatureKind::Numeric; n], vec![None; n])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kind(&self, i: usize) -> FeatureKind {
        self.kinds[i]
    }

    pub fn group(&self, i: usize) -> Option<&str> {
        self.group_ids[i].as_deref()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Schema restricted to `indices`, in that order.
    pub fn project(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(invalid(format!("feature index {bad} out of range")));
        }
        Self::new(
            indices.iter().map(|&i| self.names[i].clone()).collect(),
            indices.iter().map(|&i| self.kinds[i]).collect(),
            indices.iter().map(|&i| self.group_ids[i].clone()).collect(),
        )
    }

    /// Describes the first difference from `other`, or `None` when equal.
    pub fn first_difference(&self, other: &FeatureSchema) -> Option<String> {
        for (i, (a, b)) in self.names.iter().zip(&other.names).enumerate() {
            if a != b {
                return Some(format!("feature {i}: expected {a:?}, found {b:?}"));
            }
            if self.kinds[i] != other.kinds[i] || self.group_ids[i] != other.group_ids[i] {
                return Some(format!("feature {i} ({a:?}): kind or group differs"));
            }
        }
        if self.len() != other.len() {
            return Some(format!("feature count: expected {}, found {}", self.len(), other.len()));
        }
        None
    }
}

/// Numeric feature matrix (row-major) with dense integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: FeatureSchema,
    values: Vec<f64>,
    labels: Vec<usize>,
    label_names: Vec<String>,
}

impl Dataset {
    /// `values` is row-major with `schema.len()` columns. Non-finite values are
    /// accepted here so raw data can be cleaned by [`drop_invalid_rows`].
    pub fn new(schema: FeatureSchema, values: Vec<f64>, labels: Vec<usize>, label_names: Vec<String>) -> Result<Self> {
        let p = schema.len();
        if p == 0 {
            return Err(invalid("dataset needs at least one feature"));
        }
        if values.len() != labels.len() * p {
            return Err(invalid(format!(
                "{} values do not fill {} rows of {} features",
                values.len(),
                labels.len(),
                p
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= label_names.len()) {
            return Err(invalid(format!("label id {bad} has no name")));
        }
        Ok(Self {
            schema,
            values,
            labels,
            label_names,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    /// Number of named classes, including any with no rows in this dataset.
    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_features();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.n_features())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.n_features() + feature]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.label_names.iter().position(|n| n == name)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Id of the benign class: a class named `Normal` or `BENIGN`
    /// (case-insensitive), otherwise class 0.
    pub fn normal_class(&self) -> usize {
        self.label_names
            .iter()
            .position(|n| n.eq_ignore_ascii_case("normal") || n.eq_ignore_ascii_case("benign"))
            .unwrap_or(0)
    }

    /// Rows at `indices` (duplicates allowed), keeping schema and label names.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let p = self.n_features();
        let mut values = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Dataset {
            schema: self.schema.clone(),
            values,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            label_names: self.label_names.clone(),
        }
    }

    /// Columns at `indices`, in that order.
    pub fn project_features(&self, indices: &[usize]) -> Result<Dataset> {
        let schema = self.schema.project(indices)?;
        let mut values = Vec::with_capacity(self.n_rows() * indices.len());
        for row in self.rows() {
            values.extend(indices.iter().map(|&f| row[f]));
        }
        Ok(Dataset {
            schema,
            values,
            labels: self.labels.clone(),
            label_names: self.label_names.clone(),
        })
    }

    /// Replace the label names (and therefore the class id space).
    pub fn with_label_names(mut self, label_names: Vec<String>) -> Result<Self> {
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= label_names.len()) {
            return Err(invalid(format!("label id {bad} has no name")));
        }
        self.label_names = label_names;
        Ok(self)
    }

    /// Append rows; `values` is row-major.
    pub fn extend_rows(&mut self, values: &[f64], labels: &[usize]) -> Result<()> {
        if values.len() != labels.len() * self.n_features() {
            return Err(invalid("appended values do not match label count"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.n_classes()) {
            return Err(invalid(format!("label id {bad} has no name")));
        }
        self.values.extend_from_slice(values);
        self.labels.extend_from_slice(labels);
        Ok(())
    }

    /// Checks the preconditions of every learner: at least one row and all
    /// values finite.
    pub fn ensure_trainable(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::NoRows);
        }
        if let Some(pos) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "non-finite value at row {}, feature {}",
                pos / self.n_features(),
                pos % self.n_features()
            )));
        }
        Ok(())
    }
}

/// Per-feature extrema used for min-max scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl NormalizationParams {
    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    /// Scale a single value of feature `f` into `[0, 1]`.
    pub fn scale(&self, f: usize, x: f64) -> f64 {
        if self.degenerate[f] {
            return 0.0;
        }
        let scaled = (x - self.min[f]) / (self.max[f] - self.min[f]);
        if scaled.is_nan() {
            scaled
        } else {
            scaled.clamp(0.0, 1.0)
        }
    }

    /// Normalize a raw row in place. One-hot columns are left untouched.
    pub fn apply_row(&self, schema: &FeatureSchema, row: &mut [f64]) -> Result<()> {
        if row.len() != self.len() || schema.len() != self.len() {
            return Err(Error::SchemaMismatch(format!(
                "row has {} features, normalization expects {}",
                row.len(),
                self.len()
            )));
        }
        for (f, x) in row.iter_mut().enumerate() {
            if schema.kind(f) == FeatureKind::Numeric {
                *x = self.scale(f, *x);
            }
        }
        Ok(())
    }
}

/// Per-feature min and max over every row (non-finite cells are ignored).
pub fn compute_min_max(dataset: &Dataset) -> Result<NormalizationParams> {
    if dataset.is_empty() {
        return Err(Error::NoRows);
    }
    let p = dataset.n_features();
    let mut min = vec![f64::INFINITY; p];
    let mut max = vec![f64::NEG_INFINITY; p];
    for row in dataset.rows() {
        for (f, &x) in row.iter().enumerate() {
            if x.is_finite() {
                min[f] = min[f].min(x);
                max[f] = max[f].max(x);
            }
        }
    }
    for f in 0..p {
        if min[f] > max[f] {
            // no finite value in this column
            min[f] = 0.0;
            max[f] = 0.0;
        }
    }
    let degenerate = min.iter().zip(&max).map(|(a, b)| a == b).collect();
    Ok(NormalizationParams { min, max, degenerate })
}

/// Min-max scale every numeric column into `[0, 1]`.
///
/// Degenerate columns map to 0.0 and values outside the fitted range are
/// clamped.
pub fn normalize(dataset: &Dataset, params: &NormalizationParams) -> Result<Dataset> {
    if params.len() != dataset.n_features() {
        return Err(Error::SchemaMismatch(format!(
            "normalization has {} features, dataset has {}",
            params.len(),
            dataset.n_features()
        )));
    }
    let mut out = dataset.clone();
    let p = out.n_features();
    for row in out.values.chunks_exact_mut(p) {
        params.apply_row(&dataset.schema, row)?;
    }
    Ok(out)
}

/// Remove rows holding any non-finite cell. Surviving rows keep their order.
pub fn drop_invalid_rows(dataset: Dataset) -> Result<(Dataset, usize)> {
    let keep: Vec<usize> = (0..dataset.n_rows())
        .filter(|&i| dataset.row(i).iter().all(|v| v.is_finite()))
        .collect();
    let removed = dataset.n_rows() - keep.len();
    if keep.is_empty() {
        return Err(Error::EmptyAfterCleaning);
    }
    if removed == 0 {
        return Ok((dataset, 0));
    }
    Ok((dataset.subset(&keep), removed))
}

/// Fold index for every row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Row indices of a stratified sample: each class keeps
/// `ceil(fraction * count)` of its rows (at least one), drawn without
/// replacement. Indices are returned in ascending order.
pub fn stratified_sample_indices(labels: &[usize], n_classes: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(format!("sample fraction {fraction} must lie in (0, 1]")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut keep = Vec::new();
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        let take = ((fraction * members.len() as f64).ceil() as usize).clamp(1, members.len());
        let mut rng = seed::rng(seed, "sample.class", class as u64);
        members.shuffle(&mut rng);
        keep.extend_from_slice(&members[..take]);
    }
    keep.sort_unstable();
    Ok(keep)
}

/// Stratified sample of `dataset`; see [`stratified_sample_indices`].
pub fn stratified_sample(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    let keep = stratified_sample_indices(dataset.labels(), dataset.n_classes(), fraction, seed)?;
    Ok(dataset.subset(&keep))
}

/// Stratified k-fold assignment.
///
/// Rows of each class are shuffled and dealt round-robin. The dealing position
/// carries over from one class to the next, so overall fold sizes also differ
/// by at most one and a class smaller than `k` lands in as many folds as it
/// has rows.
pub fn stratified_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    stratified_folds_for_labels(dataset.labels(), dataset.n_classes(), k, seed)
}

pub(crate) fn stratified_folds_for_labels(labels: &[usize], n_classes: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(invalid(format!("fold count {k} must be at least 2")));
    }
    if k > labels.len() {
        return Err(invalid(format!("fold count {k} exceeds row count {}", labels.len())));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut assignments = vec![0; labels.len()];
    let mut cursor = 0;
    for (class, members) in by_class.iter_mut().enumerate() {
        let mut rng = seed::rng(seed, "folds.class", class as u64);
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignments[i] = cursor % k;
            cursor += 1;
        }
    }
    Ok(FoldPlan { k, assignments })
}
