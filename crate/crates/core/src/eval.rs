//! Metrics, stratified cross-validation with timing, and grid search over
//! tree count and depth.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{stratified_folds, Dataset};
use crate::error::{invalid, Result};
use crate::model::{ModelKind, ModelSpec};
use crate::resample::{resample, ResampleMethod, ResamplePlan, DEFAULT_SMOTE_K};
use crate::seed;
use crate::select::{importance_report, select_features};

/// `counts[t * k + p]` = rows of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// Rows of class `c`.
    pub fn support(&self, c: usize) -> u64 {
        (0..self.k).map(|p| self.get(c, p)).sum()
    }

    /// Rows predicted as class `c`.
    pub fn predicted(&self, c: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, c)).sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(invalid("confusion matrices differ in class count"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(invalid(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= k || p >= k {
            return Err(invalid(format!("label pair ({t}, {p}) outside 0..{k}")));
        }
        cm.counts[t * k + p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub support: u64,
}

/// Headline metrics. Rates that would be 0/0 are `None`, never 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub detection_rate: Option<f64>,
    pub false_alarm_rate: Option<f64>,
    pub f1_weighted: f64,
    pub f1_macro: f64,
    pub per_class: Vec<ClassMetrics>,
    pub train_time_s: f64,
    pub predict_time_s: f64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Accuracy, the binary attack-vs-normal collapse (DR, FAR) and per-class
/// and averaged F1. Times are left at zero.
pub fn compute_metrics(cm: &ConfusionMatrix, normal_class: usize) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(invalid("confusion matrix is empty"));
    }
    if normal_class >= cm.k {
        return Err(invalid(format!("normal class {normal_class} outside 0..{}", cm.k)));
    }
    let off = total - cm.trace();
    let accuracy = 1.0 - off as f64 / total as f64;

    let mut attack_rows = 0;
    let mut attack_detected = 0;
    for t in (0..cm.k).filter(|&t| t != normal_class) {
        attack_rows += cm.support(t);
        attack_detected += cm.support(t) - cm.get(t, normal_class);
    }
    let normal_rows = cm.support(normal_class);
    let normal_alarms = normal_rows - cm.get(normal_class, normal_class);

    let per_class: Vec<ClassMetrics> = (0..cm.k)
        .map(|c| {
            let tp = cm.get(c, c);
            let support = cm.support(c);
            let predicted = cm.predicted(c);
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = match (precision, recall) {
                (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
                _ if support > 0 || predicted > 0 => Some(0.0),
                _ => None,
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let f1_weighted = per_class
        .iter()
        .map(|m| m.f1.unwrap_or(0.0) * m.support as f64)
        .sum::<f64>()
        / total as f64;
    let defined: Vec<f64> = per_class.iter().filter_map(|m| m.f1).collect();
    let f1_macro = defined.iter().sum::<f64>() / defined.len().max(1) as f64;
    Ok(MetricsReport {
        accuracy,
        detection_rate: ratio(attack_detected, attack_rows),
        false_alarm_rate: ratio(normal_alarms, normal_rows),
        f1_weighted,
        f1_macro,
        per_class,
        train_time_s: 0.0,
        predict_time_s: 0.0,
    })
}

/// Oversampling applied to each training fold.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampleSpec {
    pub method: ResampleMethod,
    /// Every class is raised to `ratio` times the largest class.
    pub ratio: f64,
    pub k_neighbors: usize,
}

impl ResampleSpec {
    pub fn new(method: ResampleMethod, ratio: f64) -> Self {
        Self {
            method,
            ratio,
            k_neighbors: DEFAULT_SMOTE_K,
        }
    }

    /// Plan for `train` with `seed`.
    pub fn plan(&self, train: &Dataset, seed: u64) -> ResamplePlan {
        ResamplePlan {
            k_neighbors: self.k_neighbors,
            ..ResamplePlan::equalize(train, self.method, self.ratio, seed)
        }
    }
}

/// Which features each fold trains on.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum FeatureMode {
    #[default]
    All,
    /// A fixed index set.
    Fixed(Vec<usize>),
    /// Averaged-importance selection computed on each training fold and
    /// applied unchanged to its evaluation fold.
    Select { threshold: f64, specs: Vec<ModelSpec> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOptions {
    pub k: usize,
    pub seed: u64,
    pub resample: Option<ResampleSpec>,
    pub features: FeatureMode,
    /// Normal class id; defaults to [`Dataset::normal_class`].
    pub normal_class: Option<usize>,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 0,
            resample: None,
            features: FeatureMode::All,
            normal_class: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub metrics: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub features: Vec<usize>,
    pub train_rows: usize,
    pub test_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    /// Mean of the fold metrics (undefined rates averaged over the folds
    /// where they are defined); times are summed.
    pub aggregate: MetricsReport,
    /// Confusion matrix pooled over all folds and its metrics.
    pub pooled: ConfusionMatrix,
    pub pooled_metrics: MetricsReport,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn aggregate(folds: &[FoldResult], pooled: &MetricsReport) -> MetricsReport {
    let n = folds.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| folds.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
    MetricsReport {
        accuracy: mean(|m| m.accuracy),
        detection_rate: mean_defined(folds.iter().map(|r| r.metrics.detection_rate)),
        false_alarm_rate: mean_defined(folds.iter().map(|r| r.metrics.false_alarm_rate)),
        f1_weighted: mean(|m| m.f1_weighted),
        f1_macro: mean(|m| m.f1_macro),
        per_class: pooled.per_class.clone(),
        train_time_s: folds.iter().map(|r| r.metrics.train_time_s).sum(),
        predict_time_s: folds.iter().map(|r| r.metrics.predict_time_s).sum(),
    }
}

/// Stratified k-fold evaluation of `spec`. Folds run one after another so
/// each fit gets the whole worker pool and its timing is not distorted.
pub fn cross_validate(spec: &ModelSpec, dataset: &Dataset, opts: &CvOptions) -> Result<CvReport> {
    dataset.ensure_trainable()?;
    let plan = stratified_folds(dataset, opts.k, seed::derive(opts.seed, "cv.folds", 0))?;
    let normal = opts.normal_class.unwrap_or_else(|| dataset.normal_class());
    let k_classes = dataset.n_classes();
    let mut folds = Vec::with_capacity(opts.k);
    let mut pooled = ConfusionMatrix::zeros(k_classes);
    for f in 0..opts.k {
        let mut train = dataset.subset(&plan.train_indices(f));
        let test = dataset.subset(&plan.test_indices(f));
        if let Some(rs) = &opts.resample {
            let rplan = rs.plan(&train, seed::derive(opts.seed, "cv.resample", f as u64));
            train = resample(&train, &rplan)?;
        }
        let features: Vec<usize> = match &opts.features {
            FeatureMode::All => (0..dataset.n_features()).collect(),
            FeatureMode::Fixed(idx) => idx.clone(),
            FeatureMode::Select { threshold, specs } => {
                let report = importance_report(&train, specs)?;
                select_features(&report, *threshold)?
            }
        };
        let (train, test) =
            if features.len() == dataset.n_features() && features.iter().enumerate().all(|(i, &j)| i == j) {
                (train, test)
            } else {
                (train.project_features(&features)?, test.project_features(&features)?)
            };
        let start = Instant::now();
        let model = spec.fit(&train)?;
        let train_time_s = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let predicted = model.predict_all(&test)?;
        let predict_time_s = start.elapsed().as_secs_f64();
        let cm = confusion_matrix(test.labels(), &predicted, k_classes)?;
        pooled.add(&cm)?;
        let mut metrics = compute_metrics(&cm, normal)?;
        metrics.train_time_s = train_time_s;
        metrics.predict_time_s = predict_time_s;
        folds.push(FoldResult {
            metrics,
            confusion: cm,
            features,
            train_rows: train.n_rows(),
            test_rows: test.n_rows(),
        });
    }
    let pooled_metrics = compute_metrics(&pooled, normal)?;
    let aggregate = aggregate(&folds, &pooled_metrics);
    Ok(CvReport {
        folds,
        aggregate,
        pooled,
        pooled_metrics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub trees: usize,
    pub depth: usize,
    pub accuracy: f64,
    pub time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Exhausted,
    AccuracyDrop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub points: Vec<GridPoint>,
    pub chosen: (usize, usize),
    pub stop_reason: StopReason,
}

/// Default accuracy drop that ends a grid dimension.
pub const DEFAULT_GRID_TOLERANCE: f64 = 0.001;

fn strictly_ascending(v: &[usize]) -> bool {
    !v.is_empty() && v.windows(2).all(|w| w[0] < w[1])
}

/// Walk depths in ascending order and, for each depth, tree counts in
/// ascending order. A tree-count sweep stops when accuracy falls more than
/// `tolerance` below the best seen at that depth; the depth sweep stops when
/// a depth's best accuracy falls more than `tolerance` below the best depth
/// so far. The chosen point is the most accurate one evaluated, earliest
/// first on ties.
pub fn grid_search_with(
    t_grid: &[usize],
    d_grid: &[usize],
    tolerance: f64,
    mut evaluate: impl FnMut(usize, usize) -> Result<(f64, f64)>,
) -> Result<GridSearchResult> {
    if !strictly_ascending(t_grid) || !strictly_ascending(d_grid) {
        return Err(invalid("grids must be non-empty and strictly ascending"));
    }
    let mut points = Vec::new();
    let mut dropped = false;
    let mut best_depth_acc = f64::NEG_INFINITY;
    for &d in d_grid {
        let mut best_row = f64::NEG_INFINITY;
        for &t in t_grid {
            let (accuracy, time_s) = evaluate(t, d)?;
            points.push(GridPoint {
                trees: t,
                depth: d,
                accuracy,
                time_s,
            });
            if accuracy < best_row - tolerance {
                dropped = true;
                break;
            }
            best_row = best_row.max(accuracy);
        }
        if best_row < best_depth_acc - tolerance {
            dropped = true;
            break;
        }
        best_depth_acc = best_depth_acc.max(best_row);
    }
    let mut chosen = points[0];
    for p in &points[1..] {
        if p.accuracy > chosen.accuracy {
            chosen = *p;
        }
    }
    Ok(GridSearchResult {
        chosen: (chosen.trees, chosen.depth),
        points,
        stop_reason: if dropped {
            StopReason::AccuracyDrop
        } else {
            StopReason::Exhausted
        },
    })
}

/// Grid search of `kind` scored by cross-validated accuracy and summed
/// training time.
pub fn grid_search(
    kind: ModelKind,
    dataset: &Dataset,
    t_grid: &[usize],
    d_grid: &[usize],
    opts: &CvOptions,
) -> Result<GridSearchResult> {
    grid_search_with(t_grid, d_grid, DEFAULT_GRID_TOLERANCE, |t, d| {
        let spec = ModelSpec::default_for(kind)
            .with_trees(t)
            .with_depth(d)
            .with_seed(opts.seed);
        let report = cross_validate(&spec, dataset, opts)?;
        Ok((report.aggregate.accuracy, report.aggregate.train_time_s))
    })
}

fn pct(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.*}", digits, x * 100.0))
}

/// Aligned text table with `Method, Acc (%), DR (%), FAR (%), F1, Time (s)`.
pub fn format_report_table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MetricsReport)>) -> String {
    let header = ["Method", "Acc (%)", "DR (%)", "FAR (%)", "F1", "Time (s)"];
    let mut lines: Vec<[String; 6]> = vec![header.map(String::from)];
    for (name, m) in rows {
        lines.push([
            name.to_string(),
            pct(Some(m.accuracy), 2),
            pct(m.detection_rate, 2),
            pct(m.false_alarm_rate, 4),
            format!("{:.3}", m.f1_weighted),
            format!("{:.1}", m.train_time_s),
        ]);
    }
    let widths: Vec<usize> = (0..6)
        .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in &lines {
        let cells: Vec<String> = line
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}
