//! Base/meta model selection for stacking and importance-driven feature
//! selection.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::model::{ModelKind, ModelSpec};

/// Default cumulative-importance threshold.
pub const DEFAULT_FS_THRESHOLD: f64 = 0.9;

/// Validation summary of one singular learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularReport {
    pub kind: ModelKind,
    pub accuracy: f64,
    /// False alarm rate, when defined.
    pub false_alarm_rate: Option<f64>,
    /// Training time in seconds.
    pub time_s: f64,
}

fn rank_reports(a: &SingularReport, b: &SingularReport) -> Ordering {
    let far = |r: &SingularReport| r.false_alarm_rate.unwrap_or(f64::INFINITY);
    b.accuracy
        .total_cmp(&a.accuracy)
        .then(far(a).total_cmp(&far(b)))
        .then(a.time_s.total_cmp(&b.time_s))
        .then(a.kind.cmp(&b.kind))
}

/// Keep the best three of the four singular learners as stacking bases and
/// use the best one as meta model.
///
/// Ranking: accuracy (higher first), then false alarm rate (lower first,
/// undefined last), then training time (lower first), then the fixed order
/// DT < RF < ET < boosted. Bases are returned in that fixed order.
pub fn select_base_and_meta(reports: &[SingularReport]) -> Result<(Vec<ModelKind>, ModelKind)> {
    for kind in ModelKind::SINGULAR {
        let n = reports.iter().filter(|r| r.kind == kind).count();
        if n != 1 {
            return Err(invalid(format!("expected exactly one report for {kind}, found {n}")));
        }
    }
    if reports.len() != ModelKind::SINGULAR.len() {
        return Err(invalid("reports must cover exactly dt, rf, et and boost"));
    }
    let mut ranked = reports.to_vec();
    ranked.sort_by(rank_reports);
    let meta = ranked[0].kind;
    let mut bases: Vec<ModelKind> = ranked[..3].iter().map(|r| r.kind).collect();
    bases.sort();
    Ok((bases, meta))
}

/// Averaged importance over several learners plus the derived ranking and
/// selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub feature_names: Vec<String>,
    pub per_model: Vec<(String, Vec<f64>)>,
    pub averaged: Vec<f64>,
    /// Feature indices by descending averaged importance, ties by index.
    pub ranking: Vec<usize>,
    /// Prefix of `ranking` chosen by the cumulative rule.
    pub selected: Vec<usize>,
    pub threshold: f64,
}

impl ImportanceReport {
    /// Two-column `feature,weight` table in ranking order.
    pub fn to_table(&self) -> String {
        importance_table(
            self.ranking
                .iter()
                .map(|&i| (self.feature_names[i].as_str(), self.averaged[i])),
        )
    }

    /// Names of the selected features in ranking order.
    pub fn selected_names(&self) -> Vec<&str> {
        self.selected.iter().map(|&i| self.feature_names[i].as_str()).collect()
    }
}

/// `feature,weight` lines with a header.
pub fn importance_table<'a>(rows: impl IntoIterator<Item = (&'a str, f64)>) -> String {
    let mut out = String::from("feature,weight\n");
    for (name, w) in rows {
        let name = if name.contains(',') || name.contains('"') {
            format!("\"{}\"", name.replace('"', "\"\""))
        } else {
            name.to_string()
        };
        out.push_str(&format!("{name},{w:.6}\n"));
    }
    out
}

/// Mean of the vectors that are not all zero, renormalized to sum 1.
pub fn mean_importance(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = vectors.first() else {
        return Err(invalid("no importance vectors"));
    };
    let p = first.len();
    if vectors.iter().any(|v| v.len() != p) {
        return Err(invalid("importance vectors differ in length"));
    }
    if vectors.iter().flatten().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(invalid("importance values must be finite and non-negative"));
    }
    let live: Vec<&Vec<f64>> = vectors.iter().filter(|v| v.iter().any(|&x| x > 0.0)).collect();
    if live.is_empty() {
        return Err(Error::NoSplits);
    }
    let mut mean = vec![0.0; p];
    for v in &live {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    let n = live.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let total = compensated_sum(mean.iter().copied());
    mean.iter_mut().for_each(|m| *m /= total);
    Ok(mean)
}

/// Indices by descending value, ties by ascending index.
pub fn rank_features(importance: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..importance.len()).collect();
    idx.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    idx
}

/// Neumaier-compensated sum, so cumulative importances such as nine times
/// 0.1 land on the correctly rounded total.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Shortest prefix of `ranking` whose importance sum reaches `threshold`.
/// When rounding keeps every prefix below the threshold, every feature with
/// non-zero importance is selected.
pub fn select_by_threshold(importance: &[f64], ranking: &[usize], threshold: f64) -> Vec<usize> {
    for len in 1..=ranking.len() {
        let sum = compensated_sum(ranking[..len].iter().map(|&i| importance[i]));
        if sum >= threshold {
            return ranking[..len].to_vec();
        }
    }
    ranking.iter().copied().filter(|&i| importance[i] > 0.0).collect()
}

/// Average named importance vectors into a report selected at
/// [`DEFAULT_FS_THRESHOLD`].
pub fn average_importance(feature_names: &[String], per_model: Vec<(String, Vec<f64>)>) -> Result<ImportanceReport> {
    let vectors: Vec<Vec<f64>> = per_model.iter().map(|(_, v)| v.clone()).collect();
    let averaged = mean_importance(&vectors)?;
    if averaged.len() != feature_names.len() {
        return Err(invalid("importance length differs from feature count"));
    }
    let ranking = rank_features(&averaged);
    let selected = select_by_threshold(&averaged, &ranking, DEFAULT_FS_THRESHOLD);
    Ok(ImportanceReport {
        feature_names: feature_names.to_vec(),
        per_model,
        averaged,
        ranking,
        selected,
        threshold: DEFAULT_FS_THRESHOLD,
    })
}

/// Selected feature indices (a prefix of the ranking) for `threshold`.
pub fn select_features(report: &ImportanceReport, threshold: f64) -> Result<Vec<usize>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(invalid("threshold must lie in (0, 1]"));
    }
    Ok(select_by_threshold(&report.averaged, &report.ranking, threshold))
}

/// The four singular learners used for importance averaging.
pub fn importance_specs(trees: usize, depth: usize, seed: u64) -> Vec<ModelSpec> {
    ModelKind::SINGULAR
        .iter()
        .map(|&k| {
            ModelSpec::default_for(k)
                .with_trees(trees)
                .with_depth(depth)
                .with_seed(seed)
        })
        .collect()
}

/// Fit every spec on `dataset` and average their importances.
pub fn importance_report(dataset: &Dataset, specs: &[ModelSpec]) -> Result<ImportanceReport> {
    let mut per_model = Vec::with_capacity(specs.len());
    for spec in specs {
        let model = spec.fit(dataset).map_err(|e| Error::Fit {
            spec: spec.describe(),
            source: Box::new(e),
        })?;
        per_model.push((spec.kind().display_name().to_string(), model.feature_importance()));
    }
    average_importance(dataset.schema().names(), per_model)
}

/// Importance ranking for one attack against normal traffic: the dataset is
/// restricted to the two classes (relabelled normal = 0, attack = 1) and the
/// averaged importance of `specs` is returned as `(feature, weight)` in
/// ranking order.
pub fn per_attack_importance(
    dataset: &Dataset,
    attack_class: usize,
    normal_class: usize,
    specs: &[ModelSpec],
) -> Result<Vec<(usize, f64)>> {
    let counts = dataset.class_counts();
    for c in [attack_class, normal_class] {
        match counts.get(c) {
            Some(&n) if n > 0 => {}
            Some(_) => return Err(Error::ClassAbsent(dataset.label_names()[c].clone())),
            None => return Err(Error::ClassAbsent(format!("#{c}"))),
        }
    }
    if attack_class == normal_class {
        return Err(invalid("attack and normal class must differ"));
    }
    let rows: Vec<usize> = (0..dataset.n_rows())
        .filter(|&i| dataset.labels()[i] == attack_class || dataset.labels()[i] == normal_class)
        .collect();
    let pair = dataset.subset(&rows);
    let labels = pair.labels().iter().map(|&l| usize::from(l == attack_class)).collect();
    let names = vec![
        dataset.label_names()[normal_class].clone(),
        dataset.label_names()[attack_class].clone(),
    ];
    let pair = Dataset::new(pair.schema().clone(), pair.values().to_vec(), labels, names)?;
    let report = importance_report(&pair, specs)?;
    Ok(report.ranking.iter().map(|&i| (i, report.averaged[i])).collect())
}
