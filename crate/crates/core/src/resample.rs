//! Minority-class oversampling: random duplication and SMOTE.
//!
//! Originals are kept verbatim and come first; new rows are appended class
//! by class in ascending class id. Each class draws from its own seeded
//! stream, so results do not depend on the worker count.

use std::collections::{BTreeMap, HashMap};

use rand::Rng as _;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::seed;

pub const DEFAULT_SMOTE_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMethod {
    Random,
    Smote,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResamplePlan {
    /// Target row count per class id. Classes not listed are untouched.
    pub targets: BTreeMap<usize, usize>,
    pub method: ResampleMethod,
    pub k_neighbors: usize,
    pub seed: u64,
}

impl ResamplePlan {
    /// Raise every present class to `ratio` times the largest class count.
    pub fn equalize(dataset: &Dataset, method: ResampleMethod, ratio: f64, seed: u64) -> Self {
        let counts = dataset.class_counts();
        let largest = counts.iter().copied().max().unwrap_or(0);
        let goal = (ratio * largest as f64).round() as usize;
        let targets = counts
            .iter()
            .enumerate()
            .filter(|&(_, &c)| c > 0 && c < goal)
            .map(|(class, _)| (class, goal))
            .collect();
        Self {
            targets,
            method,
            k_neighbors: DEFAULT_SMOTE_K,
            seed,
        }
    }

    fn needs(&self, counts: &[usize]) -> Result<Vec<(usize, usize)>> {
        let mut out = Vec::new();
        for (&class, &target) in &self.targets {
            let have = *counts
                .get(class)
                .ok_or_else(|| invalid(format!("class id {class} out of range")))?;
            if target < have {
                return Err(invalid(format!(
                    "target {target} for class {class} is below its current count {have}"
                )));
            }
            if target > have {
                out.push((class, target - have));
            }
        }
        Ok(out)
    }
}

/// Apply `plan` with its configured method.
pub fn resample(dataset: &Dataset, plan: &ResamplePlan) -> Result<Dataset> {
    match plan.method {
        ResampleMethod::Random => random_oversample(dataset, plan),
        ResampleMethod::Smote => smote_oversample(dataset, plan),
    }
}

fn members_by_class(dataset: &Dataset) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); dataset.n_classes()];
    for (i, &l) in dataset.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    by_class
}

fn append_blocks(dataset: &Dataset, blocks: Vec<(usize, Vec<f64>)>) -> Result<Dataset> {
    let mut out = dataset.clone();
    let p = dataset.n_features();
    for (class, values) in blocks {
        let labels = vec![class; values.len() / p];
        out.extend_rows(&values, &labels)?;
    }
    Ok(out)
}

/// Pad classes to their targets by copying their own rows, drawn uniformly
/// with replacement.
pub fn random_oversample(dataset: &Dataset, plan: &ResamplePlan) -> Result<Dataset> {
    if plan.method != ResampleMethod::Random {
        return Err(invalid("plan method is not random oversampling"));
    }
    let needs = plan.needs(&dataset.class_counts())?;
    let by_class = members_by_class(dataset);
    let mut blocks = Vec::with_capacity(needs.len());
    for (class, need) in needs {
        let members = &by_class[class];
        if members.is_empty() {
            return Err(Error::ClassAbsent(dataset.label_names()[class].clone()));
        }
        let mut rng = seed::rng(plan.seed, "resample.random", class as u64);
        let mut values = Vec::with_capacity(need * dataset.n_features());
        for _ in 0..need {
            let pick = members[rng.gen_range(0..members.len())];
            values.extend_from_slice(dataset.row(pick));
        }
        blocks.push((class, values));
    }
    append_blocks(dataset, blocks)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` nearest same-class rows of `members[anchor]` (exact search, ties
/// by position in `members`).
pub(crate) fn nearest_neighbors(dataset: &Dataset, members: &[usize], anchor: usize, k: usize) -> Vec<usize> {
    let origin = dataset.row(members[anchor]);
    let mut dists: Vec<(f64, usize)> = members
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != anchor)
        .map(|(j, &row)| (squared_distance(origin, dataset.row(row)), j))
        .collect();
    let k = k.min(dists.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dists.len() && k > 0 {
        dists.select_nth_unstable_by(k - 1, cmp);
    }
    dists.truncate(k);
    dists.sort_by(cmp);
    dists.into_iter().map(|(_, j)| members[j]).collect()
}

/// SMOTE: each synthetic row interpolates a random class member toward one of
/// its `k` nearest same-class neighbors, `x + u * (neighbor - x)` with `u`
/// uniform in `[0, 1)`.
///
/// `k` is reduced to `class size - 1` for tiny classes. Classes with fewer
/// than two rows cannot be interpolated and are reported as errors.
pub fn smote_oversample(dataset: &Dataset, plan: &ResamplePlan) -> Result<Dataset> {
    if plan.method != ResampleMethod::Smote {
        return Err(invalid("plan method is not SMOTE"));
    }
    if plan.k_neighbors == 0 {
        return Err(invalid("SMOTE needs k_neighbors >= 1"));
    }
    let needs = plan.needs(&dataset.class_counts())?;
    let by_class = members_by_class(dataset);
    for &(class, _) in &needs {
        if by_class[class].len() < 2 {
            return Err(Error::ClassTooSmall {
                class: dataset.label_names()[class].clone(),
                size: by_class[class].len(),
            });
        }
    }
    let p = dataset.n_features();
    let blocks: Vec<(usize, Vec<f64>)> = needs
        .par_iter()
        .map(|&(class, need)| {
            let members = &by_class[class];
            let k = plan.k_neighbors.min(members.len() - 1);
            let mut rng = seed::rng(plan.seed, "resample.smote", class as u64);
            let mut cache: HashMap<usize, Vec<usize>> = HashMap::new();
            let mut values = Vec::with_capacity(need * p);
            for _ in 0..need {
                let anchor = rng.gen_range(0..members.len());
                let neighbors = cache
                    .entry(anchor)
                    .or_insert_with(|| nearest_neighbors(dataset, members, anchor, k));
                let neighbor = neighbors[rng.gen_range(0..neighbors.len())];
                let u: f64 = rng.gen();
                let x = dataset.row(members[anchor]);
                let nn = dataset.row(neighbor);
                values.extend(x.iter().zip(nn).map(|(a, b)| a + u * (b - a)));
            }
            (class, values)
        })
        .collect();
    append_blocks(dataset, blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSchema;

    fn dataset(rows: &[[f64; 2]], labels: &[usize]) -> Dataset {
        Dataset::new(
            FeatureSchema::numeric(["a", "b"]).unwrap(),
            rows.iter().flatten().copied().collect(),
            labels.to_vec(),
            vec!["maj".into(), "min".into()],
        )
        .unwrap()
    }

    fn plan(method: ResampleMethod, targets: &[(usize, usize)]) -> ResamplePlan {
        ResamplePlan {
            targets: targets.iter().copied().collect(),
            method,
            k_neighbors: 5,
            seed: 11,
        }
    }

    fn ten_plus_thirty() -> Dataset {
        let rows: Vec<[f64; 2]> = (0..40).map(|i| [i as f64, (i * i % 7) as f64]).collect();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i < 10)).collect();
        dataset(&rows, &labels)
    }

    #[test]
    fn random_pads_with_copies() {
        let ds = ten_plus_thirty();
        let out = random_oversample(&ds, &plan(ResampleMethod::Random, &[(1, 25)])).unwrap();
        assert_eq!(out.class_counts(), vec![30, 25]);
        assert_eq!(out.subset(&(0..40).collect::<Vec<_>>()), ds);
        for i in 40..55 {
            assert_eq!(out.labels()[i], 1);
            assert!((0..10).any(|j| ds.row(j) == out.row(i)));
        }
    }

    #[test]
    fn target_equal_to_count_is_identity() {
        let ds = ten_plus_thirty();
        let out = random_oversample(&ds, &plan(ResampleMethod::Random, &[(1, 10)])).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn target_below_count_errors() {
        let ds = ten_plus_thirty();
        assert!(random_oversample(&ds, &plan(ResampleMethod::Random, &[(0, 5)])).is_err());
    }

    #[test]
    fn smote_identical_points() {
        let ds = dataset(&[[0.0, 0.0], [3.0, 3.0], [3.0, 3.0]], &[0, 1, 1]);
        let out = smote_oversample(&ds, &plan(ResampleMethod::Smote, &[(1, 12)])).unwrap();
        assert_eq!(out.n_rows(), 13);
        for i in 3..13 {
            assert_eq!(out.row(i), &[3.0, 3.0]);
        }
    }

    #[test]
    fn smote_tiny_class_errors() {
        let ds = dataset(&[[0.0, 0.0], [1.0, 1.0]], &[0, 1]);
        let err = smote_oversample(&ds, &plan(ResampleMethod::Smote, &[(1, 5)]));
        assert!(matches!(err, Err(Error::ClassTooSmall { size: 1, .. })));
    }

    #[test]
    fn smote_ten_to_twenty_in_bounding_box() {
        let ds = ten_plus_thirty();
        let out = smote_oversample(&ds, &plan(ResampleMethod::Smote, &[(1, 20)])).unwrap();
        assert_eq!(out.class_counts(), vec![30, 20]);
        let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
        for i in 0..10 {
            for f in 0..2 {
                lo[f] = lo[f].min(ds.value(i, f));
                hi[f] = hi[f].max(ds.value(i, f));
            }
        }
        for i in 40..50 {
            assert_eq!(out.labels()[i], 1);
            for f in 0..2 {
                assert!(lo[f] <= out.value(i, f) && out.value(i, f) <= hi[f]);
            }
        }
    }

    #[test]
    fn smote_is_deterministic() {
        let ds = ten_plus_thirty();
        let p = plan(ResampleMethod::Smote, &[(1, 30)]);
        assert_eq!(smote_oversample(&ds, &p).unwrap(), smote_oversample(&ds, &p).unwrap());
    }

    #[test]
    fn equalize_targets_largest_class() {
        let ds = ten_plus_thirty();
        let p = ResamplePlan::equalize(&ds, ResampleMethod::Smote, 1.0, 0);
        assert_eq!(p.targets, BTreeMap::from([(1, 30)]));
        let out = resample(&ds, &p).unwrap();
        assert_eq!(out.class_counts(), vec![30, 30]);
    }

    #[test]
    fn nearest_neighbors_by_distance() {
        let ds = dataset(&[[0.0, 0.0], [1.0, 0.0], [5.0, 0.0], [2.0, 0.0]], &[1, 1, 1, 1]);
        let members = [0, 1, 2, 3];
        assert_eq!(nearest_neighbors(&ds, &members, 0, 2), vec![1, 3]);
        assert_eq!(nearest_neighbors(&ds, &members, 2, 5), vec![3, 1, 0]);
    }
}
