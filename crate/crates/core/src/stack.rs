//! Two-layer stacking: base models produce class-probability vectors that
//! become the meta model's input.
//!
//! Meta features are generated out-of-fold: every base spec is fit on `k - 1`
//! stratified folds and scores only the held-out fold, so no row is ever
//! scored by a model that saw it. After the meta model is fit, the bases are
//! refit on the full training data for deployment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_folds, Dataset, FeatureSchema};
use crate::error::{invalid, Error, Result};
use crate::model::{Model, ModelSpec};
use crate::seed;

/// Default fold count for out-of-fold meta features.
pub const DEFAULT_OOF_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingModel {
    pub bases: Vec<Model>,
    pub meta: Model,
    pub oof_folds: usize,
    /// Offset of each base model's probability block in the meta input.
    pub meta_input_layout: Vec<usize>,
    pub n_features: usize,
    pub n_classes: usize,
}

/// Which rows each (base, fold) model was trained on and which it scored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OofTrace {
    /// `(base index, fold, trained rows, scored rows)`.
    pub entries: Vec<(usize, usize, Vec<usize>, Vec<usize>)>,
}

impl OofTrace {
    /// True when no entry scored a row it was trained on, and every base
    /// scored every row exactly once.
    pub fn is_clean(&self, n_rows: usize, n_bases: usize) -> bool {
        let mut scored = vec![0usize; n_rows * n_bases];
        for (base, _, trained, rows) in &self.entries {
            let mut in_train = vec![false; n_rows];
            trained.iter().for_each(|&r| in_train[r] = true);
            if rows.iter().any(|&r| in_train[r]) {
                return false;
            }
            rows.iter().for_each(|&r| scored[base * n_rows + r] += 1);
        }
        scored.iter().all(|&c| c == 1)
    }
}

/// Name of meta feature `class` of base `base`.
fn meta_feature_name(base: usize, spec: &ModelSpec, label: &str) -> String {
    format!("{}#{base}:P({label})", spec.kind())
}

fn fit_named(spec: &ModelSpec, data: &Dataset) -> Result<Model> {
    spec.fit(data).map_err(|e| Error::Fit {
        spec: spec.describe(),
        source: Box::new(e),
    })
}

/// Out-of-fold meta dataset: `bases.len() * K` probability columns, labels
/// carried through.
pub fn generate_oof_features(dataset: &Dataset, bases: &[ModelSpec], k: usize, seed: u64) -> Result<Dataset> {
    generate_oof_features_traced(dataset, bases, k, seed).map(|(d, _)| d)
}

/// [`generate_oof_features`] plus the fold bookkeeping it used.
pub fn generate_oof_features_traced(
    dataset: &Dataset,
    bases: &[ModelSpec],
    k: usize,
    seed: u64,
) -> Result<(Dataset, OofTrace)> {
    if bases.is_empty() {
        return Err(invalid("stacking needs at least one base spec"));
    }
    dataset.ensure_trainable()?;
    let plan = stratified_folds(dataset, k, seed::derive(seed, "stack.folds", 0))?;
    let n = dataset.n_rows();
    let classes = dataset.n_classes();
    let width = bases.len() * classes;
    let jobs: Vec<(usize, usize)> = (0..bases.len()).flat_map(|b| (0..k).map(move |f| (b, f))).collect();
    let outputs = jobs
        .par_iter()
        .map(|&(b, f)| {
            let train = plan.train_indices(f);
            let test = plan.test_indices(f);
            let model = fit_named(&bases[b], &dataset.subset(&train))?;
            let mut probs = Vec::with_capacity(test.len() * classes);
            for &r in &test {
                let (_, p) = model.predict(dataset.row(r))?;
                if p.len() != classes {
                    return Err(Error::Invariant(format!(
                        "{} produced {} probabilities for {classes} classes",
                        bases[b].describe(),
                        p.len()
                    )));
                }
                probs.extend(p);
            }
            Ok((b, f, train, test, probs))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = vec![0.0; n * width];
    let mut trace = OofTrace::default();
    for (b, f, train, test, probs) in outputs {
        for (i, &r) in test.iter().enumerate() {
            let dst = r * width + b * classes;
            values[dst..dst + classes].copy_from_slice(&probs[i * classes..(i + 1) * classes]);
        }
        trace.entries.push((b, f, train, test));
    }
    let names = bases
        .iter()
        .enumerate()
        .flat_map(|(b, spec)| dataset.label_names().iter().map(move |l| meta_feature_name(b, spec, l)))
        .collect::<Vec<_>>();
    let meta = Dataset::new(
        FeatureSchema::numeric(names)?,
        values,
        dataset.labels().to_vec(),
        dataset.label_names().to_vec(),
    )?;
    Ok((meta, trace))
}

/// Fit a stacking model. At least two base specs are required.
pub fn fit_stacking(
    dataset: &Dataset,
    bases: &[ModelSpec],
    meta: &ModelSpec,
    k: usize,
    seed: u64,
) -> Result<StackingModel> {
    if bases.len() < 2 {
        return Err(invalid("stacking needs at least two base models"));
    }
    let meta_data = generate_oof_features(dataset, bases, k, seed)?;
    let meta_model = fit_named(meta, &meta_data)?;
    let base_models = bases
        .par_iter()
        .map(|spec| fit_named(spec, dataset))
        .collect::<Result<Vec<_>>>()?;
    let classes = dataset.n_classes();
    Ok(StackingModel {
        bases: base_models,
        meta: meta_model,
        oof_folds: k,
        meta_input_layout: (0..bases.len()).map(|b| b * classes).collect(),
        n_features: dataset.n_features(),
        n_classes: classes,
    })
}

impl StackingModel {
    /// Concatenated base probability vectors for `row`.
    pub fn meta_features(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.n_features {
            return Err(Error::SchemaMismatch(format!(
                "row has {} features, stacking model expects {}",
                row.len(),
                self.n_features
            )));
        }
        let mut out = vec![0.0; self.bases.len() * self.n_classes];
        for (base, &offset) in self.bases.iter().zip(&self.meta_input_layout) {
            let (_, p) = base.predict(row)?;
            if p.len() != self.n_classes {
                return Err(Error::Invariant(format!(
                    "base model produced {} probabilities for {} classes",
                    p.len(),
                    self.n_classes
                )));
            }
            out[offset..offset + p.len()].copy_from_slice(&p);
        }
        Ok(out)
    }

    pub fn predict(&self, row: &[f64]) -> Result<(usize, Vec<f64>)> {
        self.meta.predict(&self.meta_features(row)?)
    }

    /// Mean of the base models' non-zero importance vectors, renormalized.
    pub fn feature_importance(&self) -> Vec<f64> {
        let vectors: Vec<Vec<f64>> = self.bases.iter().map(|b| b.feature_importance()).collect();
        crate::select::mean_importance(&vectors).unwrap_or_else(|_| vec![0.0; self.n_features])
    }
}

pub fn predict_stacking(model: &StackingModel, row: &[f64]) -> Result<(usize, Vec<f64>)> {
    model.predict(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cart::TreeParams;
    use crate::model::ModelKind;

    fn toy() -> Dataset {
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let c = i % 3;
            values.extend([c as f64 + 0.01 * (i / 3) as f64, (i % 7) as f64]);
            labels.push(c);
        }
        Dataset::new(
            FeatureSchema::numeric(["a", "b"]).unwrap(),
            values,
            labels,
            vec!["n".into(), "x".into(), "y".into()],
        )
        .unwrap()
    }

    fn small(kind: ModelKind) -> ModelSpec {
        ModelSpec::default_for(kind).with_trees(5)
    }

    #[test]
    fn meta_width_and_block_sums() {
        let d = toy();
        let bases = [small(ModelKind::Dt), small(ModelKind::Boost)];
        let (meta, trace) = generate_oof_features_traced(&d, &bases, 5, 1).unwrap();
        assert_eq!(meta.n_features(), 6);
        assert_eq!(meta.labels(), d.labels());
        for row in meta.rows() {
            for block in row.chunks(3) {
                assert!((block.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert!(trace.is_clean(d.n_rows(), 2));
    }

    #[test]
    fn perfect_base_gives_one_hot_blocks() {
        let d = toy();
        let bases = [
            ModelSpec::Dt(TreeParams::unbounded()),
            ModelSpec::Dt(TreeParams::unbounded()),
        ];
        let meta = generate_oof_features(&d, &bases, 5, 2).unwrap();
        for (i, row) in meta.rows().enumerate() {
            let mut expect = vec![0.0; 3];
            expect[d.labels()[i]] = 1.0;
            assert_eq!(&row[..3], expect.as_slice());
        }
    }

    #[test]
    fn stacking_fits_toy_data_and_composes() {
        let d = toy();
        let bases = vec![small(ModelKind::Dt), small(ModelKind::Rf), small(ModelKind::Et)];
        let m = fit_stacking(&d, &bases, &small(ModelKind::Rf), 5, 3).unwrap();
        for (i, row) in d.rows().enumerate() {
            let (c, p) = m.predict(row).unwrap();
            assert_eq!(c, d.labels()[i]);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(m.meta.predict(&m.meta_features(row).unwrap()).unwrap(), (c, p));
        }
        let again = fit_stacking(&d, &bases, &small(ModelKind::Rf), 5, 3).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn single_base_rejected_and_errors_name_spec() {
        let d = toy();
        assert!(fit_stacking(&d, &[small(ModelKind::Dt)], &small(ModelKind::Dt), 5, 0).is_err());
        let bad = ModelSpec::Dt(TreeParams {
            max_depth: 0,
            ..TreeParams::default()
        });
        let err = generate_oof_features(&d, &[bad], 3, 0).unwrap_err();
        assert!(err.to_string().contains("dt(D=0)"), "{err}");
    }

    #[test]
    fn single_class_is_constant() {
        let d = Dataset::new(
            FeatureSchema::numeric(["a"]).unwrap(),
            (0..10).map(f64::from).collect(),
            vec![0; 10],
            vec!["only".into()],
        )
        .unwrap();
        let bases = vec![small(ModelKind::Dt), small(ModelKind::Rf)];
        let m = fit_stacking(&d, &bases, &small(ModelKind::Dt), 2, 0).unwrap();
        assert!(d.rows().all(|r| m.predict(r).unwrap().0 == 0));
    }
}
