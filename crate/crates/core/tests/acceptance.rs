//! Acceptance checks. Prints one `PASS`, `FAIL` or `SKIP` line per criterion
//! and exits non-zero when any criterion fails.
//!
//! Self-contained criteria always run. Criteria that need the public
//! captures run when their directory is given:
//!
//! * `TREEGUARD_CAN_DIR`: the car-hacking captures (`DoS_dataset.csv`,
//!   `Fuzzy_dataset.csv`, `gear_dataset.csv`, `RPM_dataset.csv`).
//! * `TREEGUARD_CICIDS_DIR`: the CICIDS2017 flow CSVs.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treeguard_core::boost::{fit_boosted_traced, leaf_weight, split_gain, GradStats, RegNode};
use treeguard_core::data::stratified_sample_indices;
use treeguard_core::ingest::{
    can_label_hint, consolidate_labels, encode_can_features, parse_can_csv, parse_flow_csv, FlowParseOptions,
    FlowTable, DEFAULT_MALFORMED_TOLERANCE,
};
use treeguard_core::select::{importance_report, importance_specs, rank_features, select_by_threshold};
use treeguard_core::stack::generate_oof_features_traced;
use treeguard_core::synth::{generate_can_frames, SynthMix};
use treeguard_core::*;

// Tolerances and budgets.
const IMPURITY_TOL: f64 = 1e-12;
const GAIN_TOL: f64 = 1e-9;
const LOSS_SLACK: f64 = 1e-12;
const SMOTE_RESIDUAL: f64 = 1e-9;
const FS_THRESHOLD: f64 = 0.9;
const METRIC_TOL: f64 = 1e-3;
const SYNTH_MIN_ACC: f64 = 0.99;
const SYNTH_MAX_FAR: f64 = 0.01;
const SYNTH_BUDGET: Duration = Duration::from_secs(5 * 60);
const CAN_MIN_ACC: f64 = 0.999;
const CAN_MIN_DR: f64 = 0.999;
const CAN_MAX_FAR: f64 = 0.0005;
const CAN_MIN_F1: f64 = 0.999;
const CAN_STACK_MIN_ACC: f64 = 0.9995;
const CAN_BUDGET: Duration = Duration::from_secs(10 * 60);
const CAN_FS_MAX_DROP: f64 = 0.001;
const CAN_FS_MIN_SPEEDUP: f64 = 2.0;
const CIC_MIN_ACC: f64 = 0.99;
const CIC_MAX_FAR: f64 = 0.005;
const CIC_STACK_MIN_ACC: f64 = 0.99;
const CIC_BUDGET: Duration = Duration::from_secs(30 * 60);
const CIC_FS_MIN: usize = 25;
const CIC_FS_MAX: usize = 50;
const CIC_FS_MAX_DROP: f64 = 0.005;
const WORKERS: usize = 8;

struct Report {
    failed: usize,
}

impl Report {
    fn check(&mut self, name: &str, ok: bool, detail: impl AsRef<str>) {
        if ok {
            println!("PASS  {name}: {}", detail.as_ref());
        } else {
            self.failed += 1;
            println!("FAIL  {name}: {}", detail.as_ref());
        }
    }

    fn skip(&self, name: &str, why: &str) {
        println!("SKIP  {name}: {why}");
    }

    fn run(&mut self, name: &str, f: impl FnOnce() -> std::result::Result<(bool, String), String>) {
        let start = Instant::now();
        match f() {
            Ok((ok, detail)) => self.check(name, ok, format!("{detail} [{:.1}s]", start.elapsed().as_secs_f64())),
            Err(e) => self.check(name, false, format!("error: {e}")),
        }
    }
}

type Outcome = std::result::Result<(bool, String), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_dataset(r: &mut ChaCha8Rng, n: usize, p: usize, k: usize, levels: u32) -> Dataset {
    let values = (0..n * p).map(|_| f64::from(r.gen_range(0..levels))).collect();
    let labels = (0..n).map(|_| r.gen_range(0..k)).collect();
    Dataset::new(
        FeatureSchema::numeric((0..p).map(|i| format!("f{i}"))).unwrap(),
        values,
        labels,
        (0..k).map(|i| format!("c{i}")).collect(),
    )
    .unwrap()
}

// ---------------------------------------------------------------- CART ----

fn oracle_gini(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    1.0 - counts.iter().map(|&c| (c as f64 / total as f64).powi(2)).sum::<f64>()
}

fn oracle_entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            p * p.log2()
        })
        .sum::<f64>()
}

/// Exhaustive (feature, midpoint) enumeration with counts recomputed from
/// scratch for every candidate.
fn oracle_split(d: &Dataset, params: &TreeParams) -> Option<(usize, f64)> {
    let imp = |c: &[usize]| match params.criterion {
        Criterion::Gini => oracle_gini(c),
        Criterion::Entropy => oracle_entropy(c),
    };
    let k = d.n_classes();
    let n = d.n_rows();
    let mut all = vec![0usize; k];
    d.labels().iter().for_each(|&l| all[l] += 1);
    let parent = imp(&all);
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..d.n_features() {
        let mut vals: Vec<f64> = (0..n).map(|i| d.value(i, f)).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let mut left = vec![0usize; k];
            let mut right = vec![0usize; k];
            for i in 0..n {
                if d.value(i, f) <= t {
                    left[d.labels()[i]] += 1;
                } else {
                    right[d.labels()[i]] += 1;
                }
            }
            let (nl, nr): (usize, usize) = (left.iter().sum(), right.iter().sum());
            if nl < params.min_samples_leaf || nr < params.min_samples_leaf {
                continue;
            }
            let child = nl as f64 / n as f64 * imp(&left) + nr as f64 / n as f64 * imp(&right);
            let dec = parent - child;
            if dec <= 1e-12 {
                continue;
            }
            if best.is_none_or(|(_, _, b)| dec > b + 1e-12) {
                best = Some((f, t, dec));
            }
        }
    }
    best.map(|(f, t, _)| (f, t))
}

fn cart_oracle() -> Outcome {
    let mut r = rng(1);
    let mut agree = 0;
    let mut with_split = 0;
    for case in 0..200 {
        let n = r.gen_range(2..=50);
        let p = r.gen_range(1..=5);
        let k = r.gen_range(1..=3);
        let levels = r.gen_range(2..12);
        let d = random_dataset(&mut r, n, p, k, levels);
        let params = TreeParams {
            min_samples_leaf: r.gen_range(1..=3),
            criterion: if r.gen_bool(0.5) {
                Criterion::Gini
            } else {
                Criterion::Entropy
            },
            ..TreeParams::default()
        };
        let idx: Vec<usize> = (0..n).collect();
        let mut tree_rng = seed::rng(case, "oracle", 0);
        let got = best_split(&d, &idx, &params, &(0..p).collect::<Vec<_>>(), &mut tree_rng)
            .map(|s| (s.feature_index, s.threshold));
        let want = oracle_split(&d, &params);
        with_split += usize::from(want.is_some());
        if got == want {
            agree += 1;
        } else {
            return Ok((false, format!("case {case}: implementation {got:?}, oracle {want:?}")));
        }
    }
    Ok((
        agree == 200,
        format!("{agree}/200 datasets agree ({with_split} with a split)"),
    ))
}

fn impurity_units() -> Outcome {
    let cases: [(&str, Result<f64>, f64); 6] = [
        ("gini [5,5]", gini_impurity(&[5, 5]), 0.5),
        ("gini [3,1]", gini_impurity(&[3, 1]), 0.375),
        ("gini [10,0]", gini_impurity(&[10, 0]), 0.0),
        ("entropy [1,1]", entropy_impurity(&[1, 1]), 1.0),
        ("entropy [7,0,0]", entropy_impurity(&[7, 0, 0]), 0.0),
        ("gini [4]", gini_impurity(&[4]), 0.0),
    ];
    let mut worst = 0.0f64;
    for (name, got, want) in cases {
        let got = got.map_err(|e| format!("{name}: {e}"))?;
        worst = worst.max((got - want).abs());
    }
    let zero_rejected = gini_impurity(&[0, 0]).is_err() && entropy_impurity(&[0]).is_err();
    Ok((
        worst <= IMPURITY_TOL && zero_rejected,
        format!("max deviation {worst:e}, empty counts rejected: {zero_rejected}"),
    ))
}

// --------------------------------------------------------------- boost ----

fn boost_closed_form() -> Outcome {
    let d = Dataset::new(
        FeatureSchema::numeric(["x"]).unwrap(),
        vec![0.0, 1.0, 2.0, 3.0],
        vec![0, 0, 1, 1],
        vec!["a".into(), "b".into()],
    )
    .map_err(err)?;
    let params = BoostParams {
        n_rounds: 1,
        max_depth: 1,
        lambda: 0.0,
        learning_rate: 1.0,
        min_child_weight: 0.0,
        ..BoostParams::default()
    };
    let (m, _) = fit_boosted_traced(&d, &params).map_err(err)?;
    // p = 0.5 everywhere: class-0 tree sees g = -0.5 (rows 0,1), +0.5 (rows 2,3), h = 0.25
    // so each leaf holds G = -1 or +1 and H = 0.5, giving weights of +-2.
    let mut leaf_ok = true;
    for tree in &m.stages[0] {
        for node in &tree.nodes {
            if let RegNode::Leaf {
                weight,
                sum_grad,
                sum_hess,
                ..
            } = node
            {
                leaf_ok &= *weight == -sum_grad / sum_hess && weight.abs() == 2.0;
            }
        }
    }
    let leaves = m.stages[0][0].n_leaves() + m.stages[0][1].n_leaves();

    // Gain vs brute-force objective on nodes of fitted trees.
    let mut r = rng(2);
    let mut checked = 0;
    let mut worst = 0.0f64;
    let obj = |g: f64, h: f64, lambda: f64, gamma: f64| -0.5 * g * g / (h + lambda) + gamma;
    while checked < 100 {
        let n = r.gen_range(20..60);
        let data = random_dataset(&mut r, n, 3, 3, 10);
        let lambda = r.gen_range(0.0..3.0);
        let gamma = r.gen_range(0.0..0.2);
        let params = BoostParams {
            n_rounds: 3,
            max_depth: 3,
            lambda,
            gamma,
            min_child_weight: 0.0,
            ..BoostParams::default()
        };
        let (model, _) = fit_boosted_traced(&data, &params).map_err(err)?;
        for tree in model.stages.iter().flatten() {
            for node in &tree.nodes {
                let RegNode::Split {
                    left,
                    right,
                    gain,
                    sum_grad,
                    sum_hess,
                    ..
                } = node
                else {
                    continue;
                };
                let stats = |i: usize| match &tree.nodes[i] {
                    RegNode::Split { sum_grad, sum_hess, .. } | RegNode::Leaf { sum_grad, sum_hess, .. } => {
                        (*sum_grad, *sum_hess)
                    }
                };
                let (gl, hl) = stats(*left);
                let (gr, hr) = stats(*right);
                let brute = obj(*sum_grad, *sum_hess, lambda, gamma)
                    - (obj(gl, hl, lambda, gamma) + obj(gr, hr, lambda, gamma));
                let formula = split_gain(
                    GradStats { grad: gl, hess: hl },
                    GradStats { grad: gr, hess: hr },
                    lambda,
                    gamma,
                );
                worst = worst.max((brute - gain).abs()).max((brute - formula).abs());
                checked += 1;
            }
        }
    }
    let zero = leaf_weight(GradStats { grad: 0.0, hess: 2.0 }, 1.0) == 0.0;
    Ok((
        leaf_ok && leaves == 4 && worst <= GAIN_TOL && zero,
        format!("hand leaf weights exact: {leaf_ok}; gain vs objective difference max {worst:e} over {checked} nodes"),
    ))
}

fn boost_monotone() -> Outcome {
    let mut r = rng(3);
    let mut worst_rise = f64::NEG_INFINITY;
    for _ in 0..20 {
        let k = r.gen_range(2..=4);
        let (n, p) = (r.gen_range(30..120), r.gen_range(1..=4));
        let d = random_dataset(&mut r, n, p, k, 8);
        let params = BoostParams {
            n_rounds: 30,
            max_depth: r.gen_range(1..=4),
            learning_rate: 0.3,
            ..BoostParams::default()
        };
        let (_, hist) = fit_boosted_traced(&d, &params).map_err(err)?;
        for w in hist.windows(2) {
            worst_rise = worst_rise.max(w[1] - w[0]);
        }
    }
    Ok((
        worst_rise <= LOSS_SLACK,
        format!("largest per-round loss change {worst_rise:e} over 20 datasets x 30 rounds"),
    ))
}

// -------------------------------------------------------------- SMOTE ----

fn point_segment_residual(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = a.iter().zip(b).map(|(a, b)| b - a).collect();
    let ax: Vec<f64> = a.iter().zip(x).map(|(a, x)| x - a).collect();
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    let t = if len2 == 0.0 {
        0.0
    } else {
        (ab.iter().zip(&ax).map(|(u, v)| u * v).sum::<f64>() / len2).clamp(0.0, 1.0)
    };
    ax.iter().zip(&ab).map(|(v, u)| (v - t * u).powi(2)).sum::<f64>().sqrt()
}

fn smote_geometry() -> Outcome {
    let mut r = rng(4);
    let p = 3;
    let k_nn = 5;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for i in 0..260 {
        let class = usize::from(i >= 200) + usize::from(i >= 240);
        for _ in 0..p {
            values.push(r.gen_range(0.0..1.0) + class as f64);
        }
        labels.push(class);
    }
    let d = Dataset::new(
        FeatureSchema::numeric(["a", "b", "c"]).unwrap(),
        values,
        labels,
        vec!["maj".into(), "mid".into(), "min".into()],
    )
    .map_err(err)?;
    // 560 new rows for class 1 and 440 for class 2: 1000 synthetic points.
    let plan = ResamplePlan {
        targets: BTreeMap::from([(1, 600), (2, 460)]),
        method: ResampleMethod::Smote,
        k_neighbors: k_nn,
        seed: 9,
    };
    let out = smote_oversample(&d, &plan).map_err(err)?;
    let counts = out.class_counts();
    let counts_ok = counts == vec![200, 600, 460];
    let originals_kept = (0..d.n_rows()).all(|i| out.row(i) == d.row(i) && out.labels()[i] == d.labels()[i]);
    // Independent neighbor lists by brute force.
    let members = |c: usize| -> Vec<usize> { (0..d.n_rows()).filter(|&i| d.labels()[i] == c).collect() };
    let knn = |m: &[usize], a: usize| -> Vec<usize> {
        let mut dist: Vec<(f64, usize)> = m
            .iter()
            .filter(|&&j| j != a)
            .map(|&j| {
                let s: f64 = d.row(a).iter().zip(d.row(j)).map(|(x, y)| (x - y).powi(2)).sum();
                (s, j)
            })
            .collect();
        dist.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        dist.truncate(k_nn);
        dist.into_iter().map(|(_, j)| j).collect()
    };
    let mut worst = 0.0f64;
    let mut synthetic = 0;
    for c in [1usize, 2] {
        let m = members(c);
        let neigh: Vec<(usize, Vec<usize>)> = m.iter().map(|&a| (a, knn(&m, a))).collect();
        for i in d.n_rows()..out.n_rows() {
            if out.labels()[i] != c {
                continue;
            }
            synthetic += 1;
            let x = out.row(i);
            let best = neigh
                .iter()
                .flat_map(|(a, ns)| ns.iter().map(move |n| (*a, *n)))
                .map(|(a, n)| point_segment_residual(x, d.row(a), d.row(n)))
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(best);
        }
    }
    Ok((
        counts_ok && originals_kept && synthetic == 1000 && worst < SMOTE_RESIDUAL,
        format!("{synthetic} synthetic points, max segment residual {worst:e}, counts {counts:?}"),
    ))
}

// ---------------------------------------------------- feature selection ----

/// Exact-enough prefix sums via a second compensated accumulator kept
/// independent of the library's.
fn kahan(values: &[f64]) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for &v in values {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

fn fs_rule() -> Outcome {
    let mut r = rng(5);
    let mut violations = 0;
    for _ in 0..100 {
        let p = r.gen_range(1..40);
        let mut v: Vec<f64> = (0..p)
            .map(|_| {
                if r.gen_bool(0.2) {
                    0.0
                } else {
                    -r.gen_range(1e-9f64..1.0).ln()
                }
            })
            .collect();
        if v.iter().all(|&x| x == 0.0) {
            v[0] = 1.0;
        }
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        let ranking = rank_features(&v);
        let selected = select_by_threshold(&v, &ranking, FS_THRESHOLD);
        let picked: Vec<f64> = selected.iter().map(|&i| v[i]).collect();
        let is_prefix = ranking.starts_with(&selected);
        let total = kahan(&picked);
        let without_last = kahan(&picked[..picked.len().saturating_sub(1)]);
        if !(is_prefix && total >= FS_THRESHOLD && without_last < FS_THRESHOLD) {
            violations += 1;
        }
    }
    let uniform = vec![0.1; 10];
    let nine = select_by_threshold(&uniform, &rank_features(&uniform), FS_THRESHOLD).len();
    let hand = select_by_threshold(&[0.5, 0.3, 0.15, 0.05], &[0, 1, 2, 3], FS_THRESHOLD);
    Ok((
        violations == 0 && nine == 9 && hand == vec![0, 1, 2],
        format!(
            "{violations} violations in 100 vectors; uniform-10 selects {nine}; [0.5,0.3,0.15,0.05] selects {hand:?}"
        ),
    ))
}

// ------------------------------------------------------------- metrics ----

fn metrics_hand() -> Outcome {
    let cm = ConfusionMatrix {
        k: 2,
        counts: vec![95, 5, 10, 90],
    };
    let m = compute_metrics(&cm, 0).map_err(err)?;
    let dr = m.detection_rate.unwrap_or(f64::NAN);
    let far = m.false_alarm_rate.unwrap_or(f64::NAN);
    let f1 = m.per_class[1].f1.unwrap_or(f64::NAN);
    let prec = m.per_class[1].precision.unwrap_or(f64::NAN);
    let ok = (dr - 0.90).abs() <= METRIC_TOL
        && (far - 0.05).abs() <= METRIC_TOL
        && (f1 - 0.923).abs() <= METRIC_TOL
        && (prec - 0.947).abs() <= METRIC_TOL
        && m.accuracy == 1.0 - 15.0 / 200.0;
    Ok((
        ok,
        format!("DR {dr:.4}, FAR {far:.4}, attack precision {prec:.4}, attack F1 {f1:.4}"),
    ))
}

// --------------------------------------------------------- determinism ----

fn synth_dataset(n: usize, seed: u64) -> Result<(Dataset, NormalizationParams)> {
    let frames = generate_can_frames(n, SynthMix::default(), seed);
    let raw = encode_can_features(&frames, CanEncoding::Numeric, &LabelMapSpec::can())?;
    let norm = compute_min_max(&raw)?;
    Ok((normalize(&raw, &norm)?, norm))
}

fn artifact_for(spec: &ModelSpec, data: &Dataset, norm: &NormalizationParams) -> Result<ModelArtifact> {
    let model = spec.fit(data)?;
    ModelArtifact::new(
        model,
        data.schema().clone(),
        Some(norm.clone()),
        data.label_names().to_vec(),
        None,
        TrainingMetadata {
            seed: spec.seed(),
            spec: spec.clone(),
            train_time_s: None,
            timestamp: None,
        },
    )
}

fn determinism() -> Outcome {
    let (data, norm) = synth_dataset(3000, 6).map_err(err)?;
    let specs = [
        ModelSpec::default_for(ModelKind::Rf).with_trees(50).with_seed(11),
        ModelSpec::default_for(ModelKind::Boost).with_trees(20).with_seed(11),
    ];
    let mut details = Vec::new();
    let mut ok = true;
    for spec in &specs {
        let mut texts = Vec::new();
        for workers in [1, 2, 8] {
            let a = with_threads(workers, || artifact_for(spec, &data, &norm))
                .map_err(err)?
                .map_err(err)?;
            texts.push(a.to_canonical_string().map_err(err)?);
        }
        let same = texts.windows(2).all(|w| w[0] == w[1]);
        ok &= same;
        details.push(format!(
            "{}: {} bytes, identical across 1/2/8 workers: {same}",
            spec.describe(),
            texts[0].len()
        ));
    }
    Ok((ok, details.join("; ")))
}

fn persistence() -> Outcome {
    let (data, norm) = synth_dataset(2000, 7).map_err(err)?;
    let dir = tempfile::tempdir().map_err(err)?;
    let mut r = rng(8);
    let rows: Vec<Vec<f64>> = (0..10_000)
        .map(|_| (0..data.n_features()).map(|_| r.gen_range(-0.2..1.2)).collect())
        .collect();
    let specs = [
        ModelSpec::default_for(ModelKind::Rf).with_trees(30),
        ModelSpec::default_for(ModelKind::Boost).with_trees(10),
        ModelSpec::default_for(ModelKind::Stacking).with_trees(5),
    ];
    let mut ok = true;
    let mut details = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let a = artifact_for(spec, &data, &norm).map_err(err)?;
        let first = dir.path().join(format!("m{i}.json"));
        let second = dir.path().join(format!("m{i}-again.json"));
        save_model(&a, &first).map_err(err)?;
        let loaded = load_model(&first).map_err(err)?;
        save_model(&loaded, &second).map_err(err)?;
        let bytes_same = fs::read(&first).map_err(err)? == fs::read(&second).map_err(err)?;
        let mut mismatches = 0;
        for row in &rows {
            let (c1, p1) = a.model.predict(row).map_err(err)?;
            let (c2, p2) = loaded.model.predict(row).map_err(err)?;
            let bits = |p: &[f64]| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            if c1 != c2 || bits(&p1) != bits(&p2) {
                mismatches += 1;
            }
        }
        ok &= bytes_same && mismatches == 0;
        details.push(format!(
            "{}: bytes identical {bytes_same}, {mismatches} mismatches",
            spec.kind()
        ));
    }
    Ok((ok, format!("{} on 10000 random rows", details.join("; "))))
}

fn oof_hygiene() -> Outcome {
    let mut r = rng(10);
    let mut dirty = 0;
    let kinds = [ModelKind::Dt, ModelKind::Rf, ModelKind::Et, ModelKind::Boost];
    for run in 0..50 {
        let k_classes = r.gen_range(2..=4);
        let (n, p) = (r.gen_range(20..80), r.gen_range(1..=4));
        let d = random_dataset(&mut r, n, p, k_classes, 10);
        let folds = r.gen_range(2..=5);
        let n_bases = r.gen_range(2..=3);
        let bases: Vec<ModelSpec> = (0..n_bases)
            .map(|_| {
                ModelSpec::default_for(kinds[r.gen_range(0..4)])
                    .with_trees(3)
                    .with_depth(3)
                    .with_seed(run)
            })
            .collect();
        let (_, trace) = generate_oof_features_traced(&d, &bases, folds, run).map_err(err)?;
        let mut scored = vec![0usize; d.n_rows() * n_bases];
        for (base, _, trained, rows) in &trace.entries {
            if rows.iter().any(|r| trained.contains(r)) {
                dirty += 1;
            }
            if trained.len() + rows.len() != d.n_rows() {
                dirty += 1;
            }
            rows.iter().for_each(|&row| scored[base * d.n_rows() + row] += 1);
        }
        if scored.iter().any(|&c| c != 1) {
            dirty += 1;
        }
    }
    Ok((dirty == 0, format!("{dirty} leaks or coverage gaps over 50 runs")))
}

// ------------------------------------------------------- synthetic e2e ----

fn synthetic_end_to_end() -> Outcome {
    let start = Instant::now();
    let (data, _) = synth_dataset(50_000, 12).map_err(err)?;
    let spec = ModelSpec::default_for(ModelKind::Rf)
        .with_trees(200)
        .with_depth(8)
        .with_seed(12);
    let opts = CvOptions {
        k: 5,
        seed: 12,
        ..CvOptions::default()
    };
    let report = with_threads(WORKERS, || cross_validate(&spec, &data, &opts))
        .map_err(err)?
        .map_err(err)?;
    let elapsed = start.elapsed();
    let acc = report.aggregate.accuracy;
    let far = report.aggregate.false_alarm_rate.unwrap_or(f64::NAN);
    Ok((
        acc >= SYNTH_MIN_ACC && far <= SYNTH_MAX_FAR && elapsed < SYNTH_BUDGET,
        format!(
            "50000 frames, RF T=200 D=8, 5-fold: Acc {:.4}, FAR {:.5}, {:.1}s with {WORKERS} workers",
            acc,
            far,
            elapsed.as_secs_f64()
        ),
    ))
}

// ----------------------------------------------------------- data-gated ----

fn env_dir(var: &str) -> Option<PathBuf> {
    std::env::var_os(var).map(PathBuf::from).filter(|p| p.is_dir())
}

fn files_with_ext(dir: &Path, ext: &str) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)))
        .collect();
    files.sort();
    Ok(files)
}

/// 1% stratified (per file and raw label) sample of the CAN captures.
fn load_can_sample(dir: &Path, fraction: f64) -> std::result::Result<Dataset, String> {
    let mut frames = Vec::new();
    for path in files_with_ext(dir, "csv").map_err(err)? {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let hint = can_label_hint(&name);
        let file = fs::File::open(&path).map_err(err)?;
        let parsed = parse_can_csv(BufReader::new(file), hint, DEFAULT_MALFORMED_TOLERANCE)
            .map_err(|e| format!("{name}: {e}"))?;
        let mut names: Vec<String> = Vec::new();
        let labels: Vec<usize> = parsed
            .records
            .iter()
            .map(|f| match names.iter().position(|n| *n == f.label) {
                Some(i) => i,
                None => {
                    names.push(f.label.clone());
                    names.len() - 1
                }
            })
            .collect();
        let keep = stratified_sample_indices(&labels, names.len(), fraction, 21).map_err(err)?;
        frames.extend(keep.into_iter().map(|i| parsed.records[i].clone()));
    }
    if frames.is_empty() {
        return Err("no CAN capture files found".into());
    }
    let raw = encode_can_features(&frames, CanEncoding::Numeric, &LabelMapSpec::can()).map_err(err)?;
    let norm = compute_min_max(&raw).map_err(err)?;
    normalize(&raw, &norm).map_err(err)
}

fn load_cicids_sample(dir: &Path, fraction: f64) -> std::result::Result<Dataset, String> {
    let mut table = FlowTable {
        feature_names: Vec::new(),
        records: Vec::new(),
    };
    for path in files_with_ext(dir, "csv").map_err(err)? {
        let file = fs::File::open(&path).map_err(err)?;
        let t = parse_flow_csv(BufReader::new(file), &FlowParseOptions::default())
            .map_err(|e| format!("{}: {e}", path.display()))?;
        let mut names: Vec<String> = Vec::new();
        let labels: Vec<usize> = t
            .records
            .iter()
            .map(|f| match names.iter().position(|n| *n == f.raw_label) {
                Some(i) => i,
                None => {
                    names.push(f.raw_label.clone());
                    names.len() - 1
                }
            })
            .collect();
        let keep = stratified_sample_indices(&labels, names.len(), fraction, 22).map_err(err)?;
        if table.feature_names.is_empty() {
            table.feature_names = t.feature_names.clone();
        }
        table.records.extend(keep.into_iter().map(|i| t.records[i].clone()));
    }
    let raw = consolidate_labels(&table, &LabelMapSpec::cicids2017()).map_err(err)?;
    let (clean, _) = drop_invalid_rows(raw).map_err(err)?;
    let norm = compute_min_max(&clean).map_err(err)?;
    normalize(&clean, &norm).map_err(err)
}

fn cv(spec: &ModelSpec, data: &Dataset, features: FeatureMode) -> std::result::Result<CvReport, String> {
    let opts = CvOptions {
        k: 5,
        seed: 0,
        features,
        ..CvOptions::default()
    };
    with_threads(WORKERS, || cross_validate(spec, data, &opts))
        .map_err(err)?
        .map_err(err)
}

fn can_tree_spec(kind: ModelKind) -> ModelSpec {
    ModelSpec::default_for(kind)
        .with_trees(200)
        .with_depth(8)
        .map_tree_params(&|p| {
            p.min_samples_split = 8;
            p.min_samples_leaf = 3;
        })
}

fn can_reproduction(data: &Dataset) -> Outcome {
    let start = Instant::now();
    let rf = cv(&can_tree_spec(ModelKind::Rf), data, FeatureMode::All)?;
    let m = &rf.aggregate;
    let dr = m.detection_rate.unwrap_or(0.0);
    let far = m.false_alarm_rate.unwrap_or(1.0);
    let stacking = ModelSpec::Stacking(StackingSpec {
        bases: vec![
            can_tree_spec(ModelKind::Dt),
            can_tree_spec(ModelKind::Rf),
            can_tree_spec(ModelKind::Et),
        ],
        meta: Box::new(can_tree_spec(ModelKind::Rf)),
        folds: 5,
        seed: 0,
    });
    let st = cv(&stacking, data, FeatureMode::All)?;
    let elapsed = start.elapsed();
    let ok = m.accuracy >= CAN_MIN_ACC
        && dr >= CAN_MIN_DR
        && far <= CAN_MAX_FAR
        && m.f1_weighted >= CAN_MIN_F1
        && st.aggregate.accuracy >= CAN_STACK_MIN_ACC
        && elapsed < CAN_BUDGET;
    Ok((
        ok,
        format!(
            "{} rows: RF Acc {:.5} DR {dr:.5} FAR {far:.6} F1 {:.5}; stacking Acc {:.5}; {:.0}s",
            data.n_rows(),
            m.accuracy,
            m.f1_weighted,
            st.aggregate.accuracy,
            elapsed.as_secs_f64()
        ),
    ))
}

fn can_feature_selection(data: &Dataset) -> Outcome {
    let report = importance_report(data, &importance_specs(200, 8, 0)).map_err(err)?;
    let top4: Vec<&str> = report.ranking[..4.min(report.ranking.len())]
        .iter()
        .map(|&i| report.feature_names[i].as_str())
        .collect();
    let data_hits = ["DATA[1]", "DATA[3]", "DATA[5]"]
        .iter()
        .filter(|n| top4.contains(n))
        .count();
    let names_ok = top4.contains(&"CAN ID") && data_hits >= 2;
    let top_idx: Vec<usize> = report.ranking[..4.min(report.ranking.len())].to_vec();
    let spec = can_tree_spec(ModelKind::Rf);
    let full = cv(&spec, data, FeatureMode::All)?;
    let reduced = cv(&spec, data, FeatureMode::Fixed(top_idx))?;
    let drop = full.aggregate.accuracy - reduced.aggregate.accuracy;
    let speedup = full.aggregate.train_time_s / reduced.aggregate.train_time_s.max(1e-9);
    Ok((
        names_ok && drop <= CAN_FS_MAX_DROP && speedup >= CAN_FS_MIN_SPEEDUP,
        format!(
            "top-4 {top4:?}; accuracy drop {:.5}; training speed-up {speedup:.2}x",
            drop
        ),
    ))
}

fn can_grid(data: &Dataset) -> Outcome {
    let opts = CvOptions {
        k: 5,
        ..CvOptions::default()
    };
    let result = with_threads(WORKERS, || {
        grid_search(ModelKind::Rf, data, &[50], &[2, 4, 6, 8, 10, 12, 14], &opts)
    })
    .map_err(err)?
    .map_err(err)?;
    let d = result.chosen.1;
    let trace: Vec<String> = result
        .points
        .iter()
        .map(|p| format!("D={}:{:.5}", p.depth, p.accuracy))
        .collect();
    Ok((
        (6..=10).contains(&d) && result.stop_reason == StopReason::AccuracyDrop,
        format!("chosen D={d}, stop {:?}; {}", result.stop_reason, trace.join(" ")),
    ))
}

fn cicids_reproduction(data: &Dataset) -> Outcome {
    let start = Instant::now();
    let boost = cv(&ModelSpec::default_for(ModelKind::Boost), data, FeatureMode::All)?;
    let stacking = ModelSpec::Stacking(StackingSpec {
        bases: vec![
            ModelSpec::default_for(ModelKind::Dt),
            ModelSpec::default_for(ModelKind::Rf),
            ModelSpec::default_for(ModelKind::Boost),
        ],
        meta: Box::new(ModelSpec::default_for(ModelKind::Boost)),
        folds: 5,
        seed: 0,
    });
    let st = cv(&stacking, data, FeatureMode::All)?;
    let elapsed = start.elapsed();
    let far = boost.aggregate.false_alarm_rate.unwrap_or(1.0);
    Ok((
        boost.aggregate.accuracy >= CIC_MIN_ACC
            && far <= CIC_MAX_FAR
            && st.aggregate.accuracy >= CIC_STACK_MIN_ACC
            && elapsed < CIC_BUDGET,
        format!(
            "{} rows: boosted Acc {:.5} FAR {far:.5}; stacking Acc {:.5}; {:.0}s",
            data.n_rows(),
            boost.aggregate.accuracy,
            st.aggregate.accuracy,
            elapsed.as_secs_f64()
        ),
    ))
}

fn cicids_feature_selection(data: &Dataset) -> Outcome {
    let specs = importance_specs(200, 8, 0);
    let report = importance_report(data, &specs).map_err(err)?;
    let n_sel = report.selected.len();
    let spec = ModelSpec::default_for(ModelKind::Boost);
    let full = cv(&spec, data, FeatureMode::All)?;
    let reduced = cv(&spec, data, FeatureMode::Fixed(report.selected.clone()))?;
    let drop = full.aggregate.accuracy - reduced.aggregate.accuracy;
    let port = data
        .schema()
        .names()
        .iter()
        .position(|n| n.trim() == "Destination Port")
        .ok_or("no Destination Port column")?;
    let normal = data.normal_class();
    let mut per_attack = Vec::new();
    let mut port_ok = true;
    for attack in ["Brute-Force", "Botnet"] {
        let Some(class) = data.class_id(attack) else {
            port_ok = false;
            per_attack.push(format!("{attack}: absent"));
            continue;
        };
        let ranked = per_attack_importance(data, class, normal, &specs).map_err(err)?;
        let top3: Vec<usize> = ranked.iter().take(3).map(|&(f, _)| f).collect();
        port_ok &= top3.contains(&port);
        per_attack.push(format!(
            "{attack}: {:?}",
            top3.iter()
                .map(|&f| data.schema().names()[f].as_str())
                .collect::<Vec<_>>()
        ));
    }
    Ok((
        (CIC_FS_MIN..=CIC_FS_MAX).contains(&n_sel) && drop <= CIC_FS_MAX_DROP && port_ok,
        format!(
            "{n_sel} of {} selected; accuracy drop {drop:.5}; {}",
            data.n_features(),
            per_attack.join("; ")
        ),
    ))
}

fn main() -> ExitCode {
    let mut report = Report { failed: 0 };
    report.run("cart-oracle-equivalence", cart_oracle);
    report.run("impurity-unit-values", impurity_units);
    report.run("boost-leaf-weight-closed-form", boost_closed_form);
    report.run("boost-loss-monotone", boost_monotone);
    report.run("smote-geometry", smote_geometry);
    report.run("feature-selection-rule", fs_rule);
    report.run("metrics-hand-check", metrics_hand);
    report.run("determinism-under-parallelism", determinism);
    report.run("persistence-round-trip", persistence);
    report.run("oof-hygiene", oof_hygiene);
    report.run("synthetic-can-end-to-end", synthetic_end_to_end);

    const CAN_NAMES: [&str; 3] = ["can-1pct-reproduction", "can-feature-selection", "can-grid-search"];
    match env_dir("TREEGUARD_CAN_DIR") {
        None => CAN_NAMES
            .iter()
            .for_each(|n| report.skip(n, "set TREEGUARD_CAN_DIR to the car-hacking captures")),
        Some(dir) => match load_can_sample(&dir, 0.01) {
            Err(e) => CAN_NAMES
                .iter()
                .for_each(|n| report.check(n, false, format!("loading data: {e}"))),
            Ok(data) => {
                report.run(CAN_NAMES[0], || can_reproduction(&data));
                report.run(CAN_NAMES[1], || can_feature_selection(&data));
                report.run(CAN_NAMES[2], || can_grid(&data));
            }
        },
    }
    const CIC_NAMES: [&str; 2] = ["cicids-10pct-reproduction", "cicids-feature-selection"];
    match env_dir("TREEGUARD_CICIDS_DIR") {
        None => CIC_NAMES
            .iter()
            .for_each(|n| report.skip(n, "set TREEGUARD_CICIDS_DIR to the CICIDS2017 flow CSVs")),
        Some(dir) => match load_cicids_sample(&dir, 0.1) {
            Err(e) => CIC_NAMES
                .iter()
                .for_each(|n| report.check(n, false, format!("loading data: {e}"))),
            Ok(data) => {
                report.run(CIC_NAMES[0], || cicids_reproduction(&data));
                report.run(CIC_NAMES[1], || cicids_feature_selection(&data));
            }
        },
    }

    if report.failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", report.failed);
        ExitCode::FAILURE
    }
}
