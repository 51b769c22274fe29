//! Subcommand implementations. Reports go to standard output, progress and
//! warnings to the log (standard error).

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write as _};

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context as _;
use rayon::prelude::*;

use treeguard_core::eval::{format_report_table, grid_search_with, ClassMetrics};
use treeguard_core::ingest::{
    can_label_hint, consolidate_labels, encode_can_features, parse_can_csv, parse_flow_csv, FlowParseOptions, FlowTable,
};
use treeguard_core::select::{importance_report, importance_specs, per_attack_importance, select_features};
use treeguard_core::synth::{format_can_line, generate_can_frames, SynthMix, SYNTH_LABELS};
use treeguard_core::{
    compute_metrics, confusion_matrix, cross_validate, drop_invalid_rows, normalize, resample, save_model, seed,
    select_base_and_meta, stratified_sample, CanEncoding, CanFrameRecord, Criterion, CvOptions, Dataset, Error,
    FeatureMode, LabelMapSpec, MetricsReport, ModelArtifact, ModelKind, ModelSpec, ResampleMethod, ResampleSpec,
    SingularReport, StackingSpec, TrainingMetadata,
};

use crate::args::{
    CriterionArg, DetectArgs, EncodingArg, EvaluateArgs, GridArgs, ModelArgs, OversampleArg, PrepareArgs, Profile,
    ResampleArgs, SelectArgs, SelectionArgs, SynthArgs, TrainArgs,
};
use crate::detect::detect_stream;
use crate::prepared::{read_prepared, write_prepared, PreparedMeta, PREPARED_VERSION};

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! outln {
    ($($arg:tt)*) => {
        writeln!(io::stdout(), $($arg)*)?
    };
}

/// `print!` counterpart of [`outln!`].
macro_rules! out {
    ($($arg:tt)*) => {
        write!(io::stdout(), $($arg)*)?
    };
}

fn input_error(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidParam(msg.into()).into()
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

/// Model spec from command-line hyperparameters.
pub fn build_spec(args: &ModelArgs, seed: u64) -> anyhow::Result<ModelSpec> {
    let mut spec = match args.model {
        ModelKind::Stacking => {
            let bases = if args.bases.is_empty() {
                vec![ModelKind::Dt, ModelKind::Rf, ModelKind::Et]
            } else {
                args.bases.clone()
            };
            let meta = args.meta.unwrap_or(ModelKind::Rf);
            if bases.iter().chain([&meta]).any(|&k| k == ModelKind::Stacking) {
                return Err(input_error("stacking cannot nest another stacking model"));
            }
            ModelSpec::Stacking(StackingSpec {
                bases: bases.into_iter().map(ModelSpec::default_for).collect(),
                meta: Box::new(ModelSpec::default_for(meta)),
                folds: args.stack_folds,
                seed: 0,
            })
        }
        kind => {
            if !args.bases.is_empty() || args.meta.is_some() {
                return Err(input_error("--bases and --meta only apply to --model stacking"));
            }
            ModelSpec::default_for(kind)
        }
    };
    if let Some(t) = args.trees {
        spec = spec.with_trees(t);
    }
    if let Some(d) = args.depth {
        spec = spec.with_depth(d);
    }
    spec = spec.map_tree_params(&|p| {
        if let Some(v) = args.min_split {
            p.min_samples_split = v;
        }
        if let Some(v) = args.min_leaf {
            p.min_samples_leaf = v;
        }
        if let Some(c) = args.criterion {
            p.criterion = match c {
                CriterionArg::Gini => Criterion::Gini,
                CriterionArg::Entropy => Criterion::Entropy,
            };
        }
    });
    Ok(spec.with_seed(seed))
}

fn resample_spec(args: &ResampleArgs) -> anyhow::Result<Option<ResampleSpec>> {
    let method = match args.oversample {
        OversampleArg::None => return Ok(None),
        OversampleArg::Random => ResampleMethod::Random,
        OversampleArg::Smote => ResampleMethod::Smote,
    };
    if !(args.target_ratio > 0.0 && args.target_ratio <= 1.0) {
        return Err(input_error(format!(
            "--target-ratio {} must lie in (0, 1]",
            args.target_ratio
        )));
    }
    Ok(Some(ResampleSpec {
        k_neighbors: args.smote_k,
        ..ResampleSpec::new(method, args.target_ratio)
    }))
}

fn print_class_counts(label_names: &[String], counts: &[usize]) -> anyhow::Result<()> {
    let width = label_names.iter().map(String::len).max().unwrap_or(5).max(5);
    outln!("{:<width$}  {:>12}", "class", "rows");
    for (name, n) in label_names.iter().zip(counts) {
        outln!("{name:<width$}  {n:>12}");
    }
    outln!("{:<width$}  {:>12}", "total", counts.iter().sum::<usize>());
    Ok(())
}

// ---------------------------------------------------------------- prepare

fn read_can_inputs(args: &PrepareArgs, labels: &LabelMapSpec) -> anyhow::Result<(Dataset, usize)> {
    let mut records: Vec<CanFrameRecord> = Vec::new();
    let mut malformed = 0;
    for path in &args.inputs {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let hint = can_label_hint(&name);
        let out = parse_can_csv(open(path)?, hint, args.malformed_tolerance)
            .with_context(|| format!("parsing {}", path.display()))?;
        log::info!(
            "{}: {} frames, {} malformed lines skipped",
            path.display(),
            out.records.len(),
            out.malformed
        );
        malformed += out.malformed;
        records.extend(out.records);
    }
    let encoding = match args.encoding {
        EncodingArg::Numeric => CanEncoding::Numeric,
        EncodingArg::OneHot => CanEncoding::OneHotId,
    };
    Ok((encode_can_features(&records, encoding, labels)?, malformed))
}

fn read_flow_inputs(args: &PrepareArgs, labels: &LabelMapSpec) -> anyhow::Result<Dataset> {
    let opts = FlowParseOptions {
        label_column: args.label_column.clone(),
        expected_features: if args.any_width {
            None
        } else {
            FlowParseOptions::default().expected_features
        },
    };
    let mut combined: Option<FlowTable> = None;
    for path in &args.inputs {
        let table = parse_flow_csv(open(path)?, &opts).with_context(|| format!("parsing {}", path.display()))?;
        log::info!("{}: {} rows", path.display(), table.records.len());
        match &mut combined {
            None => combined = Some(table),
            Some(all) => {
                if all.feature_names != table.feature_names {
                    let i = all
                        .feature_names
                        .iter()
                        .zip(&table.feature_names)
                        .position(|(a, b)| a != b);
                    return Err(Error::SchemaMismatch(format!(
                        "{}: columns differ from the first input{}",
                        path.display(),
                        i.map(|i| format!(" at feature {i} ({:?})", table.feature_names[i]))
                            .unwrap_or_default()
                    ))
                    .into());
                }
                all.records.extend(table.records);
            }
        }
    }
    let table = combined.ok_or_else(|| input_error("no input files"))?;
    Ok(consolidate_labels(&table, labels)?)
}

pub fn prepare(args: &PrepareArgs) -> anyhow::Result<()> {
    let labels = match &args.label_map {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            LabelMapSpec::parse(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => match args.profile {
            Profile::Can => LabelMapSpec::can(),
            Profile::Flow => LabelMapSpec::cicids2017(),
        },
    };
    let (dataset, malformed) = match args.profile {
        Profile::Can => read_can_inputs(args, &labels)?,
        Profile::Flow => (read_flow_inputs(args, &labels)?, 0),
    };
    let (mut dataset, removed) = drop_invalid_rows(dataset)?;
    if removed > 0 {
        log::info!("dropped {removed} rows with missing or infinite values");
    }
    if let Some(fraction) = args.sample_fraction {
        dataset = stratified_sample(&dataset, fraction, seed::derive(args.seed, "prepare.sample", 0))?;
        log::info!("kept a stratified {fraction} sample: {} rows", dataset.n_rows());
    }
    let counts = dataset.class_counts();
    if counts.iter().filter(|&&n| n > 0).count() < 2 {
        log::warn!("dataset holds a single class; models trained on it cannot detect anything");
    }
    let meta = PreparedMeta {
        format_version: PREPARED_VERSION,
        profile: args.profile,
        schema: dataset.schema().clone(),
        label_names: dataset.label_names().to_vec(),
        normalization: treeguard_core::compute_min_max(&dataset)?,
        class_counts: counts.clone(),
        removed_rows: removed,
        malformed_lines: malformed,
    };
    write_prepared(&args.output, &dataset, &meta)?;
    print_class_counts(dataset.label_names(), &counts)?;
    outln!(
        "{} rows x {} features -> {}",
        dataset.n_rows(),
        dataset.n_features(),
        args.output.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- train

fn load_normalized(path: &Path) -> anyhow::Result<(Dataset, Dataset, PreparedMeta)> {
    let (raw, meta) = read_prepared(path)?;
    let data = normalize(&raw, &meta.normalization)?;
    Ok((raw, data, meta))
}

fn fs_specs(sel: &SelectionArgs, seed: u64) -> Vec<ModelSpec> {
    importance_specs(sel.fs_trees, sel.fs_depth, seed)
}

pub fn train(args: &TrainArgs) -> anyhow::Result<()> {
    let spec = build_spec(&args.model, args.seed)?;
    let (_, mut data, meta) = load_normalized(&args.data)?;
    if let Some(rs) = resample_spec(&args.resample)? {
        let before = data.n_rows();
        data = resample(&data, &rs.plan(&data, seed::derive(args.seed, "train.resample", 0)))?;
        log::info!("oversampled {before} -> {} rows", data.n_rows());
    }
    let selected = if args.selection.feature_select {
        let specs = fs_specs(&args.selection, seed::derive(args.seed, "train.select", 0));
        let report = importance_report(&data, &specs)?;
        let selected = select_features(&report, args.selection.fs_threshold)?;
        outln!(
            "selected {} of {} features: {}",
            selected.len(),
            data.n_features(),
            selected
                .iter()
                .map(|&i| data.schema().names()[i].as_str())
                .collect::<Vec<_>>()
                .join(", ")
        );
        data = data.project_features(&selected)?;
        Some(selected)
    } else {
        None
    };
    let start = Instant::now();
    let model = spec.fit(&data)?;
    let elapsed = start.elapsed().as_secs_f64();
    let metadata = TrainingMetadata {
        seed: args.seed,
        spec: spec.clone(),
        train_time_s: args.stamp.then_some(elapsed),
        timestamp: args.stamp.then(|| {
            let secs = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            format!("{secs}")
        }),
    };
    let artifact = ModelArtifact::new(
        model,
        meta.schema.clone(),
        Some(meta.normalization.clone()),
        meta.label_names.clone(),
        selected,
        metadata,
    )?;
    save_model(&artifact, &args.output).with_context(|| format!("writing {}", args.output.display()))?;
    outln!(
        "trained {} in {elapsed:.2} s -> {}",
        spec.describe(),
        args.output.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- evaluate

fn print_per_class(label_names: &[String], per_class: &[ClassMetrics]) -> anyhow::Result<()> {
    let width = label_names.iter().map(String::len).max().unwrap_or(5).max(5);
    outln!(
        "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}",
        "class",
        "precision",
        "recall",
        "f1",
        "support"
    );
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    for (name, m) in label_names.iter().zip(per_class) {
        outln!(
            "{name:<width$}  {:>9}  {:>9}  {:>9}  {:>9}",
            fmt(m.precision),
            fmt(m.recall),
            fmt(m.f1),
            m.support
        );
    }
    Ok(())
}

fn evaluate_artifact(path: &Path, raw: &Dataset) -> anyhow::Result<()> {
    let artifact = treeguard_core::load_model(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(diff) = artifact.schema.first_difference(raw.schema()) {
        return Err(Error::SchemaMismatch(format!("dataset does not match the model schema: {diff}")).into());
    }
    let truth = raw
        .labels()
        .iter()
        .map(|&l| {
            let name = &raw.label_names()[l];
            artifact
                .label_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::SchemaMismatch(format!("class {name:?} unknown to the model")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let start = Instant::now();
    let rows: Vec<&[f64]> = raw.rows().collect();
    let predicted = rows
        .par_iter()
        .map(|row| artifact.predict_raw(row).map(|(c, _)| c))
        .collect::<Result<Vec<_>, _>>()?;
    let predict_time_s = start.elapsed().as_secs_f64();
    let k = artifact.label_names.len().max(artifact.model.n_classes());
    let cm = confusion_matrix(&truth, &predicted, k)?;
    let normal = artifact
        .label_names
        .iter()
        .position(|n| n.eq_ignore_ascii_case("normal") || n.eq_ignore_ascii_case("benign"))
        .unwrap_or(0);
    let mut metrics = compute_metrics(&cm, normal)?;
    metrics.predict_time_s = predict_time_s;
    metrics.train_time_s = artifact.metadata.train_time_s.unwrap_or(0.0);
    out!("{}", format_report_table([(artifact.kind.display_name(), &metrics)]));
    outln!();
    print_per_class(&artifact.label_names, &metrics.per_class)?;
    outln!("scored {} rows in {predict_time_s:.3} s", raw.n_rows());
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> anyhow::Result<()> {
    let (raw, data, _) = load_normalized(&args.data)?;
    if let Some(path) = &args.model_file {
        return evaluate_artifact(path, &raw);
    }
    let opts = CvOptions {
        k: args.folds,
        seed: args.seed,
        resample: resample_spec(&args.resample)?,
        features: if args.selection.feature_select {
            FeatureMode::Select {
                threshold: args.selection.fs_threshold,
                specs: fs_specs(&args.selection, seed::derive(args.seed, "eval.select", 0)),
            }
        } else {
            FeatureMode::All
        },
        normal_class: None,
    };
    let mut summary: Vec<(String, MetricsReport)> = Vec::new();
    let mut singular = Vec::new();
    for &kind in &args.model {
        let spec = build_spec(&args.model_args(kind), args.seed)?;
        log::info!("cross-validating {} with {} folds", spec.describe(), args.folds);
        let report = cross_validate(&spec, &data, &opts)?;
        let name = kind.display_name();
        let mut rows: Vec<(String, &MetricsReport)> = report
            .folds
            .iter()
            .enumerate()
            .map(|(i, f)| (format!("{name} fold {}", i + 1), &f.metrics))
            .collect();
        rows.push((format!("{name} mean"), &report.aggregate));
        let mut pooled = report.pooled_metrics.clone();
        pooled.train_time_s = report.aggregate.train_time_s;
        rows.push((format!("{name} pooled"), &pooled));
        out!("{}", format_report_table(rows.iter().map(|(n, m)| (n.as_str(), *m))));
        if args.selection.feature_select {
            let counts: Vec<String> = report.folds.iter().map(|f| f.features.len().to_string()).collect();
            outln!("selected features per fold: {}", counts.join(", "));
        }
        outln!();
        if kind != ModelKind::Stacking {
            singular.push(SingularReport {
                kind,
                accuracy: report.aggregate.accuracy,
                false_alarm_rate: report.aggregate.false_alarm_rate,
                time_s: report.aggregate.train_time_s,
            });
        }
        summary.push((name.to_string(), report.aggregate));
    }
    if summary.len() > 1 {
        outln!("summary (mean over folds)");
        out!("{}", format_report_table(summary.iter().map(|(n, m)| (n.as_str(), m))));
    }
    if ModelKind::SINGULAR
        .iter()
        .all(|k| singular.iter().any(|r| r.kind == *k))
    {
        let (bases, meta) = select_base_and_meta(&singular)?;
        let names: Vec<&str> = bases.iter().map(|k| k.as_str()).collect();
        outln!(
            "suggested stacking: --bases {} --meta {}",
            names.join(","),
            meta.as_str()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- select-features

fn csv_cell(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn select(args: &SelectArgs) -> anyhow::Result<()> {
    let (_, data, _) = load_normalized(&args.data)?;
    let present = data.class_counts().iter().filter(|&&n| n > 0).count();
    if present < 2 {
        return Err(input_error("feature selection needs at least two classes"));
    }
    let specs = importance_specs(args.trees, args.depth, seed::derive(args.seed, "select.models", 0));
    let report = importance_report(&data, &specs)?;
    let selected = select_features(&report, args.fs_threshold)?;
    let table = report.to_table();
    out!("{table}");
    if let Some(path) = &args.output {
        fs::write(path, &table).with_context(|| format!("writing {}", path.display()))?;
    }
    let names: Vec<&str> = selected.iter().map(|&i| report.feature_names[i].as_str()).collect();
    outln!(
        "selected {} of {} features at threshold {}: {}",
        selected.len(),
        data.n_features(),
        args.fs_threshold,
        names.join(", ")
    );
    if args.per_attack {
        let normal = data.normal_class();
        let counts = data.class_counts();
        let mut out = String::from("label,feature,weight\n");
        for attack in (0..data.n_classes()).filter(|&c| c != normal && counts[c] > 0) {
            let ranked = per_attack_importance(&data, attack, normal, &specs)?;
            let take = if args.top == 0 { ranked.len() } else { args.top };
            for (f, w) in ranked.into_iter().take(take) {
                out.push_str(&format!(
                    "{},{},{w:.6}\n",
                    csv_cell(&data.label_names()[attack]),
                    csv_cell(&data.schema().names()[f])
                ));
            }
        }
        outln!();
        out!("{out}");
        if let Some(path) = &args.per_attack_output {
            fs::write(path, &out).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- grid-search

pub fn grid(args: &GridArgs) -> anyhow::Result<()> {
    let (_, data, _) = load_normalized(&args.data)?;
    let opts = CvOptions {
        k: args.folds,
        seed: args.seed,
        ..CvOptions::default()
    };
    let result = grid_search_with(&args.trees_grid, &args.depth_grid, args.tolerance, |t, d| {
        let spec = ModelSpec::default_for(args.model)
            .with_trees(t)
            .with_depth(d)
            .with_seed(args.seed);
        let report = cross_validate(&spec, &data, &opts)?;
        log::info!("T={t} D={d}: accuracy {:.6}", report.aggregate.accuracy);
        Ok((report.aggregate.accuracy, report.aggregate.train_time_s))
    })?;
    outln!("{:>6}  {:>6}  {:>10}  {:>9}", "trees", "depth", "accuracy", "time (s)");
    for p in &result.points {
        outln!(
            "{:>6}  {:>6}  {:>10.6}  {:>9.2}",
            p.trees,
            p.depth,
            p.accuracy,
            p.time_s
        );
    }
    outln!(
        "chosen T={} D={} (stopped: {:?})",
        result.chosen.0,
        result.chosen.1,
        result.stop_reason
    );
    Ok(())
}

// ---------------------------------------------------------------- synth

/// Write synthetic captures in the car-hacking layout: one file per attack
/// (`DoS_dataset.csv`, ...) holding its injected frames, with the normal
/// frames dealt round-robin across the files.
pub fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    fs::create_dir_all(&args.output_dir).with_context(|| format!("cannot create {}", args.output_dir.display()))?;
    let attacks = &SYNTH_LABELS[1..];
    let mut writers = Vec::with_capacity(attacks.len());
    for name in attacks {
        let path = args.output_dir.join(format!("{name}_dataset.csv"));
        let f = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        writers.push((path, BufWriter::new(f), 0usize));
    }
    let mut next_normal = 0;
    for frame in generate_can_frames(args.frames, SynthMix::default(), args.seed) {
        let slot = match attacks.iter().position(|a| *a == frame.label) {
            Some(i) => i,
            None => {
                next_normal = (next_normal + 1) % attacks.len();
                next_normal
            }
        };
        let (_, w, n) = &mut writers[slot];
        writeln!(w, "{}", format_can_line(&frame))?;
        *n += 1;
    }
    for (path, mut w, n) in writers {
        w.flush()?;
        outln!("{n:>10} frames -> {}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------- detect

pub fn detect(args: &DetectArgs) -> anyhow::Result<()> {
    let artifact = treeguard_core::load_model(&args.model_file)
        .with_context(|| format!("loading {}", args.model_file.display()))?;
    let input: Box<dyn BufRead> = if args.input.as_os_str() == "-" {
        Box::new(io::stdin().lock())
    } else {
        Box::new(open(&args.input)?)
    };
    let output: Box<dyn io::Write> = if args.output.as_os_str() == "-" {
        Box::new(BufWriter::new(io::stdout().lock()))
    } else {
        let f = File::create(&args.output).with_context(|| format!("cannot create {}", args.output.display()))?;
        Box::new(BufWriter::new(f))
    };
    let summary = detect_stream(
        &artifact,
        args.profile,
        input,
        output,
        args.batch_size,
        &args.label_column,
    )?;
    eprintln!("summary: {summary}");
    Ok(())
}
