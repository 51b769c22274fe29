//! Prepared datasets: a CSV of cleaned raw feature values with a trailing
//! `label` column holding class names, and a `<file>.meta.json` sidecar with
//! the schema, class names and the normalization fitted at preparation time.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::{Deserialize, Serialize};

use treeguard_core::{Dataset, Error, FeatureSchema, NormalizationParams};

use crate::args::Profile;

pub const PREPARED_VERSION: u64 = 1;
pub const LABEL_COLUMN: &str = "label";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedMeta {
    pub format_version: u64,
    pub profile: Profile,
    pub schema: FeatureSchema,
    pub label_names: Vec<String>,
    pub normalization: NormalizationParams,
    pub class_counts: Vec<usize>,
    /// Rows dropped for non-finite cells.
    pub removed_rows: usize,
    /// CAN lines skipped as malformed.
    pub malformed_lines: usize,
}

pub fn meta_path(data: &Path) -> PathBuf {
    let mut name = data.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    data.with_file_name(name)
}

pub fn write_prepared(path: &Path, dataset: &Dataset, meta: &PreparedMeta) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header: Vec<&str> = dataset.schema().names().iter().map(String::as_str).collect();
    header.push(LABEL_COLUMN);
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for (row, &label) in dataset.rows().zip(dataset.labels()) {
        record.clear();
        // Display for f64 is the shortest exact representation.
        record.extend(row.iter().map(|v| v.to_string()));
        record.push(dataset.label_names()[label].clone());
        w.write_record(&record)?;
    }
    w.flush()?;
    let meta_file = meta_path(path);
    let mut out =
        BufWriter::new(File::create(&meta_file).with_context(|| format!("cannot create {}", meta_file.display()))?);
    serde_json::to_writer_pretty(&mut out, meta)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_meta(path: &Path) -> anyhow::Result<PreparedMeta> {
    let meta_file = meta_path(path);
    let file = File::open(&meta_file).with_context(|| format!("cannot open {}", meta_file.display()))?;
    let meta: PreparedMeta =
        serde_json::from_reader(BufReader::new(file)).with_context(|| format!("invalid {}", meta_file.display()))?;
    if meta.format_version != PREPARED_VERSION {
        return Err(Error::InvalidParam(format!(
            "{}: prepared format version {} is not supported",
            meta_file.display(),
            meta.format_version
        ))
        .into());
    }
    Ok(meta)
}

/// Load a prepared dataset (raw, unnormalized values) and its metadata.
pub fn read_prepared(path: &Path) -> anyhow::Result<(Dataset, PreparedMeta)> {
    let meta = read_meta(path)?;
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(file));
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let expected: Vec<&str> = meta
        .schema
        .names()
        .iter()
        .map(String::as_str)
        .chain([LABEL_COLUMN])
        .collect();
    if header != expected {
        let detail = header
            .iter()
            .zip(&expected)
            .position(|(a, b)| a != b)
            .map(|i| format!("column {i}: expected {:?}, found {:?}", expected[i], header[i]))
            .unwrap_or_else(|| format!("expected {} columns, found {}", expected.len(), header.len()));
        return Err(
            Error::SchemaMismatch(format!("{}: header differs from metadata, {detail}", path.display())).into(),
        );
    }
    let p = meta.schema.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let parse_err = |msg: String| Error::Parse { line, msg };
        if record.len() != p + 1 {
            return Err(parse_err(format!("expected {} fields, found {}", p + 1, record.len())))
                .with_context(|| path.display().to_string());
        }
        for cell in record.iter().take(p) {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(format!("non-numeric cell {cell:?}")))
                .with_context(|| path.display().to_string())?;
            values.push(v);
        }
        let name = &record[p];
        let id = meta
            .label_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| parse_err(format!("unknown class {name:?}")))
            .with_context(|| path.display().to_string())?;
        labels.push(id);
    }
    let dataset = Dataset::new(meta.schema.clone(), values, labels, meta.label_names.clone())?;
    Ok((dataset, meta))
}
