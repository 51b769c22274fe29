//! Parsers for CAN frame logs and flow-feature CSVs, label consolidation and
//! CAN feature encoding.
//!
//! CAN logs use the car-hacking capture layout, one frame per line:
//!
//! ```text
//! 1478198376.389427,0316,8,05,21,68,09,21,21,00,6f,R
//! ```
//!
//! that is timestamp, hex identifier, DLC, `dlc` hex data bytes and a flag
//! (`R` for regular traffic, `T` for injected frames). Bytes beyond the DLC
//! are padded with zero.

use std::collections::BTreeSet;
use std::io::{BufRead, Read};

use crate::data::{Dataset, FeatureKind, FeatureSchema};
use crate::error::{invalid, Error, Result};

/// Feature name of the CAN identifier column.
pub const CAN_ID_FEATURE: &str = "CAN ID";
/// Number of columns in a CICIDS2017-style flow record, label excluded.
pub const FLOW_FEATURE_COUNT: usize = 78;
/// Default fraction of malformed CAN lines tolerated before parsing fails.
pub const DEFAULT_MALFORMED_TOLERANCE: f64 = 0.001;

const NORMAL_CLASS: &str = "Normal";
const UNHINTED_ATTACK: &str = "Attack";

/// One CAN frame from a capture log.
#[derive(Debug, Clone, PartialEq)]
pub struct CanFrameRecord {
    pub timestamp: f64,
    pub can_id: u16,
    pub dlc: u8,
    pub data: [u8; 8],
    pub label: String,
}

pub fn data_feature_name(byte: usize) -> String {
    format!("DATA[{byte}]")
}

fn one_hot_id_name(id: u16) -> String {
    format!("{CAN_ID_FEATURE}={id:04x}")
}

/// Raw label of the injected frames in a capture file, guessed from its
/// name (`DoS_dataset.csv` -> `DoS`, and likewise Fuzzy, gear and RPM).
pub fn can_label_hint(file_name: &str) -> Option<&'static str> {
    let lower = file_name.to_ascii_lowercase();
    [("dos", "DoS"), ("fuzzy", "Fuzzy"), ("gear", "Gear"), ("rpm", "RPM")]
        .into_iter()
        .find(|(key, _)| lower.contains(key))
        .map(|(_, hint)| hint)
}

/// Parse one CAN log line. `label_hint` names the class of injected frames.
pub fn parse_can_line(line: &str, label_hint: Option<&str>) -> std::result::Result<CanFrameRecord, String> {
    let tokens: Vec<&str> = line.split(',').map(str::trim).collect();
    if tokens.len() < 4 {
        return Err(format!("expected at least 4 fields, found {}", tokens.len()));
    }
    let timestamp: f64 = tokens[0]
        .parse()
        .map_err(|_| format!("bad timestamp {:?}", tokens[0]))?;
    let can_id = u16::from_str_radix(tokens[1], 16)
        .ok()
        .filter(|&id| id <= 0x7FF)
        .ok_or_else(|| format!("bad CAN id {:?}", tokens[1]))?;
    let dlc: u8 = tokens[2]
        .parse()
        .ok()
        .filter(|&d| d <= 8)
        .ok_or_else(|| format!("bad DLC {:?}", tokens[2]))?;
    let expected = 3 + usize::from(dlc) + 1;
    if tokens.len() != expected {
        return Err(format!("DLC {dlc} needs {expected} fields, found {}", tokens.len()));
    }
    let mut data = [0u8; 8];
    for (i, byte) in data.iter_mut().enumerate().take(usize::from(dlc)) {
        let tok = tokens[3 + i];
        if tok.is_empty() || tok.len() > 2 {
            return Err(format!("bad data byte {tok:?}"));
        }
        *byte = u8::from_str_radix(tok, 16).map_err(|_| format!("bad data byte {tok:?}"))?;
    }
    let label = match tokens[expected - 1] {
        "R" => NORMAL_CLASS.to_string(),
        "T" => label_hint.unwrap_or(UNHINTED_ATTACK).to_string(),
        other => return Err(format!("bad flag {other:?}")),
    };
    Ok(CanFrameRecord {
        timestamp,
        can_id,
        dlc,
        data,
        label,
    })
}

/// Frames parsed from a log plus the number of skipped malformed lines.
#[derive(Debug, Clone)]
pub struct CanParseOutput {
    pub records: Vec<CanFrameRecord>,
    pub malformed: usize,
}

/// Parse a CAN log. Blank lines and a leading non-numeric header line are
/// ignored; malformed lines are skipped while their count stays within
/// `tolerance` (a fraction of all data lines).
pub fn parse_can_csv<R: BufRead>(reader: R, label_hint: Option<&str>, tolerance: f64) -> Result<CanParseOutput> {
    let mut records = Vec::new();
    let mut malformed = 0;
    let mut total = 0;
    let mut first_error = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if lineno == 0 && looks_like_header(line) {
            continue;
        }
        total += 1;
        match parse_can_line(line, label_hint) {
            Ok(rec) => records.push(rec),
            Err(msg) => {
                malformed += 1;
                first_error.get_or_insert((lineno + 1, msg));
            }
        }
    }
    let allowed = (total as f64 * tolerance).floor() as usize;
    if malformed > allowed {
        if let (1, Some((line, msg))) = (malformed, first_error) {
            return Err(Error::Parse { line, msg });
        }
        return Err(Error::TooManyMalformed {
            malformed,
            total,
            allowed,
        });
    }
    Ok(CanParseOutput { records, malformed })
}

fn looks_like_header(line: &str) -> bool {
    line.split(',')
        .next()
        .map(|t| t.trim().parse::<f64>().is_err())
        .unwrap_or(false)
}

/// How CAN identifiers become features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CanEncoding {
    /// `CAN ID` as one integer column next to `DATA[0]..DATA[7]`.
    #[default]
    Numeric,
    /// `DATA[0]..DATA[7]` plus one indicator column per observed identifier.
    OneHotId,
}

/// Schema for CAN features. `ids` is only used for [`CanEncoding::OneHotId`].
pub fn can_schema(encoding: CanEncoding, ids: &BTreeSet<u16>) -> Result<FeatureSchema> {
    let data_names = (0..8).map(data_feature_name);
    match encoding {
        CanEncoding::Numeric => FeatureSchema::numeric(std::iter::once(CAN_ID_FEATURE.to_string()).chain(data_names)),
        CanEncoding::OneHotId => {
            let mut names: Vec<String> = data_names.collect();
            let mut kinds = vec![FeatureKind::Numeric; 8];
            let mut groups = vec![None; 8];
            for &id in ids {
                names.push(one_hot_id_name(id));
                kinds.push(FeatureKind::OneHot);
                groups.push(Some(CAN_ID_FEATURE.to_string()));
            }
            FeatureSchema::new(names, kinds, groups)
        }
    }
}

/// Encode one frame against a CAN schema produced by [`can_schema`]. Unknown
/// identifiers under one-hot encoding yield an all-zero indicator block.
pub fn encode_can_frame(schema: &FeatureSchema, frame: &CanFrameRecord) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(schema.len());
    let own_id = one_hot_id_name(frame.can_id);
    for (i, name) in schema.names().iter().enumerate() {
        let value = if name == CAN_ID_FEATURE {
            f64::from(frame.can_id)
        } else if let Some(byte) = name
            .strip_prefix("DATA[")
            .and_then(|s| s.strip_suffix(']'))
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&b| b < 8)
        {
            f64::from(frame.data[byte])
        } else if schema.group(i) == Some(CAN_ID_FEATURE) {
            if *name == own_id {
                1.0
            } else {
                0.0
            }
        } else {
            return Err(Error::SchemaMismatch(format!(
                "feature {name:?} is not a CAN frame feature"
            )));
        };
        row.push(value);
    }
    Ok(row)
}

/// Turn frames into a dataset, consolidating labels through `labels`.
pub fn encode_can_features(
    records: &[CanFrameRecord],
    encoding: CanEncoding,
    labels: &LabelMapSpec,
) -> Result<Dataset> {
    if records.is_empty() {
        return Err(Error::NoRows);
    }
    let ids: BTreeSet<u16> = match encoding {
        CanEncoding::Numeric => BTreeSet::new(),
        CanEncoding::OneHotId => records.iter().map(|r| r.can_id).collect(),
    };
    let schema = can_schema(encoding, &ids)?;
    let mut values = Vec::with_capacity(records.len() * schema.len());
    for r in records {
        values.extend(encode_can_frame(&schema, r)?);
    }
    let mut encoder = LabelEncoder::default();
    let mut ids_out = Vec::with_capacity(records.len());
    for r in records {
        ids_out.push(encoder.encode(labels.map(&r.label)?));
    }
    Dataset::new(schema, values, ids_out, encoder.names)
}

/// One row of a flow-feature CSV. Unparseable or infinite cells are kept as
/// NaN / infinity so that cleaning can drop the row later.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub features: Vec<f64>,
    pub raw_label: String,
}

#[derive(Debug, Clone)]
pub struct FlowParseOptions {
    pub label_column: String,
    /// Required feature count (label excluded); `None` accepts any width.
    pub expected_features: Option<usize>,
}

impl Default for FlowParseOptions {
    fn default() -> Self {
        Self {
            label_column: "Label".to_string(),
            expected_features: Some(FLOW_FEATURE_COUNT),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowTable {
    pub feature_names: Vec<String>,
    pub records: Vec<FlowRecord>,
}

/// Header names trimmed, with repeats disambiguated as `name.1`, `name.2`.
pub fn dedupe_header(raw: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for name in raw {
        let base = name.trim().to_string();
        let mut candidate = base.clone();
        let mut n = 0;
        while out.contains(&candidate) {
            n += 1;
            candidate = format!("{base}.{n}");
        }
        out.push(candidate);
    }
    out
}

/// Parse a numeric flow cell. Empty, `NaN` and `Infinity` cells become
/// non-finite markers.
pub fn parse_flow_cell(cell: &str) -> std::result::Result<f64, String> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(f64::NAN);
    }
    match cell.parse::<f64>() {
        Ok(v) => Ok(v),
        Err(_) => Err(format!("non-numeric cell {cell:?}")),
    }
}

/// Parse a flow CSV with a header row.
pub fn parse_flow_csv<R: Read>(reader: R, opts: &FlowParseOptions) -> Result<FlowTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    // Byte records: some public captures carry non-UTF-8 bytes in labels.
    let header = dedupe_header(
        rdr.byte_headers()?
            .iter()
            .map(|h| String::from_utf8_lossy(h).into_owned()),
    );
    if header.len() <= 1 {
        return Err(Error::Parse {
            line: 1,
            msg: "missing header row".into(),
        });
    }
    let label_idx = header
        .iter()
        .position(|h| h == &opts.label_column)
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("no label column {:?}", opts.label_column),
        })?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if let Some(expected) = opts.expected_features {
        if feature_names.len() != expected {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected {expected} feature columns, found {}", feature_names.len()),
            });
        }
    }
    let mut records = Vec::new();
    for (n, rec) in rdr.byte_records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} columns, found {}", header.len(), rec.len()),
            });
        }
        let mut features = Vec::with_capacity(feature_names.len());
        for (i, cell) in rec.iter().enumerate() {
            if i != label_idx {
                let cell = String::from_utf8_lossy(cell);
                features.push(parse_flow_cell(&cell).map_err(|msg| Error::Parse { line, msg })?);
            }
        }
        records.push(FlowRecord {
            features,
            raw_label: String::from_utf8_lossy(&rec[label_idx]).trim().to_string(),
        });
    }
    Ok(FlowTable { feature_names, records })
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Pattern {
    Exact(String),
    Prefix(String),
}

impl Pattern {
    fn matches(&self, raw: &str) -> bool {
        let raw = raw.trim().to_lowercase();
        match self {
            Pattern::Exact(p) => raw == *p,
            Pattern::Prefix(p) => raw.starts_with(p.as_str()),
        }
    }
}

/// Ordered raw-label rules; the first matching rule decides the class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMapSpec {
    rules: Vec<(Pattern, String)>,
}

impl LabelMapSpec {
    /// Parse `raw_label,consolidated_class` lines. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (raw, class) = line.rsplit_once(',').ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: "expected raw_label,consolidated_class".into(),
            })?;
            let (raw, class) = (raw.trim().to_lowercase(), class.trim().to_string());
            if raw.is_empty() || class.is_empty() {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: "empty label in mapping".into(),
                });
            }
            let pattern = match raw.strip_suffix('*') {
                Some(prefix) => Pattern::Prefix(prefix.to_string()),
                None => Pattern::Exact(raw),
            };
            rules.push((pattern, class));
        }
        if rules.is_empty() {
            return Err(invalid("label map has no rules"));
        }
        Ok(Self { rules })
    }

    /// Consolidation for the seven CICIDS2017 classes.
    pub fn cicids2017() -> Self {
        Self::parse(include_str!("../data/cicids2017_labels.csv")).expect("bundled label map")
    }

    /// Consolidation for the five car-hacking classes.
    pub fn can() -> Self {
        Self::parse(include_str!("../data/can_labels.csv")).expect("bundled label map")
    }

    pub fn map<'a>(&'a self, raw: &str) -> Result<&'a str> {
        self.rules
            .iter()
            .find(|(p, _)| p.matches(raw))
            .map(|(_, c)| c.as_str())
            .ok_or_else(|| Error::UnmatchedLabel(raw.to_string()))
    }

    /// Consolidated classes in rule order, without repeats.
    pub fn classes(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for (_, c) in &self.rules {
            if !out.contains(&c.as_str()) {
                out.push(c);
            }
        }
        out
    }
}

/// Dense class ids in first-seen order.
#[derive(Debug, Default)]
pub struct LabelEncoder {
    names: Vec<String>,
}

impl LabelEncoder {
    pub fn encode(&mut self, name: &str) -> usize {
        match self.names.iter().position(|n| n == name) {
            Some(i) => i,
            None => {
                self.names.push(name.to_string());
                self.names.len() - 1
            }
        }
    }

    pub fn into_names(self) -> Vec<String> {
        self.names
    }
}

/// Build a dataset from flow records, merging raw labels into consolidated
/// classes. Non-finite cells are kept for [`crate::data::drop_invalid_rows`].
pub fn consolidate_labels(table: &FlowTable, spec: &LabelMapSpec) -> Result<Dataset> {
    if table.records.is_empty() {
        return Err(Error::NoRows);
    }
    let schema = FeatureSchema::numeric(table.feature_names.iter().cloned())?;
    let mut encoder = LabelEncoder::default();
    let mut labels = Vec::with_capacity(table.records.len());
    let mut values = Vec::with_capacity(table.records.len() * schema.len());
    for r in &table.records {
        labels.push(encoder.encode(spec.map(&r.raw_label)?));
        values.extend_from_slice(&r.features);
    }
    Dataset::new(schema, values, labels, encoder.into_names())
}
