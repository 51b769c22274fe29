//! Model files: a canonical JSON document holding the fitted model together
//! with everything needed to score raw records (schema, normalization,
//! selected features, label names).
//!
//! The encoding is canonical so identical models give identical bytes: object
//! keys are sorted, indentation is fixed and every float is written with 17
//! significant digits (`{:.16e}`), which round-trips `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{FeatureSchema, NormalizationParams};
use crate::error::{Error, Result};
use crate::model::{Model, ModelKind, ModelSpec};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub spec: ModelSpec,
    /// Wall-clock training time in seconds, when recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_time_s: Option<f64>,
    /// Free-form creation time. Omitted by default so that identical inputs
    /// produce identical files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u64,
    pub kind: ModelKind,
    /// Schema of the raw (pre-selection) feature vector.
    pub schema: FeatureSchema,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationParams>,
    pub label_names: Vec<String>,
    /// Indices into `schema` the model was trained on, in model input order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_features: Option<Vec<usize>>,
    pub model: Model,
    pub metadata: TrainingMetadata,
}

impl ModelArtifact {
    pub fn new(
        model: Model,
        schema: FeatureSchema,
        normalization: Option<NormalizationParams>,
        label_names: Vec<String>,
        selected_features: Option<Vec<usize>>,
        metadata: TrainingMetadata,
    ) -> Result<Self> {
        let artifact = Self {
            format_version: FORMAT_VERSION,
            kind: model.kind(),
            schema,
            normalization,
            label_names,
            selected_features,
            model,
            metadata,
        };
        artifact.check()?;
        Ok(artifact)
    }

    fn check(&self) -> Result<()> {
        let corrupt = |m: String| Err(Error::Corrupt(m));
        if self.kind != self.model.kind() {
            return corrupt(format!(
                "kind {} does not match model body {}",
                self.kind,
                self.model.kind()
            ));
        }
        let p = self.schema.len();
        if let Some(norm) = &self.normalization {
            if norm.min.len() != p || norm.max.len() != p || norm.degenerate.len() != p {
                return corrupt("normalization length differs from schema".into());
            }
        }
        let width = match &self.selected_features {
            Some(sel) => {
                if let Some(&bad) = sel.iter().find(|&&i| i >= p) {
                    return corrupt(format!("selected feature {bad} outside schema of {p}"));
                }
                sel.len()
            }
            None => p,
        };
        if width != self.model.n_features() {
            return corrupt(format!(
                "model expects {} features but artifact provides {width}",
                self.model.n_features()
            ));
        }
        if self.label_names.len() > self.model.n_classes() || self.label_names.is_empty() {
            return corrupt(format!(
                "{} label names for a {}-class model",
                self.label_names.len(),
                self.model.n_classes()
            ));
        }
        Ok(())
    }

    /// Normalize a raw feature vector and apply the feature mask.
    pub fn prepare_row(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "record has {} features, model schema has {}",
                raw.len(),
                self.schema.len()
            )));
        }
        let mut row = raw.to_vec();
        if let Some(norm) = &self.normalization {
            norm.apply_row(&self.schema, &mut row)?;
        }
        Ok(match &self.selected_features {
            Some(sel) => sel.iter().map(|&i| row[i]).collect(),
            None => row,
        })
    }

    /// Predict from a raw (unnormalized, full-schema) feature vector.
    pub fn predict_raw(&self, raw: &[f64]) -> Result<(usize, Vec<f64>)> {
        self.model.predict(&self.prepare_row(raw)?)
    }

    /// Canonical text encoding.
    pub fn to_canonical_string(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        let mut out = String::new();
        write_canonical(&value, 0, &mut out);
        out.push('\n');
        Ok(out)
    }

    pub fn from_str_checked(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Corrupt(e.to_string()))?;
        let found = value
            .get("format_version")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Corrupt("missing format_version".into()))?;
        if found != FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found,
                expected: FORMAT_VERSION,
            });
        }
        let artifact: ModelArtifact = serde_json::from_value(value).map_err(|e| Error::Corrupt(e.to_string()))?;
        let schema = FeatureSchema::new(
            artifact.schema.names().to_vec(),
            (0..artifact.schema.len()).map(|i| artifact.schema.kind(i)).collect(),
            (0..artifact.schema.len())
                .map(|i| artifact.schema.group(i).map(str::to_string))
                .collect(),
        )
        .map_err(|e| Error::Corrupt(e.to_string()))?;
        if schema != artifact.schema {
            return Err(Error::Corrupt("schema failed validation".into()));
        }
        artifact.check()?;
        Ok(artifact)
    }
}

/// Write `artifact` to `path` atomically (temporary file, then rename).
pub fn save_model(artifact: &ModelArtifact, path: &Path) -> Result<()> {
    let text = artifact.to_canonical_string()?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelArtifact> {
    let text = fs::read_to_string(path)?;
    ModelArtifact::from_str_checked(&text)
}

fn indent(level: usize, out: &mut String) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

/// Pretty JSON with sorted keys (serde_json's map is ordered) and fixed
/// float formatting. Short scalar arrays stay on one line.
fn write_canonical(value: &Value, level: usize, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                write!(out, "{u}").unwrap();
            } else if let Some(i) = n.as_i64() {
                write!(out, "{i}").unwrap();
            } else {
                write!(out, "{:.16e}", n.as_f64().unwrap_or(0.0)).unwrap();
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings always serialize")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
            } else if items.iter().all(|v| !v.is_array() && !v.is_object()) {
                out.push('[');
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_canonical(v, level, out);
                }
                out.push(']');
            } else {
                out.push_str("[\n");
                for (i, v) in items.iter().enumerate() {
                    indent(level + 1, out);
                    write_canonical(v, level + 1, out);
                    out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
                }
                indent(level, out);
                out.push(']');
            }
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            for (i, (k, v)) in map.iter().enumerate() {
                indent(level + 1, out);
                out.push_str(&serde_json::to_string(k).expect("strings always serialize"));
                out.push_str(": ");
                write_canonical(v, level + 1, out);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            indent(level, out);
            out.push('}');
        }
    }
}
