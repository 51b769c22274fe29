//! Streaming detection: records are read line by line, scored in
//! micro-batches and emitted as `ordinal,class,confidence,latency_us`
//! verdicts in input order. Memory stays bounded by the batch size; latency
//! quantiles come from a log-bucketed histogram.

use std::io::{BufRead, Write};
use std::time::Instant;

use rayon::prelude::*;

use treeguard_core::ingest::{dedupe_header, encode_can_frame, parse_can_line, parse_flow_cell, CanFrameRecord};
use treeguard_core::{Error, ModelArtifact, Result};

use crate::args::Profile;

pub const DEFAULT_BATCH: usize = 1024;
/// Class emitted for records that cannot be parsed or scored.
pub const PARSE_ERROR: &str = "PARSE-ERROR";
/// Outcome of scoring one record: `(class, confidence)` or an error message.
type Scored = std::result::Result<(usize, f64), String>;

/// Log-spaced latency histogram: bucket `i` covers
/// `[MIN_US * GROWTH^i, MIN_US * GROWTH^(i+1))`, so quantiles carry at most
/// 1% relative error while memory stays constant.
#[derive(Debug, Clone)]
pub struct LatencyHistogram {
    buckets: Vec<u64>,
    count: u64,
    sum_us: f64,
    max_us: f64,
}

const MIN_US: f64 = 0.01;
const GROWTH: f64 = 1.01;
const N_BUCKETS: usize = 2600;

impl Default for LatencyHistogram {
    fn default() -> Self {
        Self {
            buckets: vec![0; N_BUCKETS],
            count: 0,
            sum_us: 0.0,
            max_us: 0.0,
        }
    }
}

impl LatencyHistogram {
    pub fn record(&mut self, us: f64) {
        let us = us.max(0.0);
        let idx = if us <= MIN_US {
            0
        } else {
            ((us / MIN_US).ln() / GROWTH.ln()).floor() as usize
        };
        self.buckets[idx.min(N_BUCKETS - 1)] += 1;
        self.count += 1;
        self.sum_us += us;
        self.max_us = self.max_us.max(us);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum_us / self.count as f64
        }
    }

    /// Upper edge of the bucket holding the `q` quantile, capped at the
    /// largest observation.
    pub fn quantile(&self, q: f64) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let rank = ((q * self.count as f64).ceil() as u64).clamp(1, self.count);
        let mut seen = 0;
        for (i, &n) in self.buckets.iter().enumerate() {
            seen += n;
            if seen >= rank {
                return (MIN_US * GROWTH.powi(i as i32 + 1)).min(self.max_us);
            }
        }
        self.max_us
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectSummary {
    pub records: u64,
    pub parse_errors: u64,
    pub mean_us: f64,
    pub p99_us: f64,
    pub records_per_s: f64,
}

impl std::fmt::Display for DetectSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "records={} parse_errors={} mean_us={:.3} p99_us={:.3} records_per_s={:.1}",
            self.records, self.parse_errors, self.mean_us, self.p99_us, self.records_per_s
        )
    }
}

/// True when `artifact` was trained on CAN frame features.
pub fn is_can_schema(artifact: &ModelArtifact) -> bool {
    let probe = CanFrameRecord {
        timestamp: 0.0,
        can_id: 0,
        dlc: 8,
        data: [0; 8],
        label: String::new(),
    };
    encode_can_frame(&artifact.schema, &probe).is_ok()
}

/// Refuse artifacts whose schema cannot come from `profile` records.
pub fn check_profile(artifact: &ModelArtifact, profile: Profile) -> Result<()> {
    match (profile, is_can_schema(artifact)) {
        (Profile::Can, false) => Err(Error::SchemaMismatch(
            "model was not trained on CAN frame features".into(),
        )),
        (Profile::Flow, true) => Err(Error::SchemaMismatch(
            "model was trained on CAN frame features, not flow records".into(),
        )),
        _ => Ok(()),
    }
}

enum Decoder {
    Can,
    Flow {
        width: usize,
        /// Column dropped from every row (the label column).
        skip: Option<usize>,
    },
}

impl Decoder {
    fn features(&self, artifact: &ModelArtifact, line: &str) -> std::result::Result<Vec<f64>, String> {
        match self {
            Decoder::Can => {
                // Live feeds carry no R/T flag; treat such lines as unflagged frames.
                let tokens = line.split(',').count();
                let dlc = line.split(',').nth(2).and_then(|t| t.trim().parse::<usize>().ok());
                let frame = match dlc {
                    Some(d) if tokens == 3 + d => parse_can_line(&format!("{line},R"), None)?,
                    _ => parse_can_line(line, None)?,
                };
                encode_can_frame(&artifact.schema, &frame).map_err(|e| e.to_string())
            }
            Decoder::Flow { width, skip } => {
                let cells: Vec<&str> = line.split(',').collect();
                let skip = match skip {
                    Some(s) => Some(*s),
                    None if cells.len() == width + 1 => Some(*width),
                    None => None,
                };
                let n = cells.len() - usize::from(skip.is_some_and(|s| s < cells.len()));
                if n != *width {
                    return Err(format!("expected {width} features, found {n}"));
                }
                let mut row = Vec::with_capacity(*width);
                for (i, cell) in cells.iter().enumerate() {
                    if Some(i) == skip {
                        continue;
                    }
                    let v = parse_flow_cell(cell)?;
                    if !v.is_finite() {
                        return Err(format!("non-finite value in column {i}"));
                    }
                    row.push(v);
                }
                Ok(row)
            }
        }
    }

    fn score(&self, artifact: &ModelArtifact, line: &[u8]) -> std::result::Result<(usize, f64), String> {
        let line = std::str::from_utf8(line).map_err(|_| "record is not UTF-8".to_string())?;
        let raw = self.features(artifact, line.trim())?;
        let (class, proba) = artifact.predict_raw(&raw).map_err(|e| e.to_string())?;
        Ok((class, proba.get(class).copied().unwrap_or(0.0)))
    }
}

fn is_header(line: &[u8]) -> bool {
    let text = String::from_utf8_lossy(line);
    text.split(',').next().is_some_and(|t| t.trim().parse::<f64>().is_err())
}

fn flow_decoder(artifact: &ModelArtifact, header: Option<&[u8]>, label_column: &str) -> Result<Decoder> {
    let width = artifact.schema.len();
    let Some(header) = header else {
        return Ok(Decoder::Flow { width, skip: None });
    };
    let names = dedupe_header(String::from_utf8_lossy(header).split(',').map(str::to_string));
    let skip = names.iter().position(|n| n == label_column);
    let features: Vec<&String> = names
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, n)| n)
        .collect();
    for (i, (want, got)) in artifact.schema.names().iter().zip(&features).enumerate() {
        if want != *got {
            return Err(Error::SchemaMismatch(format!(
                "stream feature {i}: expected {want:?}, found {got:?}"
            )));
        }
    }
    if features.len() != width {
        return Err(Error::SchemaMismatch(format!(
            "stream has {} features, model expects {width}",
            features.len()
        )));
    }
    Ok(Decoder::Flow { width, skip })
}

fn trim_newline(mut line: Vec<u8>) -> Vec<u8> {
    while matches!(line.last(), Some(b'\n' | b'\r')) {
        line.pop();
    }
    line
}

/// Score every record of `input` and write one verdict line per record to
/// `output`. Blank lines and a leading header line are not records.
pub fn detect_stream<R: BufRead, W: Write>(
    artifact: &ModelArtifact,
    profile: Profile,
    mut input: R,
    mut output: W,
    batch_size: usize,
    label_column: &str,
) -> Result<DetectSummary> {
    check_profile(artifact, profile)?;
    let batch_size = batch_size.max(1);
    let start = Instant::now();
    let mut hist = LatencyHistogram::default();
    let mut parse_errors = 0;
    let mut ordinal: u64 = 0;
    let mut decoder = None;
    let mut first = true;
    let mut batch: Vec<Vec<u8>> = Vec::with_capacity(batch_size);
    let mut eof = false;
    while !eof {
        batch.clear();
        while batch.len() < batch_size {
            let mut buf = Vec::new();
            if input.read_until(b'\n', &mut buf)? == 0 {
                eof = true;
                break;
            }
            let line = trim_newline(buf);
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            if first {
                first = false;
                let header = is_header(&line);
                decoder = Some(match profile {
                    Profile::Can => Decoder::Can,
                    Profile::Flow => flow_decoder(artifact, header.then_some(&line[..]), label_column)?,
                });
                if header {
                    continue;
                }
            }
            batch.push(line);
        }
        let Some(dec) = &decoder else { break };
        let scored: Vec<(Scored, f64)> = batch
            .par_iter()
            .map(|line| {
                let t = Instant::now();
                let r = dec.score(artifact, line);
                (r, t.elapsed().as_secs_f64() * 1e6)
            })
            .collect();
        for (result, us) in scored {
            hist.record(us);
            match result {
                Ok((class, confidence)) => {
                    let name = artifact.label_names.get(class).map_or("?", String::as_str);
                    writeln!(output, "{ordinal},{name},{confidence:.6},{us:.3}")?;
                }
                Err(msg) => {
                    parse_errors += 1;
                    log::debug!("record {ordinal}: {msg}");
                    writeln!(output, "{ordinal},{PARSE_ERROR},0.000000,{us:.3}")?;
                }
            }
            ordinal += 1;
        }
    }
    output.flush()?;
    let elapsed = start.elapsed().as_secs_f64();
    Ok(DetectSummary {
        records: ordinal,
        parse_errors,
        mean_us: hist.mean(),
        p99_us: hist.quantile(0.99),
        records_per_s: if elapsed > 0.0 { ordinal as f64 / elapsed } else { 0.0 },
    })
}
