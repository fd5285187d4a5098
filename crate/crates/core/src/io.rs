//! CSV ingestion, report emission and run manifests.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::simlab::McSummary;
use crate::spectra::{TimeSeriesSample, MIN_SAMPLE_LEN};

/// Reads a header row of series names followed by numeric rows.
pub fn ingest_csv(path: impl AsRef<Path>, demean: bool) -> Result<TimeSeriesSample> {
    let file = fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    ingest_reader(file, demean)
}

/// Rows are numbered from 1 at the first data row; columns from 1.
pub fn ingest_reader(reader: impl Read, demean: bool) -> Result<TimeSeriesSample> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let r = rdr
        .headers()
        .map_err(|e| csv_error(e, 0))?
        .iter()
        .filter(|h| !h.is_empty())
        .count();
    if r == 0 {
        return Err(Error::TooShort { n: 0, min: MIN_SAMPLE_LEN });
    }
    let mut values = Vec::new();
    let mut n = 0;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_error(e, row))?;
        let found = record.iter().filter(|f| !f.is_empty()).count();
        if record.len() != r || found != r {
            return Err(Error::RaggedRows { row, expected: r, found });
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::NonNumeric { row, column: col + 1, value: field.to_string() })?;
            values.push(v);
        }
        n += 1;
    }
    if n < MIN_SAMPLE_LEN {
        return Err(Error::TooShort { n, min: MIN_SAMPLE_LEN });
    }
    let sample = TimeSeriesSample::new(n, r, values)?;
    Ok(if demean { sample.demeaned() } else { sample })
}

fn csv_error(e: csv::Error, row: usize) -> Error {
    let row = e.position().map_or(row, |p| (p.line() as usize).saturating_sub(1));
    let column = match e.kind() {
        csv::ErrorKind::Utf8 { err, .. } => err.field() + 1,
        _ => 0,
    };
    Error::Parse { row, column, message: e.to_string() }
}

/// Six significant digits, trailing zeros trimmed, integers keep one decimal.
pub fn fmt_sig(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..=15).contains(&exp) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    let s = if s.contains('.') { s.trim_end_matches('0').to_string() } else { s };
    if s.ends_with('.') {
        format!("{s}0")
    } else if s.contains('.') {
        s
    } else {
        format!("{s}.0")
    }
}

/// Merges the fields of `report` and `extra` into one flat JSON object.
pub fn flat_json(report: &impl Serialize, extra: &[(&str, Value)]) -> Result<String> {
    let mut value = serde_json::to_value(report).map_err(|e| Error::Io(e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Io("report does not serialize to an object".into()))?;
    for (k, v) in extra {
        obj.insert((*k).to_string(), v.clone());
    }
    serde_json::to_string_pretty(&value).map_err(|e| Error::Io(e.to_string()))
}

/// Table with columns `variant,n,m,stat,mean,var,skew,kurt,q95,<rate_label>`.
pub fn summaries_to_csv(rows: &[McSummary], rate_label: &str) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["variant", "n", "m", "stat", "mean", "var", "skew", "kurt", "q95", rate_label])
        .map_err(io)?;
    for s in rows {
        w.write_record([
            s.variant.clone(),
            s.n.to_string(),
            s.m.clone(),
            s.stat.clone(),
            fmt_sig(s.mean),
            fmt_sig(s.variance),
            fmt_sig(s.skewness),
            fmt_sig(s.kurtosis),
            fmt_sig(s.q95),
            fmt_sig(s.rate),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

/// Writes to `path`, or stdout when `None`.
pub fn write_output(content: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => fs::write(p, content).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(content.as_bytes())?;
            if !content.ends_with('\n') {
                out.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

/// `sha256("blob <len>\0" ++ bytes)`, as used for git object ids.
pub fn git_style_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: Value,
    pub input_hash: Option<String>,
    /// Hash over the canonical config document and the input hash.
    pub content_hash: String,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: Value, input: Option<&[u8]>) -> Self {
        let input_hash = input.map(git_style_hash);
        let mut doc = serde_json::json!({ "command": command, "seed": seed, "config": config });
        if let Some(h) = &input_hash {
            doc["input_hash"] = Value::String(h.clone());
        }
        let content_hash = git_style_hash(doc.to_string().as_bytes());
        Self { command: command.into(), seed, config, input_hash, content_hash }
    }
}
