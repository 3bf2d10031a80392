//! Pair files, Croissant descriptors and LVA verdict sheets.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use dmba_core::corpus::{CorpusError, Dataset, LvaVerdict, SentencePair, Verdict, PAIR_COLUMNS};
use dmba_core::prompting::PromptTemplate;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Csv,
    Jsonl,
}

impl DatasetFormat {
    /// `.jsonl` / `.ndjson` are JSON lines, anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson") => DatasetFormat::Jsonl,
            _ => DatasetFormat::Csv,
        }
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

struct RawRow {
    row: usize,
    fields: [String; 5],
}

fn build_pair(raw: RawRow) -> Result<SentencePair> {
    let [pair_id, bias_type, domain, stereo_text, anti_text] = raw.fields;
    let bias_type = bias_type
        .parse()
        .map_err(|_| CorpusError::UnknownBiasType { row: raw.row, value: bias_type.clone() })?;
    Ok(SentencePair { pair_id, bias_type, domain, stereo_text, anti_text })
}

/// Loads and validates a pair file. Rows keep their file order; `row`
/// numbers in errors count data rows from 1.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    let rows = match format {
        DatasetFormat::Csv => read_csv_rows(path)?,
        DatasetFormat::Jsonl => read_jsonl_rows(path)?,
    };
    let pairs = rows.into_iter().map(build_pair).collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(pairs, path.display().to_string())?)
}

fn read_csv_rows(path: &Path) -> Result<Vec<RawRow>> {
    let mut reader = csv::ReaderBuilder::new().from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let mut columns = [0usize; 5];
    for (slot, name) in columns.iter_mut().zip(PAIR_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CorpusError::MissingColumn(name.to_string()))?;
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let field = |c: usize| record.get(c).unwrap_or_default().to_string();
        rows.push(RawRow { row: i + 1, fields: columns.map(field) });
    }
    Ok(rows)
}

fn read_jsonl_rows(path: &Path) -> Result<Vec<RawRow>> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            offset: start + e.column().saturating_sub(1),
            message: e.to_string(),
        })?;
        let row = rows.len() + 1;
        let mut fields: [String; 5] = Default::default();
        for (slot, name) in fields.iter_mut().zip(PAIR_COLUMNS) {
            *slot = match value.get(name) {
                Some(Value::String(s)) => s.clone(),
                Some(other) => return Err(Error::schema(path, format!("row {row}: `{name}` must be a string, got {other}"))),
                None => return Err(CorpusError::MissingColumn(name.to_string()).into()),
            };
        }
        rows.push(RawRow { row, fields });
    }
    Ok(rows)
}

/// Writes a dataset in the same layout [`load_dataset`] reads.
pub fn export_dataset(dataset: &Dataset, path: &Path, format: DatasetFormat) -> Result<()> {
    match format {
        DatasetFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
            w.write_record(PAIR_COLUMNS).map_err(|e| Error::csv(path, e))?;
            for p in &dataset.pairs {
                w.write_record([&p.pair_id, p.bias_type.as_str(), &p.domain, &p.stereo_text, &p.anti_text])
                    .map_err(|e| Error::csv(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
        DatasetFormat::Jsonl => {
            let mut out = String::new();
            for p in &dataset.pairs {
                out.push_str(&serde_json::to_string(p).expect("pair serializes"));
                out.push('\n');
            }
            fs::write(path, out).map_err(|e| Error::io(path, e))
        }
    }
}

/// Structural Croissant check: `name`, `description`, a `distribution`
/// holding at least one FileObject, and a `recordSet` whose fields cover
/// the five pair columns. Returns one finding per problem.
pub fn validate_croissant(path: &Path) -> Result<Vec<String>> {
    let text = read_text(path)?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::json(path, &text, &e))?;
    Ok(croissant_findings(&doc))
}

pub fn croissant_findings(doc: &Value) -> Vec<String> {
    let Some(obj) = doc.as_object() else {
        return vec!["document is not a JSON object".to_string()];
    };
    let mut findings = Vec::new();
    for key in ["name", "description"] {
        match obj.get(key) {
            None => findings.push(format!("{key} absent")),
            Some(Value::String(s)) if !s.trim().is_empty() => {}
            Some(_) => findings.push(format!("{key} is not a non-empty string")),
        }
    }

    match obj.get("distribution") {
        None => findings.push("distribution absent".to_string()),
        Some(dist) => {
            if !as_list(dist).iter().any(|d| has_type(d, "FileObject")) {
                findings.push("distribution has no FileObject".to_string());
            }
        }
    }

    match obj.get("recordSet") {
        None => findings.push("recordSet absent".to_string()),
        Some(rs) => {
            let fields: Vec<String> = as_list(rs)
                .iter()
                .flat_map(|set| set.get("field").map(as_list).unwrap_or_default())
                .filter_map(field_name)
                .collect();
            if fields.is_empty() {
                findings.push("recordSet declares no fields".to_string());
            }
            for column in PAIR_COLUMNS {
                if !fields.iter().any(|f| f == column) {
                    findings.push(format!("recordSet missing field `{column}`"));
                }
            }
        }
    }
    findings
}

fn as_list(v: &Value) -> Vec<&Value> {
    match v {
        Value::Array(items) => items.iter().collect(),
        other => vec![other],
    }
}

fn has_type(v: &Value, suffix: &str) -> bool {
    match v.get("@type") {
        Some(Value::String(t)) => t.ends_with(suffix),
        Some(Value::Array(ts)) => ts.iter().filter_map(Value::as_str).any(|t| t.ends_with(suffix)),
        _ => false,
    }
}

/// A field's `name`, or the last path segment of its `@id`.
fn field_name(v: &Value) -> Option<String> {
    if let Some(name) = v.get("name").and_then(Value::as_str) {
        return Some(name.to_string());
    }
    v.get("@id").and_then(Value::as_str).map(|id| id.rsplit('/').next().unwrap_or(id).to_string())
}

/// Top-level scalar entries of a Croissant descriptor, for dataset metadata.
pub fn croissant_metadata(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = read_text(path)?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::json(path, &text, &e))?;
    let mut out = BTreeMap::new();
    if let Some(obj) = doc.as_object() {
        for (k, v) in obj {
            match v {
                Value::String(s) => {
                    out.insert(k.clone(), s.clone());
                }
                Value::Number(n) => {
                    out.insert(k.clone(), n.to_string());
                }
                Value::Bool(b) => {
                    out.insert(k.clone(), b.to_string());
                }
                _ => {}
            }
        }
    }
    Ok(out)
}

/// Reads `pair_id,assigned_type,verdict` rows.
pub fn load_lva_sheets(path: &Path) -> Result<Vec<LvaVerdict>> {
    let mut reader = csv::ReaderBuilder::new().from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
    };
    let (id_col, type_col, verdict_col) = (col("pair_id")?, col("assigned_type")?, col("verdict")?);
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let row = i + 1;
        let get = |c: usize| record.get(c).unwrap_or_default().trim().to_string();
        let assigned = get(type_col);
        let verdict = get(verdict_col);
        out.push(LvaVerdict {
            pair_id: get(id_col),
            assigned_type: assigned
                .parse()
                .map_err(|_| CorpusError::UnknownBiasType { row, value: assigned.clone() })?,
            verdict: Verdict::from_str(&verdict).map_err(|value| CorpusError::UnknownVerdict { row, value })?,
        });
    }
    Ok(out)
}

/// Reads a UTF-8 template file; the id is the file stem.
pub fn load_template(path: &Path) -> Result<PromptTemplate> {
    let body = read_text(path)?;
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("template").to_string();
    Ok(PromptTemplate::new(id, body)?)
}
