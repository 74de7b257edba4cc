//! Dataset and rationale-corpus loading.
//!
//! JSON Lines is the native format: one `{"id"?, "text", "label"}` object per
//! line. CSV is accepted as an importer. Text is passed through unchanged.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::types::{DatasetInstance, ReasoningChain};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Schema {
        path: String,
        line: Option<u64>,
        message: String,
    },
    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId { path: String, line: u64, id: String },
    #[error("split is empty")]
    EmptySplit,
}

impl DatasetError {
    fn schema(path: &Path, line: Option<u64>, message: impl Into<String>) -> Self {
        DatasetError::Schema {
            path: path.display().to_string(),
            line,
            message: message.into(),
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        DatasetError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    /// Guesses the split from a file stem such as `iac_v1.train`; anything
    /// unrecognised is treated as a test split.
    pub fn infer(path: &Path) -> SplitName {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_lowercase();
        let words: Vec<&str> = stem.split(|c: char| !c.is_alphanumeric()).collect();
        if words.contains(&"train") {
            SplitName::Train
        } else if words.iter().any(|w| *w == "val" || *w == "valid" || *w == "dev") {
            SplitName::Val
        } else {
            SplitName::Test
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub instances: Vec<DatasetInstance>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DatasetInstance> {
        self.instances.iter().find(|i| i.id == id)
    }
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn open(path: &Path) -> Result<File, DatasetError> {
    File::open(path).map_err(|e| DatasetError::io(path, e))
}

fn label_from_json(v: &Value) -> Option<i64> {
    v.as_i64()
}

/// Fails fast on the first malformed line; blank lines are skipped but
/// still advance the line counter.
pub fn load_jsonl(path: &Path) -> Result<DatasetSplit, DatasetError> {
    let reader = BufReader::new(open(path)?);
    let fname = file_label(path);
    let mut seen = HashSet::new();
    let mut instances = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx as u64 + 1;
        let line = line.map_err(|e| DatasetError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| DatasetError::schema(path, Some(lineno), m);
        let obj: Value = serde_json::from_str(&line).map_err(|e| bad(format!("invalid JSON: {e}")))?;
        let obj = obj.as_object().ok_or_else(|| bad("record is not an object".into()))?;
        let text = obj
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("missing string field \"text\"".into()))?;
        let label = obj
            .get("label")
            .and_then(label_from_json)
            .ok_or_else(|| bad("missing integer field \"label\"".into()))?;
        let id = match obj.get("id") {
            None | Some(Value::Null) => format!("{fname}:{lineno}"),
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            Some(other) => return Err(bad(format!("id must be a string, got {other}"))),
        };
        let inst = DatasetInstance::new(id, text, label).map_err(|e| bad(e.to_string()))?;
        if !seen.insert(inst.id.clone()) {
            return Err(DatasetError::DuplicateId {
                path: path.display().to_string(),
                line: lineno,
                id: inst.id,
            });
        }
        instances.push(inst);
    }
    if instances.is_empty() {
        return Err(DatasetError::schema(path, None, "empty split"));
    }
    Ok(DatasetSplit {
        name: SplitName::infer(path),
        instances,
    })
}

/// RFC 4180 CSV with a header row. Without an id column, ids are
/// `<filename>:<line>` using the line on which the record starts.
pub fn load_csv(
    path: &Path,
    text_column: &str,
    label_column: &str,
    id_column: Option<&str>,
) -> Result<DatasetSplit, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(open(path)?);
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::schema(path, Some(1), format!("unreadable header: {e}")))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DatasetError::schema(path, Some(1), format!("missing column {name:?}")))
    };
    let text_idx = column(text_column)?;
    let label_idx = column(label_column)?;
    let id_idx = id_column.map(column).transpose()?;

    let fname = file_label(path);
    let mut seen = HashSet::new();
    let mut instances = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line());
            DatasetError::schema(path, line, format!("malformed CSV: {e}"))
        })?;
        let lineno = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |m: String| DatasetError::schema(path, Some(lineno), m);
        let text = record.get(text_idx).ok_or_else(|| bad("short record".into()))?;
        let raw_label = record.get(label_idx).ok_or_else(|| bad("short record".into()))?.trim();
        let label: i64 = raw_label
            .parse()
            .map_err(|_| bad(format!("label {raw_label:?} is not 0 or 1")))?;
        let id = match id_idx {
            Some(i) => record.get(i).ok_or_else(|| bad("short record".into()))?.to_string(),
            None => format!("{fname}:{lineno}"),
        };
        let inst = DatasetInstance::new(id, text, label).map_err(|e| bad(e.to_string()))?;
        if !seen.insert(inst.id.clone()) {
            return Err(DatasetError::DuplicateId {
                path: path.display().to_string(),
                line: lineno,
                id: inst.id,
            });
        }
        instances.push(inst);
    }
    if instances.is_empty() {
        return Err(DatasetError::schema(path, None, "empty split"));
    }
    Ok(DatasetSplit {
        name: SplitName::infer(path),
        instances,
    })
}

#[derive(Serialize)]
struct JsonlRecord<'a> {
    id: &'a str,
    text: &'a str,
    label: u8,
}

pub fn write_jsonl<W: Write>(split: &DatasetSplit, mut out: W) -> io::Result<()> {
    for inst in &split.instances {
        let rec = JsonlRecord {
            id: &inst.id,
            text: &inst.text,
            label: inst.label,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitStats {
    pub count: usize,
    pub negatives: usize,
    pub positives: usize,
    /// Mean whitespace-token count.
    pub mean_tokens: f64,
}

impl SplitStats {
    pub fn mean_tokens_rounded(&self) -> u64 {
        self.mean_tokens.round() as u64
    }
}

pub fn split_stats(split: &DatasetSplit) -> Result<SplitStats, DatasetError> {
    if split.is_empty() {
        return Err(DatasetError::EmptySplit);
    }
    let positives = split.instances.iter().filter(|i| i.label == 1).count();
    let tokens: usize = split.instances.iter().map(|i| i.text.split_whitespace().count()).sum();
    Ok(SplitStats {
        count: split.len(),
        negatives: split.len() - positives,
        positives,
        mean_tokens: tokens as f64 / split.len() as f64,
    })
}

/// Published sizes of the four standard benchmarks, for checking converted
/// distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchmarkShape {
    pub name: &'static str,
    pub train: usize,
    /// Absent for corpora shipped without a validation split.
    pub val: Option<usize>,
    pub test: usize,
    pub avg_len: u64,
}

pub const BENCHMARKS: [BenchmarkShape; 4] = [
    BenchmarkShape { name: "IAC-V1", train: 1595, val: Some(80), test: 320, avg_len: 68 },
    BenchmarkShape { name: "IAC-V2", train: 5216, val: Some(262), test: 1042, avg_len: 43 },
    BenchmarkShape { name: "SemEval-2018", train: 3634, val: Some(200), test: 784, avg_len: 14 },
    BenchmarkShape { name: "MuSTARD", train: 552, val: None, test: 138, avg_len: 14 },
];

pub fn benchmark(name: &str) -> Option<&'static BenchmarkShape> {
    BENCHMARKS.iter().find(|b| b.name.eq_ignore_ascii_case(name))
}

impl BenchmarkShape {
    pub fn expected(&self, split: SplitName) -> Option<usize> {
        match split {
            SplitName::Train => Some(self.train),
            SplitName::Val => self.val,
            SplitName::Test => Some(self.test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationaleRecord {
    pub chain_text: String,
    pub label: u8,
}

/// Reads `{"chain_text", "label"}` lines; every chain must be canonical.
pub fn load_rationales(path: &Path) -> Result<Vec<RationaleRecord>, DatasetError> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx as u64 + 1;
        let line = line.map_err(|e| DatasetError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| DatasetError::schema(path, Some(lineno), m);
        let obj: Value = serde_json::from_str(&line).map_err(|e| bad(format!("invalid JSON: {e}")))?;
        let chain_text = obj
            .get("chain_text")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("missing string field \"chain_text\"".into()))?;
        let label = match obj.get("label").and_then(Value::as_i64) {
            Some(0) => 0,
            Some(1) => 1,
            Some(other) => return Err(bad(format!("label {other} is not 0 or 1"))),
            None => return Err(bad("missing integer field \"label\"".into())),
        };
        ReasoningChain::parse_canonical(chain_text).map_err(|e| bad(format!("chain_text is not canonical: {e}")))?;
        out.push(RationaleRecord {
            chain_text: chain_text.to_string(),
            label,
        });
    }
    if out.is_empty() {
        return Err(DatasetError::schema(path, None, "empty split"));
    }
    Ok(out)
}

pub fn write_rationales<W: Write>(records: &[RationaleRecord], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
