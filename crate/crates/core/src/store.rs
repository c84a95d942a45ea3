//! JSONL record stores, the stage-one trace buffer, summary CSV export, and
//! run manifests.
//!
//! JSONL framing is strict on load: every line is one JSON object, the file
//! ends with a newline, and blank lines are errors. A truncated final line
//! therefore fails loudly instead of silently dropping a record.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{BudgetSpec, ReasoningTrace};
use crate::runner::AccuracySummary;
use crate::truncation::extract_think;

// --- jsonl ------------------------------------------------------------------

/// Appends one JSON line per item, creating the file if needed.
pub fn append_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut buf = String::new();
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| Error::store(path, format!("cannot serialize record: {e}")))?;
        buf.push_str(&line);
        buf.push('\n');
    }
    file.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes the items as a fresh JSONL file, replacing anything already there.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = String::new();
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| Error::store(path, format!("cannot serialize record: {e}")))?;
        buf.push_str(&line);
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Loads a whole JSONL file. Empty file means empty list; anything else must
/// be newline-terminated JSON objects, one per line.
pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.is_empty() {
        return Ok(Vec::new());
    }
    if !text.ends_with('\n') {
        let last = text.lines().count();
        return Err(Error::store(
            path,
            format!("line {last}: truncated final line (missing trailing newline)"),
        ));
    }
    let mut out = Vec::new();
    for (ix, line) in text.lines().enumerate() {
        let lineno = ix + 1;
        if line.trim().is_empty() {
            return Err(Error::store(path, format!("line {lineno}: blank line inside record stream")));
        }
        let item = serde_json::from_str(line).map_err(|e| {
            Error::store(path, format!("line {lineno}: {e}: {}", excerpt(line)))
        })?;
        out.push(item);
    }
    Ok(out)
}

fn excerpt(line: &str) -> String {
    let cut: String = line.chars().take(60).collect();
    if cut.len() < line.len() {
        format!("{cut}…")
    } else {
        cut
    }
}

// --- stage-one trace store -----------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceStoreEntry {
    pub model: String,
    pub question_id: String,
    pub raw: String,
    pub thinking: String,
    pub thinking_tokens: u64,
    pub input_tokens: u64,
    pub created_at: DateTime<Utc>,
}

impl TraceStoreEntry {
    pub fn to_trace(&self) -> ReasoningTrace {
        ReasoningTrace {
            raw: self.raw.clone(),
            thinking: self.thinking.clone(),
            answer_text: extract_think(&self.raw).remainder,
            thinking_tokens: self.thinking_tokens,
            input_tokens: self.input_tokens,
        }
    }
}

/// In-memory view of the stage-one buffer, keyed by (model, question).
#[derive(Debug, Default)]
pub struct TraceStore {
    entries: BTreeMap<(String, String), TraceStoreEntry>,
}

impl TraceStore {
    pub fn new() -> Self {
        TraceStore::default()
    }

    pub fn insert(&mut self, entry: TraceStoreEntry) -> Result<()> {
        let key = (entry.model.clone(), entry.question_id.clone());
        if self.entries.contains_key(&key) {
            return Err(Error::Plan(format!(
                "duplicate trace for model {} question {}",
                key.0, key.1
            )));
        }
        self.entries.insert(key, entry);
        Ok(())
    }

    pub fn from_entries(entries: Vec<TraceStoreEntry>) -> Result<Self> {
        let mut store = TraceStore::new();
        for e in entries {
            store.insert(e)?;
        }
        Ok(store)
    }

    pub fn get(&self, model: &str, question_id: &str) -> Option<&TraceStoreEntry> {
        self.entries.get(&(model.to_string(), question_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceStoreEntry> {
        self.entries.values()
    }
}

pub fn load_trace_store(path: &Path) -> Result<TraceStore> {
    let entries: Vec<TraceStoreEntry> = load_jsonl(path)?;
    TraceStore::from_entries(entries)
        .map_err(|e| Error::store(path, format!("invalid trace store: {e}")))
}

// --- summary csv -------------------------------------------------------------

pub const SUMMARY_CSV_HEADER: &str = "model,dataset,budget,accuracy,n,mean_thinking_tokens";

/// Writes summaries as CSV, rows sorted by (model, dataset, budget). Field
/// values never need quoting because identifiers are validated comma-free at
/// config load; this function re-checks rather than emitting a broken file.
pub fn export_summary_csv(summaries: &[AccuracySummary], path: &Path) -> Result<()> {
    let mut rows: Vec<&AccuracySummary> = summaries.iter().collect();
    rows.sort_by(|a, b| {
        (&a.model, &a.dataset_id, a.budget).cmp(&(&b.model, &b.dataset_id, b.budget))
    });
    let mut out = String::from(SUMMARY_CSV_HEADER);
    out.push('\n');
    for s in rows {
        for (field, value) in [("model", &s.model), ("dataset", &s.dataset_id)] {
            if value.contains(',') || value.contains('\n') || value.contains('\r') {
                return Err(Error::store(
                    path,
                    format!("{field} {value:?} contains a comma or newline and cannot be written as CSV"),
                ));
            }
        }
        out.push_str(&format!(
            "{},{},{},{:.4},{},{:.2}\n",
            s.model, s.dataset_id, s.budget, s.accuracy, s.n, s.mean_thinking_tokens
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a summary CSV produced by `export_summary_csv`.
pub fn summaries_from_csv(path: &Path) -> Result<Vec<AccuracySummary>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == SUMMARY_CSV_HEADER => {}
        Some((_, header)) => {
            return Err(Error::store(
                path,
                format!("unexpected header {:?}, expected {SUMMARY_CSV_HEADER:?}", excerpt(header)),
            ))
        }
        None => return Err(Error::store(path, "empty file, expected a header row".to_string())),
    }
    let mut out = Vec::new();
    for (ix, line) in lines {
        let lineno = ix + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::store(
                path,
                format!("line {lineno}: expected 6 fields, found {}: {}", fields.len(), excerpt(line)),
            ));
        }
        let parse_err = |what: &str, detail: String| {
            Error::store(path, format!("line {lineno}: bad {what}: {detail}"))
        };
        let budget: BudgetSpec =
            fields[2].parse().map_err(|e: String| parse_err("budget", e))?;
        let accuracy: f64 = fields[3].parse().map_err(|e| parse_err("accuracy", format!("{e}")))?;
        let n: u64 = fields[4].parse().map_err(|e| parse_err("n", format!("{e}")))?;
        let mean_thinking_tokens: f64 =
            fields[5].parse().map_err(|e| parse_err("mean_thinking_tokens", format!("{e}")))?;
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(parse_err("accuracy", format!("{accuracy} outside [0,1]")));
        }
        if n == 0 {
            return Err(parse_err("n", "must be positive".to_string()));
        }
        out.push(AccuracySummary {
            model: fields[0].to_string(),
            dataset_id: fields[1].to_string(),
            budget,
            accuracy,
            n,
            mean_thinking_tokens,
        });
    }
    Ok(out)
}

// --- manifests --------------------------------------------------------------

pub const MANIFEST_FILE: &str = "manifest.json";

/// What a run leaves behind so it can be audited and reproduced. Contains no
/// timestamps: identical inputs must yield byte-identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub app_version: String,
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let path = manifest_path(dir);
    let mut body = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::store(&path, format!("cannot serialize manifest: {e}")))?;
    body.push('\n');
    fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

pub fn load_manifest(dir: &Path) -> Result<RunManifest> {
    let path = manifest_path(dir);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::store(&path, format!("bad manifest: {e}")))
}

/// Prepares an output directory. A directory holding a manifest is a finished
/// run and is not overwritten unless `force` is set.
pub fn ensure_fresh_dir(dir: &Path, force: bool) -> Result<()> {
    if manifest_path(dir).exists() && !force {
        return Err(Error::store(
            dir,
            "already holds a completed run (manifest.json present); pass --force to overwrite".to_string(),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
