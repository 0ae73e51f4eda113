//! Tabular artifacts: row schemas, CSV/JSON encoding, atomic file writes and
//! the readers used by `report`.
//!
//! CSV files start with `#`-prefixed metadata lines (tool version, resolved
//! configuration as JSON, RNG, conventions) followed by a header row. JSON
//! files carry the same metadata next to a `rows` array.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enumeration::AuditRow;
use crate::estimator::{ComparisonRow, ThresholdFlag, ThresholdResult};
use crate::montecarlo::ThetaEstimate;
use crate::series::{SeriesKind, SeriesValue};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {reason}")]
    Malformed { path: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format '{other}' (expected csv|json)")),
        }
    }
}

/// Which table a file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Counts,
    Series,
    Theta,
    Threshold,
    Comparison,
}

impl ArtifactKind {
    pub fn header(self) -> &'static [&'static str] {
        match self {
            ArtifactKind::Counts => &[
                "d",
                "k",
                "m",
                "length",
                "exact_count",
                "paper_bound",
                "bound_holds",
                "computed",
            ],
            ArtifactKind::Series => &["d", "p", "k", "kind", "truncation", "value"],
            ArtifactKind::Theta => &[
                "d",
                "k",
                "p",
                "trials",
                "seed",
                "successes",
                "theta",
                "ci_low",
                "ci_high",
                "elapsed_s",
            ],
            ArtifactKind::Threshold => &[
                "d",
                "k",
                "target",
                "p_star",
                "ci_low",
                "ci_high",
                "trials_used",
                "steps",
                "seed",
                "flag",
            ],
            ArtifactKind::Comparison => &[
                "k",
                "p_star",
                "ci_low",
                "ci_high",
                "paper_prediction",
                "consistent",
                "flag",
            ],
        }
    }

    fn from_header(cols: &[String]) -> Option<Self> {
        [
            ArtifactKind::Counts,
            ArtifactKind::Series,
            ArtifactKind::Theta,
            ArtifactKind::Threshold,
            ArtifactKind::Comparison,
        ]
        .into_iter()
        .find(|k| {
            k.header()
                .iter()
                .copied()
                .eq(cols.iter().map(String::as_str))
        })
    }
}

pub type CountRow = AuditRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub d: usize,
    pub p: f64,
    pub k: u64,
    pub kind: SeriesKind,
    pub truncation: Option<u64>,
    pub value: f64,
}

impl From<&SeriesValue> for SeriesRow {
    fn from(v: &SeriesValue) -> Self {
        SeriesRow {
            d: v.d,
            p: v.p,
            k: v.k,
            kind: v.kind,
            truncation: v.truncation,
            value: v.value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaRow {
    pub d: usize,
    pub k: u64,
    pub p: f64,
    pub trials: u64,
    pub seed: u64,
    pub successes: u64,
    pub theta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub elapsed_s: f64,
}

impl From<&ThetaEstimate> for ThetaRow {
    fn from(e: &ThetaEstimate) -> Self {
        ThetaRow {
            d: e.spec.d,
            k: e.spec.k,
            p: e.spec.p,
            trials: e.spec.trials,
            seed: e.spec.seed,
            successes: e.successes,
            theta: e.point,
            ci_low: e.ci_low,
            ci_high: e.ci_high,
            elapsed_s: e.elapsed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub d: usize,
    pub k: u64,
    pub target: f64,
    pub p_star: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials_used: u64,
    pub steps: u32,
    pub seed: u64,
    pub flag: ThresholdFlag,
}

impl From<&ThresholdResult> for ThresholdRow {
    fn from(r: &ThresholdResult) -> Self {
        ThresholdRow {
            d: r.d,
            k: r.k,
            target: r.target_level,
            p_star: r.p_star,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            trials_used: r.trials_used,
            steps: r.bisection_steps,
            seed: r.seed,
            flag: r.flag,
        }
    }
}

impl ThresholdRow {
    /// Rebuilds a result without probe history, enough for comparison.
    pub fn to_result(&self) -> ThresholdResult {
        ThresholdResult {
            d: self.d,
            k: self.k,
            p_star: self.p_star,
            ci_low: self.ci_low,
            ci_high: self.ci_high,
            trials_used: self.trials_used,
            bisection_steps: self.steps,
            target_level: self.target,
            seed: self.seed,
            flag: self.flag,
            ambiguous_steps: 0,
            probes: Vec::new(),
        }
    }
}

/// Metadata written ahead of every table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub kind: ArtifactKind,
    pub tool_version: String,
    pub generated_at: String,
    pub config: serde_json::Value,
    #[serde(default)]
    pub notes: Vec<(String, String)>,
}

impl Metadata {
    pub fn new(kind: ArtifactKind, config: serde_json::Value) -> Self {
        Metadata {
            kind,
            tool_version: crate::VERSION.to_string(),
            generated_at: chrono::Utc::now().to_rfc3339(),
            config,
            notes: Vec::new(),
        }
    }

    pub fn note(mut self, key: &str, value: impl Into<String>) -> Self {
        self.notes.push((key.to_string(), value.into()));
        self
    }
}

/// Encodes a table in the requested format.
pub fn encode<R: Serialize>(
    meta: &Metadata,
    rows: &[R],
    format: Format,
) -> Result<Vec<u8>, OutputError> {
    match format {
        Format::Json => {
            let doc = serde_json::json!({
                "kind": meta.kind,
                "tool_version": meta.tool_version,
                "generated_at": meta.generated_at,
                "config": meta.config,
                "notes": meta.notes,
                "rows": rows,
            });
            let mut out = serde_json::to_vec_pretty(&doc)?;
            out.push(b'\n');
            Ok(out)
        }
        Format::Csv => {
            let mut out = Vec::new();
            let _ = writeln!(
                out,
                "# kind: {}",
                serde_json::to_string(&meta.kind)?.trim_matches('"')
            );
            let _ = writeln!(out, "# tool_version: {}", meta.tool_version);
            let _ = writeln!(out, "# generated_at: {}", meta.generated_at);
            let _ = writeln!(out, "# config: {}", serde_json::to_string(&meta.config)?);
            for (k, v) in &meta.notes {
                let _ = writeln!(out, "# {k}: {}", v.replace('\n', " "));
            }
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(&mut out);
            w.write_record(meta.kind.header())?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush().map_err(|e| OutputError::Io {
                path: "<buffer>".into(),
                source: e,
            })?;
            drop(w);
            Ok(out)
        }
    }
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename, so
/// the final path only ever holds a complete file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), OutputError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| OutputError::Io {
        path: path.display().to_string(),
        source: e.error,
    })?;
    Ok(())
}

/// A table read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Counts(Metadata, Vec<CountRow>),
    Series(Metadata, Vec<SeriesRow>),
    Theta(Metadata, Vec<ThetaRow>),
    Threshold(Metadata, Vec<ThresholdRow>),
    Comparison(Metadata, Vec<ComparisonRow>),
}

impl Artifact {
    pub fn kind(&self) -> ArtifactKind {
        match self {
            Artifact::Counts(..) => ArtifactKind::Counts,
            Artifact::Series(..) => ArtifactKind::Series,
            Artifact::Theta(..) => ArtifactKind::Theta,
            Artifact::Threshold(..) => ArtifactKind::Threshold,
            Artifact::Comparison(..) => ArtifactKind::Comparison,
        }
    }

    pub fn metadata(&self) -> &Metadata {
        match self {
            Artifact::Counts(m, _)
            | Artifact::Series(m, _)
            | Artifact::Theta(m, _)
            | Artifact::Threshold(m, _)
            | Artifact::Comparison(m, _) => m,
        }
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> OutputError {
    OutputError::Malformed {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn parse_csv_metadata(
    path: &Path,
    text: &str,
    kind: ArtifactKind,
) -> Result<Metadata, OutputError> {
    let mut meta = Metadata {
        kind,
        tool_version: String::new(),
        generated_at: String::new(),
        config: serde_json::Value::Null,
        notes: Vec::new(),
    };
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let body = line.trim_start_matches('#').trim_start();
        let Some((key, value)) = body.split_once(": ") else {
            continue;
        };
        match key {
            "kind" => {}
            "tool_version" => meta.tool_version = value.to_string(),
            "generated_at" => meta.generated_at = value.to_string(),
            "config" => {
                meta.config = serde_json::from_str(value)
                    .map_err(|e| malformed(path, format!("bad config line: {e}")))?
            }
            _ => meta.notes.push((key.to_string(), value.to_string())),
        }
    }
    Ok(meta)
}

fn csv_rows<R: DeserializeOwned>(text: &str) -> Result<Vec<R>, OutputError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    r.deserialize()
        .map(|row| row.map_err(OutputError::from))
        .collect()
}

fn json_rows<R: DeserializeOwned>(v: serde_json::Value) -> Result<Vec<R>, OutputError> {
    Ok(serde_json::from_value(v)?)
}

/// Reads any artifact this crate writes; the format is sniffed from content.
pub fn read_artifact(path: &Path) -> Result<Artifact, OutputError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    if text.trim_start().starts_with('{') {
        let mut doc: serde_json::Value = serde_json::from_str(&text)?;
        let rows = doc
            .get_mut("rows")
            .map(serde_json::Value::take)
            .ok_or_else(|| malformed(path, "missing rows"))?;
        let meta: Metadata = serde_json::from_value(doc)?;
        return Ok(match meta.kind {
            ArtifactKind::Counts => Artifact::Counts(meta, json_rows(rows)?),
            ArtifactKind::Series => Artifact::Series(meta, json_rows(rows)?),
            ArtifactKind::Theta => Artifact::Theta(meta, json_rows(rows)?),
            ArtifactKind::Threshold => Artifact::Threshold(meta, json_rows(rows)?),
            ArtifactKind::Comparison => Artifact::Comparison(meta, json_rows(rows)?),
        });
    }
    let header_line = text
        .lines()
        .find(|l| !l.starts_with('#') && !l.trim().is_empty())
        .ok_or_else(|| malformed(path, "no header row"))?;
    let cols: Vec<String> = header_line
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let kind = ArtifactKind::from_header(&cols)
        .ok_or_else(|| malformed(path, format!("unrecognised header '{header_line}'")))?;
    let meta = parse_csv_metadata(path, &text, kind)?;
    Ok(match kind {
        ArtifactKind::Counts => Artifact::Counts(meta, csv_rows(&text)?),
        ArtifactKind::Series => Artifact::Series(meta, csv_rows(&text)?),
        ArtifactKind::Theta => Artifact::Theta(meta, csv_rows(&text)?),
        ArtifactKind::Threshold => Artifact::Threshold(meta, csv_rows(&text)?),
        ArtifactKind::Comparison => Artifact::Comparison(meta, csv_rows(&text)?),
    })
}
