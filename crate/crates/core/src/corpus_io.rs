//! Corpus and criteria ingestion plus the per-stage JSONL artifact store.
//!
//! Run directory layout:
//!
//! ```text
//! <run_dir>/summaries.jsonl     one RunArtifact per line, stage = summary
//! <run_dir>/retrievals.jsonl    stage = retrieval
//! <run_dir>/assessments.jsonl   stage = assessment
//! <run_dir>/ledger.jsonl        one TokenLedgerEntry per completion call
//! <run_dir>/warnings.jsonl      skipped documents, parse warnings
//! <run_dir>/errors.jsonl        per-document stage failures
//! ```
//!
//! Stage files are append-only while a run is in progress. Readers resolve
//! duplicates by keeping the last record for each `(doc_id, stage)`.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::llm_gateway::TokenLedgerEntry;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: unsupported header {found:?}; expected `title,body` or `id,title,body`")]
    BadHeader { path: PathBuf, found: Vec<String> },
    #[error("{path}: row {row} has {found} columns, expected {expected}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: duplicate document id `{id}` at row {row}")]
    DuplicateId { path: PathBuf, id: String, row: usize },
    #[error("{0}: criteria document is empty")]
    EmptyCriteria(PathBuf),
    #[error("{0}: file is not valid UTF-8")]
    InvalidUtf8(PathBuf),
    #[error("serializing artifact: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    }
}

/// One corpus entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
}

impl Document {
    pub fn has_body(&self) -> bool {
        !self.body.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CriteriaDocument {
    pub source_path: String,
    pub text: String,
}

fn ordinal_id(row: usize) -> String {
    format!("{row:04}")
}

/// Loads a `title,body` (or `id,title,body`) CSV corpus.
///
/// Without an id column, documents are numbered `0001`, `0002`, ... by data
/// row. Rows with the wrong number of columns are rejected with their
/// 1-based data row number.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>, CorpusError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(CorpusError::MissingFile(path.to_owned()));
    }
    let csv_err = |source| CorpusError::Csv {
        path: path.to_owned(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(csv_err)?;

    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().trim_start_matches('\u{feff}').to_ascii_lowercase())
        .collect();
    let has_id = match header.len() {
        2 => false,
        3 if header[0] == "id" => true,
        _ => {
            return Err(CorpusError::BadHeader {
                path: path.to_owned(),
                found: header,
            })
        }
    };
    if !has_id && header != ["title", "body"] {
        log::warn!(
            "{}: header {:?} is not `title,body`; using columns by position",
            path.display(),
            header
        );
    }
    let expected = header.len();

    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(csv_err)?;
        if record.len() != expected {
            return Err(CorpusError::MalformedRow {
                path: path.to_owned(),
                row,
                expected,
                found: record.len(),
            });
        }
        let (doc_id, title, body) = if has_id {
            (record[0].trim().to_owned(), &record[1], &record[2])
        } else {
            (ordinal_id(row), &record[0], &record[1])
        };
        if !seen.insert(doc_id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.to_owned(),
                id: doc_id,
                row,
            });
        }
        let doc = Document {
            doc_id,
            title: title.to_owned(),
            body: body.to_owned(),
        };
        if !doc.has_body() {
            log::warn!("{}: document {} has an empty body", path.display(), doc.doc_id);
        }
        docs.push(doc);
    }
    if docs.is_empty() {
        log::warn!("{}: corpus has a header but no documents", path.display());
    }
    Ok(docs)
}

/// Writes documents as an `id,title,body` CSV.
pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let csv_err = |source| CorpusError::Csv {
        path: path.to_owned(),
        source,
    };
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    writer.write_record(["id", "title", "body"]).map_err(csv_err)?;
    for doc in docs {
        writer
            .write_record([&doc.doc_id, &doc.title, &doc.body])
            .map_err(csv_err)?;
    }
    writer.flush().map_err(io_err(path))?;
    Ok(())
}

/// Loads the criteria text verbatim (line endings preserved).
pub fn load_criteria(path: impl AsRef<Path>) -> Result<CriteriaDocument, CorpusError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(CorpusError::MissingFile(path.to_owned()));
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    let text = String::from_utf8(bytes).map_err(|_| CorpusError::InvalidUtf8(path.to_owned()))?;
    if text.trim().is_empty() {
        return Err(CorpusError::EmptyCriteria(path.to_owned()));
    }
    Ok(CriteriaDocument {
        source_path: path.display().to_string(),
        text,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Summary,
    Retrieval,
    Assessment,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Summary, Stage::Retrieval, Stage::Assessment];

    pub fn file_name(self) -> &'static str {
        match self {
            Stage::Summary => "summaries.jsonl",
            Stage::Retrieval => "retrievals.jsonl",
            Stage::Assessment => "assessments.jsonl",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Summary => "summary",
            Stage::Retrieval => "retrieval",
            Stage::Assessment => "assessment",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One persisted stage result for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub doc_id: String,
    pub stage: Stage,
    pub payload: serde_json::Value,
    pub created_at: DateTime<Utc>,
    pub token_usage: TokenLedgerEntry,
}

impl RunArtifact {
    pub fn new<T: Serialize>(
        doc_id: impl Into<String>,
        stage: Stage,
        payload: &T,
        created_at: DateTime<Utc>,
        token_usage: TokenLedgerEntry,
    ) -> Result<Self, CorpusError> {
        Ok(Self {
            doc_id: doc_id.into(),
            stage,
            payload: serde_json::to_value(payload)?,
            created_at,
            token_usage,
        })
    }

    pub fn payload_as<T: DeserializeOwned>(&self) -> Result<T, CorpusError> {
        Ok(serde_json::from_value(self.payload.clone())?)
    }
}

/// A non-fatal note attached to a document, written to `warnings.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WarningRecord {
    pub doc_id: String,
    pub stage: Stage,
    pub message: String,
}

/// A per-document failure, written to `errors.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub doc_id: String,
    pub stage: Stage,
    pub message: String,
    pub backend_unreachable: bool,
}

pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const WARNINGS_FILE: &str = "warnings.jsonl";
pub const ERRORS_FILE: &str = "errors.jsonl";

/// Append-only JSONL store rooted at a run directory. One writer per file:
/// appends are serialized through an internal lock.
#[derive(Debug)]
pub struct ArtifactStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ArtifactStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, CorpusError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn stage_path(&self, stage: Stage) -> PathBuf {
        self.dir.join(stage.file_name())
    }

    /// Appends one serialized line to `file_name` under the run directory.
    pub fn append_line<T: Serialize>(&self, file_name: &str, record: &T) -> Result<PathBuf, CorpusError> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let path = self.dir.join(file_name);
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        file.write_all(line.as_bytes()).map_err(io_err(&path))?;
        file.flush().map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn persist(&self, artifact: &RunArtifact) -> Result<PathBuf, CorpusError> {
        self.append_line(artifact.stage.file_name(), artifact)
    }

    /// Reads every parseable line of `file_name`. A torn trailing line left
    /// by a crash is skipped with a warning.
    pub fn read_lines<T: DeserializeOwned>(&self, file_name: &str) -> Result<Vec<T>, CorpusError> {
        let path = self.dir.join(file_name);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line) {
                Ok(v) => out.push(v),
                Err(e) => log::warn!("{}:{}: skipping unreadable line: {e}", path.display(), i + 1),
            }
        }
        Ok(out)
    }

    /// Latest artifact per document for `stage` (last writer wins).
    pub fn load_stage(&self, stage: Stage) -> Result<BTreeMap<String, RunArtifact>, CorpusError> {
        let mut latest = BTreeMap::new();
        for artifact in self.read_lines::<RunArtifact>(stage.file_name())? {
            if artifact.stage == stage {
                latest.insert(artifact.doc_id.clone(), artifact);
            }
        }
        Ok(latest)
    }

    /// Rewrites `file_name` with `lines` via a temp file and rename.
    fn rewrite<T: Serialize>(&self, file_name: &str, lines: &[T]) -> Result<(), CorpusError> {
        let path = self.dir.join(file_name);
        let tmp = self.dir.join(format!("{file_name}.tmp"));
        let mut buf = String::new();
        for line in lines {
            buf.push_str(&serde_json::to_string(line)?);
            buf.push('\n');
        }
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        fs::write(&tmp, buf).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(())
    }

    /// Collapses a stage file to one record per document, ordered by doc_id.
    pub fn compact_stage(&self, stage: Stage) -> Result<(), CorpusError> {
        if !self.stage_path(stage).exists() {
            return Ok(());
        }
        let latest: Vec<RunArtifact> = self.load_stage(stage)?.into_values().collect();
        self.rewrite(stage.file_name(), &latest)
    }

    /// Sorts an auxiliary JSONL file and drops exact duplicate lines.
    pub fn sort_dedup_lines<T>(&self, file_name: &str) -> Result<(), CorpusError>
    where
        T: Serialize + DeserializeOwned + Ord,
    {
        if !self.dir.join(file_name).exists() {
            return Ok(());
        }
        let mut lines: Vec<T> = self.read_lines(file_name)?;
        lines.sort();
        lines.dedup();
        self.rewrite(file_name, &lines)
    }

    /// Stable-sorts an auxiliary JSONL file by a key without dropping lines.
    pub fn sort_lines_by_key<T, K, F>(&self, file_name: &str, key: F) -> Result<(), CorpusError>
    where
        T: Serialize + DeserializeOwned,
        K: Ord,
        F: FnMut(&T) -> K,
    {
        if !self.dir.join(file_name).exists() {
            return Ok(());
        }
        let mut lines: Vec<T> = self.read_lines(file_name)?;
        lines.sort_by_key(key);
        self.rewrite(file_name, &lines)
    }
}
