//! Orchestration of full-pipeline and ablation runs.
//!
//! A run directory holds `run.json` (the settings it was created with), one
//! JSONL file per stage, `ledger.jsonl`, `warnings.jsonl`, `errors.jsonl`,
//! the cached criteria index, and `report.json`. Re-running the same config
//! resumes: documents with an assessment are skipped and completed stages
//! of the others are reused. Every document passes through its stages in
//! order; documents run concurrently on a bounded worker pool.

pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{BackendConfig, BackendKind, ClockSetting, ConfigError, Mode, RunConfig, RUN_DIR_ENV};
pub use report::{format_comparison, format_report, RunReport, REPORT_FILE};

use crate::clock::{FixedClock, SystemClock};
use crate::corpus_io::{
    load_corpus, load_criteria, ArtifactStore, CorpusError, CriteriaDocument, Document, ErrorRecord, RunArtifact,
    Stage, WarningRecord, ERRORS_FILE, LEDGER_FILE, WARNINGS_FILE,
};
use crate::criteria_store::{sha256_hex, CriteriaIndex, IndexError, RetrievalResult, INDEX_FILE};
use crate::llm_gateway::{
    CompletionBackend, EmbeddingBackend, HttpCompletionBackend, HttpEmbeddingBackend, Ledger, LlmGateway,
    MockCompletionBackend, MockEmbeddingBackend, TokenLedgerEntry,
};
use crate::rag_compare::{
    complete_and_parse, format_passages, render_ca_prompt, render_merged_prompt, retrieval_query, run_rag, Assessment,
    CompareError, ComparisonContext, QueryMode,
};
use crate::summarizer::{summarize_and_persist, SummarizeError, SummaryRecord};

pub const MANIFEST_FILE: &str = "run.json";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("criteria index: {0}")]
    Index(#[from] IndexError),
    #[error("cannot sample {requested} documents from a corpus of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// 2 for configuration and input problems, 4 when the embedding
    /// backend could not be reached while indexing.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Index(IndexError::Gateway(e)) if e.is_unreachable() => 4,
            _ => 2,
        }
    }
}

/// Uniform sample of `n` documents without replacement, reproducible for a
/// given seed. The result is in draw order.
pub fn sample_corpus(docs: &[Document], n: usize, seed: u64) -> Result<Vec<Document>, RunError> {
    if n > docs.len() || n == 0 {
        return Err(RunError::SampleTooLarge {
            requested: n,
            available: docs.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, docs.len(), n)
        .into_iter()
        .map(|i| docs[i].clone())
        .collect())
}

/// Settings that must match for a run directory to be resumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub mode: Mode,
    pub company: String,
    pub target_topic: String,
    pub k: usize,
    pub query_mode: QueryMode,
    pub summary: crate::summarizer::SummaryConfig,
    pub sample: Option<usize>,
    pub seed: u64,
    pub corpus_sha256: String,
    pub criteria_sha256: String,
    pub machine_model: String,
    pub human_model: String,
    pub embedding_model: String,
}

impl RunManifest {
    fn check_or_write(&self, dir: &Path) -> Result<(), RunError> {
        let path = dir.join(MANIFEST_FILE);
        let ours = serde_json::to_value(self).map_err(CorpusError::from)?;
        match std::fs::read_to_string(&path) {
            Ok(raw) => {
                let theirs: serde_json::Value = serde_json::from_str(&raw).map_err(CorpusError::from)?;
                let differing: Vec<&str> = ours
                    .as_object()
                    .into_iter()
                    .flatten()
                    .filter(|(k, v)| theirs.get(k.as_str()) != Some(v))
                    .map(|(k, _)| k.as_str())
                    .collect();
                if differing.is_empty() {
                    Ok(())
                } else {
                    Err(ConfigError::Invalid(format!(
                        "run directory {} was created with different settings ({}); use a new run_dir",
                        dir.display(),
                        differing.join(", ")
                    ))
                    .into())
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let json = serde_json::to_string_pretty(self).map_err(CorpusError::from)?;
                std::fs::write(&path, json + "\n")?;
                Ok(())
            }
            Err(e) => Err(e.into()),
        }
    }
}

/// Payload of a retrieval artifact. `augmented_text` is absent in `no_ca`
/// runs, where the retrieved passages go straight into the merged prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub doc_id: String,
    pub query_mode: QueryMode,
    pub retrieved: RetrievalResult,
    pub augmented_text: Option<String>,
}

fn completion_backend(cfg: &BackendConfig) -> Result<Arc<dyn CompletionBackend>, ConfigError> {
    Ok(match cfg.kind {
        BackendKind::Mock => Arc::new(MockCompletionBackend),
        BackendKind::Http => Arc::new(HttpCompletionBackend::new(
            cfg.endpoint.clone().unwrap_or_default(),
            cfg.api_key()?,
            cfg.timeout(),
        )),
    })
}

/// Gateway over the backends named in `cfg`.
pub fn build_gateway(cfg: &RunConfig) -> Result<LlmGateway, ConfigError> {
    let embedder: Arc<dyn EmbeddingBackend> = match cfg.embedding_backend.kind {
        BackendKind::Mock => Arc::new(MockEmbeddingBackend::new(cfg.embedding_dim)),
        BackendKind::Http => Arc::new(HttpEmbeddingBackend::new(
            cfg.embedding_backend.endpoint.clone().unwrap_or_default(),
            cfg.embedding_model.clone(),
            cfg.embedding_backend.api_key()?,
            cfg.embedding_backend.timeout(),
        )),
    };
    let gateway = LlmGateway::new(
        completion_backend(&cfg.machine_backend)?,
        completion_backend(&cfg.human_backend)?,
        embedder,
    )
    .with_retry(cfg.retry_policy())
    .with_max_in_flight(cfg.max_in_flight);
    Ok(if cfg.uses_fixed_clock() {
        gateway.with_clock(Arc::new(FixedClock::default()))
    } else {
        gateway.with_clock(Arc::new(SystemClock))
    })
}

/// Runs `cfg` with the backends it names.
pub fn run(cfg: &RunConfig) -> Result<RunReport, RunError> {
    cfg.validate()?;
    run_with_gateway(cfg, build_gateway(cfg)?)
}

/// Runs `cfg` with a caller-supplied gateway. The gateway's ledger is
/// replaced by one that also appends to the run's `ledger.jsonl`.
pub fn run_with_gateway(cfg: &RunConfig, gateway: LlmGateway) -> Result<RunReport, RunError> {
    cfg.validate()?;
    let ctx = cfg.comparison_context()?;
    let corpus_path = cfg.corpus.as_deref().expect("validated");
    let criteria_path = cfg.criteria.as_deref().expect("validated");
    let mut docs = load_corpus(corpus_path)?;
    let criteria = load_criteria(criteria_path)?;
    if let Some(n) = cfg.sample {
        docs = sample_corpus(&docs, n, cfg.seed)?;
    }

    let store = Arc::new(ArtifactStore::open(cfg.resolved_run_dir())?);
    RunManifest {
        mode: cfg.mode,
        company: cfg.company.clone(),
        target_topic: cfg.target_topic.clone(),
        k: cfg.k,
        query_mode: cfg.query_mode,
        summary: cfg.summary.clone(),
        sample: cfg.sample,
        seed: cfg.seed,
        corpus_sha256: sha256_hex(&std::fs::read_to_string(corpus_path)?),
        criteria_sha256: sha256_hex(&criteria.text),
        machine_model: cfg.machine.model.clone(),
        human_model: cfg.human.model.clone(),
        embedding_model: cfg.embedding_model.clone(),
    }
    .check_or_write(store.dir())?;

    let sink_store = Arc::clone(&store);
    let gateway = gateway.with_ledger(Ledger::with_sink(move |entry| {
        if let Err(e) = sink_store.append_line(LEDGER_FILE, entry) {
            log::error!("cannot append to {LEDGER_FILE}: {e}");
        }
    }));
    let started = Instant::now();

    let index = if cfg.mode.retrieves() {
        Some(load_or_build_index(&criteria, &gateway, store.dir())?)
    } else {
        None
    };

    let mut existing = BTreeMap::new();
    for stage in cfg.mode.stages() {
        existing.insert(*stage, store.load_stage(*stage)?);
    }
    let pipeline = Pipeline {
        cfg,
        ctx: &ctx,
        gateway: &gateway,
        store: &store,
        criteria: &criteria,
        index: index.as_ref(),
        existing,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| ConfigError::Invalid(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<DocOutcome> = pool.install(|| docs.par_iter().map(|doc| pipeline.process(doc)).collect());

    for stage in cfg.mode.stages() {
        store.compact_stage(*stage)?;
    }
    store.sort_lines_by_key(LEDGER_FILE, |e: &TokenLedgerEntry| (e.doc_id.clone(), e.stage))?;
    store.sort_dedup_lines::<WarningRecord>(WARNINGS_FILE)?;
    store.sort_dedup_lines::<ErrorRecord>(ERRORS_FILE)?;

    let entries: Vec<TokenLedgerEntry> = store.read_lines(LEDGER_FILE)?;
    let mut report = RunReport::from_ledger(cfg.mode, &entries);
    report.docs_total = docs.len();
    report.docs_processed = outcomes
        .iter()
        .filter(|o| matches!(o, DocOutcome::Completed | DocOutcome::Resumed))
        .count();
    report.docs_skipped = outcomes.iter().filter(|o| matches!(o, DocOutcome::Skipped)).count();
    report.docs_failed = outcomes
        .iter()
        .filter(|o| matches!(o, DocOutcome::Failed { .. }))
        .count();
    report.backend_unreachable = outcomes
        .iter()
        .any(|o| matches!(o, DocOutcome::Failed { unreachable: true }));
    report.wall_time_ms = gateway.clock().elapsed_ms(started);
    report.save(store.dir())?;
    Ok(report)
}

fn load_or_build_index(
    criteria: &CriteriaDocument,
    gateway: &LlmGateway,
    dir: &Path,
) -> Result<CriteriaIndex, RunError> {
    let path = dir.join(INDEX_FILE);
    if path.exists() {
        match CriteriaIndex::load(&path) {
            Ok(index) if index.criteria_sha256 == sha256_hex(&criteria.text) => return Ok(index),
            Ok(_) => log::info!("criteria changed; rebuilding {}", path.display()),
            Err(e) => log::warn!("{e}; rebuilding"),
        }
    }
    let index = CriteriaIndex::build(criteria, gateway)?;
    index.save(&path)?;
    Ok(index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DocOutcome {
    Completed,
    Resumed,
    Skipped,
    Failed { unreachable: bool },
}

struct StageFailure {
    stage: Stage,
    message: String,
    unreachable: bool,
}

impl StageFailure {
    fn store(stage: Stage, e: CorpusError) -> Self {
        Self {
            stage,
            message: e.to_string(),
            unreachable: false,
        }
    }

    fn compare(stage: Stage, e: CompareError) -> Self {
        Self {
            stage,
            unreachable: e.is_unreachable(),
            message: e.to_string(),
        }
    }
}

struct Pipeline<'a> {
    cfg: &'a RunConfig,
    ctx: &'a ComparisonContext,
    gateway: &'a LlmGateway,
    store: &'a ArtifactStore,
    criteria: &'a CriteriaDocument,
    index: Option<&'a CriteriaIndex>,
    existing: BTreeMap<Stage, BTreeMap<String, RunArtifact>>,
}

impl Pipeline<'_> {
    fn existing<T: serde::de::DeserializeOwned>(&self, stage: Stage, doc_id: &str) -> Option<T> {
        let artifact = self.existing.get(&stage)?.get(doc_id)?;
        match artifact.payload_as() {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("document {doc_id}: unreadable {stage} artifact ({e}); recomputing");
                None
            }
        }
    }

    fn warn(&self, doc_id: &str, stage: Stage, message: String) {
        let record = WarningRecord {
            doc_id: doc_id.to_owned(),
            stage,
            message,
        };
        if let Err(e) = self.store.append_line(WARNINGS_FILE, &record) {
            log::error!("cannot append to {WARNINGS_FILE}: {e}");
        }
    }

    fn process(&self, doc: &Document) -> DocOutcome {
        if self
            .existing
            .get(&Stage::Assessment)
            .is_some_and(|m| m.contains_key(&doc.doc_id))
        {
            return DocOutcome::Resumed;
        }
        if !doc.has_body() {
            self.warn(&doc.doc_id, Stage::Summary, "empty body; document skipped".into());
            return DocOutcome::Skipped;
        }
        match self.run_stages(doc) {
            Ok(()) => DocOutcome::Completed,
            Err(f) => {
                log::error!("document {} failed at {}: {}", doc.doc_id, f.stage, f.message);
                let record = ErrorRecord {
                    doc_id: doc.doc_id.clone(),
                    stage: f.stage,
                    message: f.message,
                    backend_unreachable: f.unreachable,
                };
                if let Err(e) = self.store.append_line(ERRORS_FILE, &record) {
                    log::error!("cannot append to {ERRORS_FILE}: {e}");
                }
                DocOutcome::Failed {
                    unreachable: record.backend_unreachable,
                }
            }
        }
    }

    /// Persists `payload` charged with the ledger entries recorded for
    /// `(doc_id, stage)` after position `before`.
    fn persist<T: Serialize>(&self, doc_id: &str, stage: Stage, payload: &T, before: usize) -> Result<(), CorpusError> {
        let entries = self.gateway.ledger().entries_for(doc_id, stage);
        let usage = TokenLedgerEntry::aggregate(doc_id, stage, &entries[before.min(entries.len())..]);
        let artifact = RunArtifact::new(doc_id, stage, payload, self.gateway.clock().now(), usage)?;
        self.store.persist(&artifact).map(|_| ())
    }

    fn summary(&self, doc: &Document) -> Result<String, StageFailure> {
        if !self.cfg.mode.summarizes() {
            return Ok(doc.body.clone());
        }
        if let Some(record) = self.existing::<SummaryRecord>(Stage::Summary, &doc.doc_id) {
            return Ok(record.final_text);
        }
        summarize_and_persist(doc, &self.cfg.summary, &self.cfg.machine, self.gateway, self.store)
            .map(|r| r.final_text)
            .map_err(|e| StageFailure {
                stage: Stage::Summary,
                unreachable: matches!(&e, SummarizeError::Gateway(g) if g.is_unreachable()),
                message: e.to_string(),
            })
    }

    fn retrieval(&self, doc_id: &str, summary: &str) -> Result<RetrievalRecord, StageFailure> {
        const STAGE: Stage = Stage::Retrieval;
        if let Some(record) = self.existing::<RetrievalRecord>(STAGE, doc_id) {
            return Ok(record);
        }
        let index = self.index.expect("index is built for retrieving modes");
        let before = self.gateway.ledger().entries_for(doc_id, STAGE).len();
        let record = if self.cfg.mode == Mode::NoCa {
            let query = retrieval_query(summary, &self.ctx.target_topic, self.cfg.query_mode);
            let retrieved = index
                .top_k(self.gateway, doc_id, &query, self.cfg.k)
                .map_err(|e| StageFailure::compare(STAGE, e.into()))?;
            RetrievalRecord {
                doc_id: doc_id.to_owned(),
                query_mode: self.cfg.query_mode,
                retrieved,
                augmented_text: None,
            }
        } else {
            let out = run_rag(
                doc_id,
                summary,
                index,
                self.ctx,
                &self.cfg.human,
                self.cfg.k,
                self.cfg.query_mode,
                self.gateway,
            )
            .map_err(|e| StageFailure::compare(STAGE, e))?;
            RetrievalRecord {
                doc_id: doc_id.to_owned(),
                query_mode: self.cfg.query_mode,
                retrieved: out.retrieved,
                augmented_text: Some(out.augmented_text),
            }
        };
        self.persist(doc_id, STAGE, &record, before)
            .map_err(|e| StageFailure::store(STAGE, e))?;
        Ok(record)
    }

    fn run_stages(&self, doc: &Document) -> Result<(), StageFailure> {
        const STAGE: Stage = Stage::Assessment;
        let summary = self.summary(doc)?;
        let retrieval = if self.cfg.mode.retrieves() {
            Some(self.retrieval(&doc.doc_id, &summary)?)
        } else {
            None
        };

        let prompt = match (self.cfg.mode, &retrieval) {
            (Mode::Full | Mode::NoDs, Some(r)) => {
                render_ca_prompt(&summary, r.augmented_text.as_deref().unwrap_or_default(), self.ctx)
            }
            (Mode::NoCa, Some(r)) => {
                let passages = format_passages(self.index.expect("index is built"), &r.retrieved);
                render_merged_prompt(&summary, &passages, self.ctx)
            }
            (Mode::Baseline | Mode::NoRag, _) => render_ca_prompt(&summary, &self.criteria.text, self.ctx),
            _ => unreachable!("retrieving modes always have a retrieval record"),
        };

        let before = self.gateway.ledger().entries_for(&doc.doc_id, STAGE).len();
        let assessment: Assessment = complete_and_parse(&doc.doc_id, &prompt, &self.cfg.human, self.gateway)
            .map_err(|e| StageFailure::compare(STAGE, e))?;
        for w in &assessment.warnings {
            self.warn(&doc.doc_id, STAGE, w.to_string());
        }
        self.persist(&doc.doc_id, STAGE, &assessment, before)
            .map_err(|e| StageFailure::store(STAGE, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| Document {
                doc_id: format!("{i:04}"),
                title: String::new(),
                body: "x".into(),
            })
            .collect()
    }

    #[test]
    fn sampling() {
        let all = docs(1000);
        let a = sample_corpus(&all, 50, 7).unwrap();
        assert_eq!(a, sample_corpus(&all, 50, 7).unwrap());
        assert_ne!(a, sample_corpus(&all, 50, 8).unwrap());
        let mut ids: Vec<_> = a.iter().map(|d| d.doc_id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 50);

        let mut perm = sample_corpus(&all[..10], 10, 1).unwrap();
        perm.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        assert_eq!(perm, all[..10]);
        assert!(matches!(
            sample_corpus(&all[..3], 4, 0),
            Err(RunError::SampleTooLarge { .. })
        ));
    }
}
