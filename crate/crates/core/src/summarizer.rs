//! Iterative abstractive summarization under an output-token threshold.
//!
//! Each pass splits the current text into chunks of `chunk_budget_tokens`,
//! summarizes every chunk (in order) with a completion capped at
//! `segment_budget_tokens`, and joins the segments with a newline. Passes
//! repeat while the joined text is over `threshold_tokens`. After
//! `max_passes` the text is hard-truncated to the threshold and the record
//! is flagged `truncated`.
//!
//! Later passes re-chunk with the same rule as the first. The document title
//! is not summarized; only the body is.

use serde::{Deserialize, Serialize};

use crate::corpus_io::{ArtifactStore, CorpusError, Document, RunArtifact, Stage, WarningRecord, WARNINGS_FILE};
use crate::llm_gateway::{CallContext, CompletionProfile, GatewayError, LlmGateway, TokenLedgerEntry};
use crate::prompts::{render, SUMMARY_TEMPLATE};
use crate::text_units::{estimate_tokens, split_by_token_budget, truncate_to_tokens, BoundaryPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryConfig {
    pub chunk_budget_tokens: usize,
    pub segment_budget_tokens: usize,
    pub threshold_tokens: usize,
    pub max_passes: usize,
    pub boundary_policy: BoundaryPolicy,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self {
            chunk_budget_tokens: 2000,
            segment_budget_tokens: 250,
            threshold_tokens: 1250,
            max_passes: 5,
            boundary_policy: BoundaryPolicy::NearestWhitespace,
        }
    }
}

impl SummaryConfig {
    /// The longer-summary variant: same rules, 2500-token threshold.
    pub fn long_threshold() -> Self {
        Self {
            threshold_tokens: 2500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.segment_budget_tokens == 0 {
            return Err("segment_budget_tokens must be at least 1".into());
        }
        if self.segment_budget_tokens >= self.chunk_budget_tokens {
            return Err(format!(
                "segment_budget_tokens ({}) must be smaller than chunk_budget_tokens ({})",
                self.segment_budget_tokens, self.chunk_budget_tokens
            ));
        }
        if self.threshold_tokens < self.segment_budget_tokens {
            return Err(format!(
                "threshold_tokens ({}) must be at least segment_budget_tokens ({})",
                self.threshold_tokens, self.segment_budget_tokens
            ));
        }
        if self.max_passes == 0 {
            return Err("max_passes must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub doc_id: String,
    pub final_text: String,
    pub passes: usize,
    pub per_pass_chunk_counts: Vec<usize>,
    pub final_tokens: usize,
    pub truncated: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum SummarizeError {
    #[error("document {doc_id} has an empty body")]
    EmptyBody { doc_id: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] CorpusError),
}

pub fn render_summary_prompt(split_text: &str) -> String {
    render(SUMMARY_TEMPLATE, &[("split_text", split_text)])
}

/// Summarizes one document body. `profile` is the machine-level profile; its
/// `max_new_tokens` is replaced by the segment budget for each call.
pub fn summarize_document(
    doc: &Document,
    cfg: &SummaryConfig,
    profile: &CompletionProfile,
    gateway: &LlmGateway,
) -> Result<SummaryRecord, SummarizeError> {
    if !doc.has_body() {
        return Err(SummarizeError::EmptyBody {
            doc_id: doc.doc_id.clone(),
        });
    }
    let segment_profile = profile.with_max_new_tokens(cfg.segment_budget_tokens);
    let ctx = CallContext {
        doc_id: &doc.doc_id,
        stage: Stage::Summary,
    };

    let mut text = doc.body.clone();
    let mut per_pass_chunk_counts = Vec::new();
    let mut truncated = false;
    loop {
        let chunks = split_by_token_budget(&text, cfg.chunk_budget_tokens, cfg.boundary_policy);
        per_pass_chunk_counts.push(chunks.len());
        let segments = chunks
            .iter()
            .map(|chunk| gateway.complete(&segment_profile, &render_summary_prompt(&chunk.text), ctx))
            .collect::<Result<Vec<_>, _>>()?;
        text = segments.join("\n");

        if estimate_tokens(&text).tokens <= cfg.threshold_tokens {
            break;
        }
        if per_pass_chunk_counts.len() >= cfg.max_passes {
            text = truncate_to_tokens(&text, cfg.threshold_tokens).to_owned();
            truncated = true;
            break;
        }
    }

    Ok(SummaryRecord {
        doc_id: doc.doc_id.clone(),
        final_tokens: estimate_tokens(&text).tokens,
        final_text: text,
        passes: per_pass_chunk_counts.len(),
        per_pass_chunk_counts,
        truncated,
    })
}

/// Summarizes `doc` and appends the summary artifact, charging it the
/// ledger entries recorded for this document's summary calls.
pub fn summarize_and_persist(
    doc: &Document,
    cfg: &SummaryConfig,
    profile: &CompletionProfile,
    gateway: &LlmGateway,
    store: &ArtifactStore,
) -> Result<SummaryRecord, SummarizeError> {
    let before = gateway.ledger().entries_for(&doc.doc_id, Stage::Summary).len();
    let record = summarize_document(doc, cfg, profile, gateway)?;
    let entries = gateway.ledger().entries_for(&doc.doc_id, Stage::Summary);
    let usage = TokenLedgerEntry::aggregate(&doc.doc_id, Stage::Summary, &entries[before..]);
    let artifact = RunArtifact::new(&doc.doc_id, Stage::Summary, &record, gateway.clock().now(), usage)?;
    store.persist(&artifact)?;
    Ok(record)
}

#[derive(Debug, Default)]
pub struct CorpusSummaries {
    /// Ordered by document id.
    pub records: Vec<SummaryRecord>,
    pub warnings: Vec<WarningRecord>,
    pub errors: Vec<(String, SummarizeError)>,
}

/// Summarizes every document with a body that has no summary artifact yet.
///
/// Work runs on the current rayon pool; one document's failure does not
/// stop the others. Previously persisted summaries are returned as-is.
pub fn summarize_corpus(
    docs: &[Document],
    cfg: &SummaryConfig,
    profile: &CompletionProfile,
    gateway: &LlmGateway,
    store: &ArtifactStore,
) -> Result<CorpusSummaries, CorpusError> {
    use rayon::prelude::*;

    let existing = store.load_stage(Stage::Summary)?;
    let outcomes: Vec<_> = docs
        .par_iter()
        .map(|doc| {
            if let Some(artifact) = existing.get(&doc.doc_id) {
                return artifact.payload_as::<SummaryRecord>().map_err(SummarizeError::from);
            }
            summarize_and_persist(doc, cfg, profile, gateway, store)
        })
        .collect();

    let mut out = CorpusSummaries::default();
    for (doc, outcome) in docs.iter().zip(outcomes) {
        match outcome {
            Ok(record) => out.records.push(record),
            Err(SummarizeError::EmptyBody { doc_id }) => {
                let warning = WarningRecord {
                    doc_id,
                    stage: Stage::Summary,
                    message: "empty body; document skipped".into(),
                };
                store.append_line(WARNINGS_FILE, &warning)?;
                out.warnings.push(warning);
            }
            Err(e) => out.errors.push((doc.doc_id.clone(), e)),
        }
    }
    out.records.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(body: &str) -> Document {
        Document {
            doc_id: "0001".into(),
            title: "t".into(),
            body: body.into(),
        }
    }

    fn words(chars: usize) -> String {
        let mut s = "lorem ipsum dolor sit amet ".repeat(chars / 27 + 1);
        s.truncate(chars);
        s
    }

    #[test]
    fn single_chunk_path() {
        let gw = LlmGateway::mock(8);
        let r = summarize_document(
            &doc(&words(7000)),
            &SummaryConfig::default(),
            &CompletionProfile::machine_level(),
            &gw,
        )
        .unwrap();
        assert_eq!(r.passes, 1);
        assert_eq!(r.per_pass_chunk_counts, vec![1]);
        assert!(r.final_tokens <= 250);
        assert!(!r.truncated);
    }

    #[test]
    fn six_chunks_force_second_pass() {
        let gw = LlmGateway::mock(8);
        let cfg = SummaryConfig {
            boundary_policy: BoundaryPolicy::ExactChar,
            ..SummaryConfig::default()
        };
        let r = summarize_document(&doc(&words(6 * 8000)), &cfg, &CompletionProfile::machine_level(), &gw).unwrap();
        assert_eq!(r.per_pass_chunk_counts, vec![6, 1]);
        assert_eq!(r.passes, 2);
        assert!(r.final_tokens <= 1250);
    }

    #[test]
    fn long_threshold_changes_only_passes() {
        let gw = LlmGateway::mock(8);
        let body = words(6 * 8000);
        let cfg = SummaryConfig {
            boundary_policy: BoundaryPolicy::ExactChar,
            ..SummaryConfig::long_threshold()
        };
        let r = summarize_document(&doc(&body), &cfg, &CompletionProfile::machine_level(), &gw).unwrap();
        assert_eq!(r.per_pass_chunk_counts, vec![6]);
        assert!(r.final_tokens <= 2500 && r.final_tokens > 1250);
    }

    #[test]
    fn empty_body_is_rejected() {
        let gw = LlmGateway::mock(8);
        let err = summarize_document(
            &doc("  \n"),
            &SummaryConfig::default(),
            &CompletionProfile::machine_level(),
            &gw,
        )
        .unwrap_err();
        assert!(matches!(err, SummarizeError::EmptyBody { .. }));
    }

    #[test]
    fn non_compressing_backend_is_truncated() {
        use crate::llm_gateway::*;
        use std::sync::Arc;
        // Echoes the whole prompt: never shrinks.
        struct Echo;
        impl CompletionBackend for Echo {
            fn complete(&self, r: &CompletionRequest<'_>) -> Result<CompletionResponse, BackendError> {
                Ok(CompletionResponse {
                    text: r.prompt.repeat(2),
                    usage: None,
                })
            }
        }
        let gw = LlmGateway::new(Arc::new(Echo), Arc::new(Echo), Arc::new(MockEmbeddingBackend::new(4)));
        let cfg = SummaryConfig {
            max_passes: 2,
            ..SummaryConfig::default()
        };
        let r = summarize_document(&doc(&words(3000)), &cfg, &CompletionProfile::machine_level(), &gw).unwrap();
        assert_eq!(r.passes, 2);
        assert!(r.truncated);
        assert_eq!(r.final_tokens, 1250);
    }

    #[test]
    fn config_validation() {
        assert!(SummaryConfig::default().validate().is_ok());
        let bad = SummaryConfig {
            segment_budget_tokens: 2000,
            ..SummaryConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SummaryConfig {
            threshold_tokens: 100,
            ..SummaryConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
