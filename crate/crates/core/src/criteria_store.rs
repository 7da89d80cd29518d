//! Criteria passages, their embeddings, and exact top-k cosine retrieval.
//!
//! The criteria text is cut into 500-character windows overlapping by 20
//! characters, and every window is embedded in one batch. Retrieval scores
//! the query against every passage (no approximation) and orders hits by
//! descending score, breaking ties by ascending passage id.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus_io::CriteriaDocument;
use crate::llm_gateway::{EmbeddingVector, GatewayError, LlmGateway};
use crate::text_units::split_by_char_window;

pub const PASSAGE_WINDOW_CHARS: usize = 500;
pub const PASSAGE_OVERLAP_CHARS: usize = 20;
pub const INDEX_FILE: &str = "criteria_index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaPassage {
    pub passage_id: usize,
    pub text: String,
    pub start_char: usize,
    pub end_char: usize,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub passage_id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_doc_id: String,
    pub hits: Vec<RetrievalHit>,
    pub k: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("criteria text is empty")]
    EmptyCriteria,
    #[error("query text is empty")]
    EmptyQuery,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("query dimension {found} does not match index dimension {expected}")]
    QueryDimension { expected: usize, found: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("index file {path}: {message}")]
    File { path: String, message: String },
}

/// Immutable passage index. Safe to share across threads once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaIndex {
    pub dim: usize,
    pub criteria_sha256: String,
    pub window_chars: usize,
    pub overlap_chars: usize,
    passages: Vec<CriteriaPassage>,
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Cosine similarity clamped to [−1, 1]; zero vectors score 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

fn rank(a: &RetrievalHit, b: &RetrievalHit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.passage_id.cmp(&b.passage_id))
}

impl CriteriaIndex {
    /// Splits and embeds the criteria document.
    pub fn build(criteria: &CriteriaDocument, gateway: &LlmGateway) -> Result<Self, IndexError> {
        if criteria.text.trim().is_empty() {
            return Err(IndexError::EmptyCriteria);
        }
        let chunks = split_by_char_window(&criteria.text, PASSAGE_WINDOW_CHARS, PASSAGE_OVERLAP_CHARS);
        // Whitespace-only windows cannot be embedded; they are dropped but
        // keep their ordinal so passage ids stay positional.
        let kept: Vec<_> = chunks.into_iter().filter(|c| !c.text.trim().is_empty()).collect();
        let texts: Vec<String> = kept.iter().map(|c| c.text.clone()).collect();
        let embeddings = gateway.embed(&texts)?;
        let passages = kept
            .into_iter()
            .zip(embeddings)
            .map(|(c, embedding)| CriteriaPassage {
                passage_id: c.index,
                text: c.text,
                start_char: c.start_char,
                end_char: c.end_char,
                embedding,
            })
            .collect::<Vec<_>>();
        Ok(Self {
            dim: passages.first().map_or(0, |p| p.embedding.dim()),
            criteria_sha256: sha256_hex(&criteria.text),
            window_chars: PASSAGE_WINDOW_CHARS,
            overlap_chars: PASSAGE_OVERLAP_CHARS,
            passages,
        })
    }

    /// Builds an index over precomputed passages. All embeddings must share
    /// one dimension.
    pub fn from_passages(passages: Vec<CriteriaPassage>) -> Result<Self, IndexError> {
        let dim = passages.first().map_or(0, |p| p.embedding.dim());
        if let Some(p) = passages.iter().find(|p| p.embedding.dim() != dim) {
            return Err(IndexError::Gateway(GatewayError::DimensionMismatch {
                expected: dim,
                found: p.embedding.dim(),
            }));
        }
        Ok(Self {
            dim,
            criteria_sha256: String::new(),
            window_chars: PASSAGE_WINDOW_CHARS,
            overlap_chars: PASSAGE_OVERLAP_CHARS,
            passages,
        })
    }

    pub fn passages(&self) -> &[CriteriaPassage] {
        &self.passages
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn passage(&self, passage_id: usize) -> Option<&CriteriaPassage> {
        self.passages.iter().find(|p| p.passage_id == passage_id)
    }

    /// Exact top-k against a precomputed query vector.
    pub fn top_k_by_vector(&self, query: &[f64], k: usize) -> Result<Vec<RetrievalHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if !self.passages.is_empty() && query.len() != self.dim {
            return Err(IndexError::QueryDimension {
                expected: self.dim,
                found: query.len(),
            });
        }
        let mut hits: Vec<RetrievalHit> = self
            .passages
            .iter()
            .map(|p| RetrievalHit {
                passage_id: p.passage_id,
                score: cosine(query, &p.embedding.values),
            })
            .collect();
        let k = k.min(hits.len());
        if k < hits.len() {
            hits.select_nth_unstable_by(k, rank);
            hits.truncate(k);
        }
        hits.sort_by(rank);
        Ok(hits)
    }

    /// Embeds `query_text` once and returns the `k` best passages.
    pub fn top_k(
        &self,
        gateway: &LlmGateway,
        query_doc_id: &str,
        query_text: &str,
        k: usize,
    ) -> Result<RetrievalResult, IndexError> {
        if query_text.trim().is_empty() {
            return Err(IndexError::EmptyQuery);
        }
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        let query = gateway
            .embed(&[query_text.to_owned()])?
            .pop()
            .expect("one vector per input");
        Ok(RetrievalResult {
            query_doc_id: query_doc_id.to_owned(),
            hits: self.top_k_by_vector(&query.values, k)?,
            k,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let file_err = |message: String| IndexError::File {
            path: path.display().to_string(),
            message,
        };
        let json = serde_json::to_string(self).map_err(|e| file_err(e.to_string()))?;
        fs::write(path, json).map_err(|e| file_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let file_err = |message: String| IndexError::File {
            path: path.display().to_string(),
            message,
        };
        let raw = fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        serde_json::from_str(&raw).map_err(|e| file_err(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn criteria(text: &str) -> CriteriaDocument {
        CriteriaDocument {
            source_path: "c.md".into(),
            text: text.into(),
        }
    }

    fn prose(chars: usize) -> String {
        let mut s = String::new();
        let mut i = 0;
        while s.len() < chars {
            s.push_str(&format!("clause{i} requires disclosure of eligible assets. "));
            i += 1;
        }
        s.truncate(chars);
        s
    }

    #[test]
    fn passage_counts() {
        let gw = LlmGateway::mock(32);
        assert_eq!(CriteriaIndex::build(&criteria(&prose(980)), &gw).unwrap().len(), 2);
        assert_eq!(CriteriaIndex::build(&criteria(&prose(20_000)), &gw).unwrap().len(), 42);
    }

    #[test]
    fn self_query_ranks_first() {
        let gw = LlmGateway::mock(64);
        let index = CriteriaIndex::build(&criteria(&prose(5000)), &gw).unwrap();
        let target = &index.passages()[4];
        let r = index.top_k(&gw, "q", &target.text, 3).unwrap();
        assert_eq!(r.hits[0].passage_id, 4);
        assert!((r.hits[0].score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn k_is_clamped() {
        let gw = LlmGateway::mock(16);
        let index = CriteriaIndex::build(&criteria(&prose(980)), &gw).unwrap();
        let r = index.top_k(&gw, "q", "eligible assets", 3).unwrap();
        assert_eq!(r.hits.len(), 2);
        assert_eq!(r.k, 3);
        assert!(r.hits[0].score >= r.hits[1].score);
    }

    #[test]
    fn ties_break_by_passage_id() {
        let v = |x: f64| EmbeddingVector { values: vec![x, 0.0] };
        let passages = (0..5)
            .map(|i| CriteriaPassage {
                passage_id: i,
                text: String::new(),
                start_char: 0,
                end_char: 0,
                embedding: v(1.0),
            })
            .collect();
        let index = CriteriaIndex::from_passages(passages).unwrap();
        let hits = index.top_k_by_vector(&[1.0, 0.0], 3).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.passage_id).collect();
        assert_eq!(ids, [0, 1, 2]);
    }

    #[test]
    fn errors() {
        let gw = LlmGateway::mock(16);
        let index = CriteriaIndex::build(&criteria(&prose(980)), &gw).unwrap();
        assert!(matches!(index.top_k(&gw, "q", " ", 3), Err(IndexError::EmptyQuery)));
        assert!(matches!(index.top_k(&gw, "q", "x", 0), Err(IndexError::ZeroK)));
        assert!(matches!(
            index.top_k_by_vector(&[1.0], 1),
            Err(IndexError::QueryDimension { .. })
        ));
        assert!(matches!(
            CriteriaIndex::build(&criteria(""), &gw),
            Err(IndexError::EmptyCriteria)
        ));
    }

    #[test]
    fn rebuild_and_round_trip() {
        let gw = LlmGateway::mock(16);
        let a = CriteriaIndex::build(&criteria(&prose(3000)), &gw).unwrap();
        let b = CriteriaIndex::build(&criteria(&prose(3000)), &gw).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(INDEX_FILE);
        a.save(&path).unwrap();
        assert_eq!(CriteriaIndex::load(&path).unwrap(), a);
    }
}
