//! Deterministic offline backends.
//!
//! The completion mock recognises the three pipeline templates:
//!
//! - summary prompts return a prefix of the embedded source text capped at
//!   `4 · max_new_tokens` characters (an extractive stub);
//! - retrieval prompts echo the retrieved passages as bullets;
//! - comparison prompts return a six-field answer derived from the document.
//!
//! Any other prompt is echoed back, capped. Responses never exceed the
//! request's `max_new_tokens` estimate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use sha2::{Digest, Sha256};
use std::sync::OnceLock;

use super::{BackendError, CompletionBackend, CompletionRequest, CompletionResponse, EmbeddingBackend};
use crate::prompts::{between, markers};
use crate::text_units::truncate_to_tokens;

#[derive(Debug, Default, Clone, Copy)]
pub struct MockCompletionBackend;

impl CompletionBackend for MockCompletionBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResponse, BackendError> {
        let prompt = request.prompt;
        let text = if prompt.contains(markers::CA_TASK) {
            comparison_answer(prompt)
        } else if prompt.contains(markers::RAG_QUESTION) {
            retrieval_answer(prompt)
        } else if let Some(source) = summary_source(prompt) {
            source.to_owned()
        } else {
            prompt.to_owned()
        };
        Ok(CompletionResponse {
            text: truncate_to_tokens(&text, request.profile.max_new_tokens).to_owned(),
            usage: None,
        })
    }
}

fn summary_source(prompt: &str) -> Option<&str> {
    let rest = prompt.strip_prefix(markers::SUMMARY_HEAD)?;
    let end = rest.rfind(markers::SUMMARY_TAIL)?;
    Some(&rest[..end])
}

fn retrieval_answer(prompt: &str) -> String {
    let topic = between(prompt, markers::RAG_TOPIC_HEAD, "?").unwrap_or("the target topic");
    let mut out = format!("Relevant criteria in terms of {topic}:");
    let mut found = false;
    for line in prompt.lines() {
        if let Some(rest) = line.strip_prefix(markers::PASSAGE_PREFIX) {
            let body = rest.split_once(':').map_or(rest, |(_, b)| b).trim();
            out.push_str("\n- ");
            out.push_str(body);
            found = true;
        }
    }
    if !found {
        out.push_str("\n- No criteria passages were provided.");
    }
    out
}

fn amount_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\$\s?\d[\d,]*(?:\.\d+)?(?:\s?(?:million|billion|thousand))?").unwrap())
}

fn date_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b\d{2}/\d{2}/\d{4}\b").unwrap())
}

const TRANSACTION_KINDS: [&str; 8] = [
    "green bond",
    "sustainability-linked loan",
    "credit facility",
    "acquisition",
    "loan",
    "bond",
    "investment",
    "financing",
];

fn content_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() >= 4)
        .map(str::to_lowercase)
        .collect()
}

fn comparison_answer(prompt: &str) -> String {
    let document = between(prompt, markers::CA_TASK, markers::CA_TASK_TAIL).unwrap_or("");
    let company = between(prompt, markers::CA_COMPANY_HEAD, ". Your task").unwrap_or("the company");
    let topic = between(prompt, markers::CA_TOPIC_HEAD, ". Use specific").unwrap_or("the target topic");
    let criteria = between(prompt, markers::CA_CRITERIA_HEAD, markers::CA_CRITERIA_TAIL).unwrap_or("");

    let date = date_re()
        .find(document)
        .map_or("Not stated in the document", |m| m.as_str());
    let amount = amount_re().find(document).map(|m| m.as_str());
    let lower = document.to_lowercase();
    let kind = TRANSACTION_KINDS
        .iter()
        .find(|k| lower.contains(*k))
        .copied()
        .unwrap_or("financing");

    let doc_words = content_words(document);
    let topic_words = content_words(topic);
    let hits = topic_words.iter().filter(|w| doc_words.contains(w)).count();

    let (transaction, amount_line, score) = match amount {
        Some(a) => (format!("Yes, {kind}"), a.to_owned(), (40 + 15 * hits).min(100)),
        None => ("No transaction took place".to_owned(), "$0".to_owned(), 0),
    };
    let excerpt: String = criteria.chars().take(160).collect();
    let excerpt = excerpt.split_whitespace().collect::<Vec<_>>().join(" ");

    format!(
        "1. Article Date: {date}\n\
         2. Participants of the transaction: - {company} is referenced as an analyst of the article.\n\
         - Entities: as named in the document.\n\
         3. Transaction and Transaction type: {transaction}\n\
         4. Transaction amount in dollars: {amount_line}\n\
         5. Comparison: - The document was compared with the criteria in terms of {topic}.\n\
         - {hits} topic terms appear in the document.\n\
         - Criteria excerpt: {excerpt}\n\
         6. Confidence score: {score}"
    )
}

/// Feature-hashed bag-of-words embedding, L2-normalised. Texts without any
/// word characters fall back to a vector seeded from the text's hash.
#[derive(Debug, Clone, Copy)]
pub struct MockEmbeddingBackend {
    dim: usize,
}

impl MockEmbeddingBackend {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for word in text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            let h = Sha256::digest(word.to_lowercase().as_bytes());
            let bucket = u64::from_le_bytes(h[..8].try_into().unwrap()) % self.dim as u64;
            let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket as usize] += sign;
        }
        let mut norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            let seed: [u8; 32] = Sha256::digest(text.as_bytes()).into();
            let mut rng = ChaCha8Rng::from_seed(seed);
            v.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
            norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        }
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

impl EmbeddingBackend for MockEmbeddingBackend {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::CompletionProfile;
    use crate::prompts::{render, SUMMARY_TEMPLATE};
    use crate::text_units::estimate_tokens;

    fn complete(prompt: &str, max_new_tokens: usize) -> String {
        let profile = CompletionProfile::machine_level().with_max_new_tokens(max_new_tokens);
        MockCompletionBackend
            .complete(&CompletionRequest {
                prompt,
                profile: &profile,
            })
            .unwrap()
            .text
    }

    #[test]
    fn summary_is_capped_prefix() {
        let source = "s".repeat(3000);
        let prompt = render(SUMMARY_TEMPLATE, &[("split_text", &source)]);
        let out = complete(&prompt, 250);
        assert_eq!(out, "s".repeat(1000));
        assert_eq!(
            complete(&render(SUMMARY_TEMPLATE, &[("split_text", "short")]), 250),
            "short"
        );
    }

    #[test]
    fn responses_respect_cap() {
        for cap in [1, 10, 100] {
            let out = complete(&"word ".repeat(500), cap);
            assert!(estimate_tokens(&out).tokens <= cap);
        }
    }

    #[test]
    fn deterministic() {
        let p = render(SUMMARY_TEMPLATE, &[("split_text", "abc def")]);
        assert_eq!(complete(&p, 5), complete(&p, 5));
    }

    #[test]
    fn unit_norm_vectors() {
        let m = MockEmbeddingBackend::new(64);
        for t in ["hello world", "!!!", "x", "the the the"] {
            let n: f64 = m.vector(t).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9, "{t}: {n}");
        }
        assert_eq!(m.vector("A b"), m.vector("a B"));
    }
}
