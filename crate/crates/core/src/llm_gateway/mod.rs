//! Uniform access to completion and embedding backends.
//!
//! [`LlmGateway`] wraps a machine-level and a human-level completion backend
//! plus an embedding backend. Every successful completion is recorded in a
//! [`Ledger`] using the 4-characters-per-token estimate for both prompt and
//! response, so token totals are comparable across backends and pipeline
//! modes. Backend-reported usage, when present, is kept alongside.
//!
//! Transient transport failures are retried with exponential backoff. A
//! global in-flight limit bounds concurrent backend calls across workers.

mod http;
mod ledger;
mod mock;

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use http::{HttpCompletionBackend, HttpEmbeddingBackend};
pub use ledger::{format_pct, ledger_report, pct_diff, Ledger, LedgerReport, StageTotals, TokenLedgerEntry};
pub use mock::{MockCompletionBackend, MockEmbeddingBackend};

use crate::clock::{Clock, SystemClock};
use crate::corpus_io::Stage;
use crate::text_units::estimate_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    MachineLevel,
    HumanLevel,
}

/// Decoding settings for one model tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionProfile {
    pub tier: Tier,
    pub temperature: f64,
    pub max_new_tokens: usize,
    /// Model name sent to the backend; empty for mocks.
    pub model: String,
    /// Extra decoding parameters (top_p, ...) passed through untouched.
    pub options: BTreeMap<String, String>,
}

impl CompletionProfile {
    pub fn machine_level() -> Self {
        Self {
            tier: Tier::MachineLevel,
            temperature: 0.0,
            max_new_tokens: 250,
            model: String::new(),
            options: BTreeMap::new(),
        }
    }

    pub fn human_level() -> Self {
        Self {
            tier: Tier::HumanLevel,
            temperature: 0.0,
            max_new_tokens: 500,
            model: String::new(),
            options: BTreeMap::new(),
        }
    }

    pub fn with_max_new_tokens(&self, max_new_tokens: usize) -> Self {
        Self {
            max_new_tokens,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub profile: &'a CompletionProfile,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionResponse {
    pub text: String,
    pub usage: Option<BackendUsage>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    /// Retryable: rate limits, 5xx, timeouts.
    #[error("transient backend failure: {0}")]
    Transient(String),
    /// Retryable, but if it persists the backend is considered down.
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend rejected request: {0}")]
    Permanent(String),
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Transient(_) | Self::Unreachable(_))
    }
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResponse, BackendError>;
}

pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

/// A fixed-length embedding with finite components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): initial · 2^(retry−1).
    pub fn backoff(&self, retry: u32) -> Duration {
        self.initial_backoff
            .saturating_mul(1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("empty prompt for document {doc_id}")]
    EmptyPrompt { doc_id: String },
    #[error("cannot embed an empty text (input #{index})")]
    EmptyEmbeddingInput { index: usize },
    #[error("document {doc_id}, stage {stage}: gave up after {attempts} attempts: {source}")]
    Exhausted {
        doc_id: String,
        stage: Stage,
        attempts: u32,
        #[source]
        source: BackendError,
    },
    #[error("document {doc_id}, stage {stage}: {source}")]
    Backend {
        doc_id: String,
        stage: Stage,
        #[source]
        source: BackendError,
    },
    #[error("embedding failed: {0}")]
    Embedding(#[source] BackendError),
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding backend returned {found} vectors for {expected} inputs")]
    CountMismatch { expected: usize, found: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
}

impl GatewayError {
    /// True when the failure was the backend not answering at all.
    pub fn is_unreachable(&self) -> bool {
        matches!(
            self,
            Self::Exhausted {
                source: BackendError::Unreachable(_),
                ..
            } | Self::Backend {
                source: BackendError::Unreachable(_),
                ..
            } | Self::Embedding(BackendError::Unreachable(_))
        )
    }
}

/// Counting semaphore bounding in-flight backend requests.
#[derive(Debug)]
struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(permits: usize) -> Self {
        Self {
            available: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.freed.notify_one();
    }
}

/// Which document and stage a completion is charged to.
#[derive(Debug, Clone, Copy)]
pub struct CallContext<'a> {
    pub doc_id: &'a str,
    pub stage: Stage,
}

pub struct LlmGateway {
    machine: Arc<dyn CompletionBackend>,
    human: Arc<dyn CompletionBackend>,
    embedder: Arc<dyn EmbeddingBackend>,
    retry: RetryPolicy,
    limiter: Limiter,
    ledger: Ledger,
    clock: Arc<dyn Clock>,
    embed_dim: Mutex<Option<usize>>,
}

impl std::fmt::Debug for LlmGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmGateway")
            .field("retry", &self.retry)
            .field("ledger_entries", &self.ledger.len())
            .finish_non_exhaustive()
    }
}

impl LlmGateway {
    pub fn new(
        machine: Arc<dyn CompletionBackend>,
        human: Arc<dyn CompletionBackend>,
        embedder: Arc<dyn EmbeddingBackend>,
    ) -> Self {
        Self {
            machine,
            human,
            embedder,
            retry: RetryPolicy::default(),
            limiter: Limiter::new(8),
            ledger: Ledger::default(),
            clock: Arc::new(SystemClock),
            embed_dim: Mutex::new(None),
        }
    }

    /// Gateway over the deterministic mock backends.
    pub fn mock(embedding_dim: usize) -> Self {
        let completion = Arc::new(MockCompletionBackend);
        Self::new(
            completion.clone(),
            completion,
            Arc::new(MockEmbeddingBackend::new(embedding_dim)),
        )
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, max_in_flight: usize) -> Self {
        self.limiter = Limiter::new(max_in_flight);
        self
    }

    pub fn with_ledger(mut self, ledger: Ledger) -> Self {
        self.ledger = ledger;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    fn backend(&self, tier: Tier) -> &dyn CompletionBackend {
        match tier {
            Tier::MachineLevel => self.machine.as_ref(),
            Tier::HumanLevel => self.human.as_ref(),
        }
    }

    /// Sends `prompt` to the backend for `profile.tier` and records a ledger
    /// entry on success. Responses longer than `max_new_tokens` are kept.
    pub fn complete(
        &self,
        profile: &CompletionProfile,
        prompt: &str,
        ctx: CallContext<'_>,
    ) -> Result<String, GatewayError> {
        if prompt.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt {
                doc_id: ctx.doc_id.to_owned(),
            });
        }
        let request = CompletionRequest { prompt, profile };
        let backend = self.backend(profile.tier);
        let started = Instant::now();
        let mut attempt = 0;
        let response = loop {
            attempt += 1;
            let result = {
                let _permit = self.limiter.acquire();
                backend.complete(&request)
            };
            match result {
                Ok(r) => break r,
                Err(e) if e.is_retryable() && attempt < self.retry.max_attempts => {
                    log::warn!(
                        "document {} ({}): attempt {attempt} failed: {e}; retrying",
                        ctx.doc_id,
                        ctx.stage
                    );
                    std::thread::sleep(self.retry.backoff(attempt));
                }
                Err(e) if e.is_retryable() => {
                    return Err(GatewayError::Exhausted {
                        doc_id: ctx.doc_id.to_owned(),
                        stage: ctx.stage,
                        attempts: attempt,
                        source: e,
                    })
                }
                Err(e) => {
                    return Err(GatewayError::Backend {
                        doc_id: ctx.doc_id.to_owned(),
                        stage: ctx.stage,
                        source: e,
                    })
                }
            }
        };
        self.ledger.record(TokenLedgerEntry {
            doc_id: ctx.doc_id.to_owned(),
            stage: ctx.stage,
            prompt_tokens: estimate_tokens(prompt).tokens as u64,
            completion_tokens: estimate_tokens(&response.text).tokens as u64,
            wall_time_ms: self.clock.elapsed_ms(started),
            backend_usage: response.usage,
        });
        Ok(response.text)
    }

    /// Embeds a batch; every vector in the run must share one dimension.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if let Some(index) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::EmptyEmbeddingInput { index });
        }
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let mut attempt = 0;
        let raw = loop {
            attempt += 1;
            let result = {
                let _permit = self.limiter.acquire();
                self.embedder.embed(texts)
            };
            match result {
                Ok(v) => break v,
                Err(e) if e.is_retryable() && attempt < self.retry.max_attempts => {
                    std::thread::sleep(self.retry.backoff(attempt));
                }
                Err(e) => return Err(GatewayError::Embedding(e)),
            }
        };
        if raw.len() != texts.len() {
            return Err(GatewayError::CountMismatch {
                expected: texts.len(),
                found: raw.len(),
            });
        }
        let mut dim = self.embed_dim.lock().unwrap_or_else(|e| e.into_inner());
        let mut out = Vec::with_capacity(raw.len());
        for values in raw {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(GatewayError::NonFinite);
            }
            match *dim {
                Some(expected) if expected != values.len() => {
                    return Err(GatewayError::DimensionMismatch {
                        expected,
                        found: values.len(),
                    })
                }
                None => *dim = Some(values.len()),
                _ => {}
            }
            out.push(EmbeddingVector { values });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn ctx(doc: &str) -> CallContext<'_> {
        CallContext {
            doc_id: doc,
            stage: Stage::Summary,
        }
    }

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
        error: BackendError,
    }

    impl CompletionBackend for Flaky {
        fn complete(&self, _: &CompletionRequest<'_>) -> Result<CompletionResponse, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(self.error.clone())
            } else {
                Ok(CompletionResponse {
                    text: "ok".into(),
                    usage: Some(BackendUsage {
                        prompt_tokens: 7,
                        completion_tokens: 1,
                    }),
                })
            }
        }
    }

    fn flaky_gateway(failures: u32, error: BackendError) -> (LlmGateway, Arc<Flaky>) {
        let flaky = Arc::new(Flaky {
            failures,
            calls: AtomicU32::new(0),
            error,
        });
        let gw = LlmGateway::new(flaky.clone(), flaky.clone(), Arc::new(MockEmbeddingBackend::new(8))).with_retry(
            RetryPolicy {
                max_attempts: 3,
                initial_backoff: Duration::from_millis(1),
            },
        );
        (gw, flaky)
    }

    #[test]
    fn default_profiles() {
        let m = CompletionProfile::machine_level();
        let h = CompletionProfile::human_level();
        assert_eq!((m.temperature, m.max_new_tokens), (0.0, 250));
        assert_eq!((h.temperature, h.max_new_tokens), (0.0, 500));
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(1), Duration::from_secs(1));
        assert_eq!(p.backoff(2), Duration::from_secs(2));
        assert_eq!(p.backoff(3), Duration::from_secs(4));
    }

    #[test]
    fn prompt_tokens_use_estimate() {
        let gw = LlmGateway::mock(16);
        let prompt = "p".repeat(4000);
        gw.complete(&CompletionProfile::human_level(), &prompt, ctx("0001"))
            .unwrap();
        assert_eq!(gw.ledger().entries()[0].prompt_tokens, 1000);
    }

    #[test]
    fn retries_transient_then_succeeds() {
        let (gw, flaky) = flaky_gateway(2, BackendError::Transient("503".into()));
        let out = gw
            .complete(&CompletionProfile::machine_level(), "hi", ctx("0001"))
            .unwrap();
        assert_eq!(out, "ok");
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
        let entry = &gw.ledger().entries()[0];
        assert_eq!(entry.backend_usage.unwrap().prompt_tokens, 7);
        assert_eq!(entry.prompt_tokens, 1);
    }

    #[test]
    fn exhausted_retries_carry_doc_id() {
        let (gw, flaky) = flaky_gateway(10, BackendError::Unreachable("refused".into()));
        let err = gw
            .complete(&CompletionProfile::machine_level(), "hi", ctx("0042"))
            .unwrap_err();
        assert!(err.is_unreachable());
        assert!(err.to_string().contains("0042"));
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
        assert!(gw.ledger().is_empty());
    }

    #[test]
    fn permanent_errors_are_not_retried() {
        let (gw, flaky) = flaky_gateway(10, BackendError::Permanent("401".into()));
        assert!(matches!(
            gw.complete(&CompletionProfile::machine_level(), "hi", ctx("1")),
            Err(GatewayError::Backend { .. })
        ));
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn empty_prompt_rejected() {
        let gw = LlmGateway::mock(8);
        assert!(matches!(
            gw.complete(&CompletionProfile::machine_level(), "  ", ctx("1")),
            Err(GatewayError::EmptyPrompt { .. })
        ));
    }

    struct Ragged;
    impl EmbeddingBackend for Ragged {
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
            Ok(texts.iter().map(|t| vec![1.0; t.len()]).collect())
        }
    }

    #[test]
    fn dimension_mismatch_is_fatal() {
        let m = Arc::new(MockCompletionBackend);
        let gw = LlmGateway::new(m.clone(), m, Arc::new(Ragged));
        let err = gw.embed(&["ab".into(), "abc".into()]).unwrap_err();
        assert!(matches!(err, GatewayError::DimensionMismatch { expected: 2, found: 3 }));
    }

    #[test]
    fn embed_shapes() {
        let gw = LlmGateway::mock(32);
        let v = gw.embed(&["a".into(), "b".into(), "a".into()]).unwrap();
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|e| e.dim() == 32));
        assert_eq!(v[0], v[2]);
        assert!(gw.embed(&["".into()]).is_err());
    }

    #[test]
    fn limiter_bounds_concurrency() {
        use std::sync::atomic::AtomicUsize;
        struct Slow {
            current: AtomicUsize,
            peak: AtomicUsize,
        }
        impl CompletionBackend for Slow {
            fn complete(&self, _: &CompletionRequest<'_>) -> Result<CompletionResponse, BackendError> {
                let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(5));
                self.current.fetch_sub(1, Ordering::SeqCst);
                Ok(CompletionResponse {
                    text: "x".into(),
                    usage: None,
                })
            }
        }
        let slow = Arc::new(Slow {
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let gw =
            LlmGateway::new(slow.clone(), slow.clone(), Arc::new(MockEmbeddingBackend::new(4))).with_max_in_flight(2);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    gw.complete(&CompletionProfile::human_level(), "q", ctx("1")).unwrap();
                });
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(gw.ledger().len(), 8);
    }
}
