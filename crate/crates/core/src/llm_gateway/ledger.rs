use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::BackendUsage;
use crate::corpus_io::Stage;

/// Token and time cost of one completion call, or an aggregate of several
/// calls for one `(doc_id, stage)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLedgerEntry {
    pub doc_id: String,
    pub stage: Stage,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_time_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_usage: Option<BackendUsage>,
}

impl TokenLedgerEntry {
    pub fn zero(doc_id: impl Into<String>, stage: Stage) -> Self {
        Self {
            doc_id: doc_id.into(),
            stage,
            prompt_tokens: 0,
            completion_tokens: 0,
            wall_time_ms: 0,
            backend_usage: None,
        }
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    /// Sums `entries` into one entry charged to `(doc_id, stage)`.
    pub fn aggregate<'a>(doc_id: &str, stage: Stage, entries: impl IntoIterator<Item = &'a TokenLedgerEntry>) -> Self {
        let mut acc = Self::zero(doc_id, stage);
        for e in entries {
            acc.prompt_tokens += e.prompt_tokens;
            acc.completion_tokens += e.completion_tokens;
            acc.wall_time_ms += e.wall_time_ms;
            if let Some(u) = e.backend_usage {
                let sum = acc.backend_usage.get_or_insert_with(BackendUsage::default);
                sum.prompt_tokens += u.prompt_tokens;
                sum.completion_tokens += u.completion_tokens;
            }
        }
        acc
    }
}

type Sink = Arc<dyn Fn(&TokenLedgerEntry) + Send + Sync>;

/// Thread-safe, append-only list of ledger entries. An optional sink sees
/// each entry in commit order (e.g. to persist it).
#[derive(Default)]
pub struct Ledger {
    entries: Mutex<Vec<TokenLedgerEntry>>,
    sink: Option<Sink>,
}

impl std::fmt::Debug for Ledger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ledger").field("entries", &self.len()).finish()
    }
}

impl Ledger {
    pub fn with_sink(sink: impl Fn(&TokenLedgerEntry) + Send + Sync + 'static) -> Self {
        Self {
            entries: Mutex::default(),
            sink: Some(Arc::new(sink)),
        }
    }

    pub fn record(&self, entry: TokenLedgerEntry) {
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(sink) = &self.sink {
            sink(&entry);
        }
        entries.push(entry);
    }

    pub fn entries(&self) -> Vec<TokenLedgerEntry> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Entries charged to one document and stage, in commit order.
    pub fn entries_for(&self, doc_id: &str, stage: Stage) -> Vec<TokenLedgerEntry> {
        self.entries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .filter(|e| e.doc_id == doc_id && e.stage == stage)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn report(&self) -> LedgerReport {
        ledger_report(&self.entries())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTotals {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub wall_time_ms: u64,
}

impl StageTotals {
    fn add(&mut self, e: &TokenLedgerEntry) {
        self.calls += 1;
        self.prompt_tokens += e.prompt_tokens;
        self.completion_tokens += e.completion_tokens;
        self.total_tokens += e.total_tokens();
        self.wall_time_ms += e.wall_time_ms;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerReport {
    pub stages: BTreeMap<Stage, StageTotals>,
    pub total: StageTotals,
}

pub fn ledger_report(entries: &[TokenLedgerEntry]) -> LedgerReport {
    let mut report = LedgerReport::default();
    for e in entries {
        report.stages.entry(e.stage).or_default().add(e);
        report.total.add(e);
    }
    report
}

/// `100 · (other − base) / base`; `None` when `base` is zero.
pub fn pct_diff(base: f64, other: f64) -> Option<f64> {
    (base != 0.0).then(|| 100.0 * (other - base) / base)
}

/// Formats a percentage with one decimal and an explicit `+` for increases.
pub fn format_pct(pct: Option<f64>) -> String {
    match pct {
        None => "n/a".to_owned(),
        Some(p) => {
            let rounded = (p * 10.0).round() / 10.0;
            if rounded > 0.0 {
                format!("+{rounded:.1}%")
            } else if rounded < 0.0 {
                format!("{rounded:.1}%")
            } else {
                "0.0%".to_owned()
            }
        }
    }
}
