//! Per-run token and runtime report, and the cross-mode comparison table.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Mode;
use crate::corpus_io::Stage;
use crate::llm_gateway::{format_pct, ledger_report, pct_diff, LedgerReport, TokenLedgerEntry};

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub docs_total: usize,
    /// Documents with an assessment at the end of the run.
    pub docs_processed: usize,
    pub docs_skipped: usize,
    pub docs_failed: usize,
    pub backend_unreachable: bool,
    pub total_tokens: u64,
    /// Tokens of summary calls.
    pub machine_tier_tokens: u64,
    /// Tokens of retrieval and comparison calls.
    pub human_tier_tokens: u64,
    /// Largest single prompt sent, in estimated tokens.
    pub max_prompt_tokens: u64,
    pub wall_time_ms: u64,
    pub ledger: LedgerReport,
}

impl RunReport {
    /// Builds the token totals from raw ledger entries.
    pub fn from_ledger(mode: Mode, entries: &[TokenLedgerEntry]) -> Self {
        let tier_sum = |machine: bool| {
            entries
                .iter()
                .filter(|e| (e.stage == Stage::Summary) == machine)
                .map(TokenLedgerEntry::total_tokens)
                .sum()
        };
        let ledger = ledger_report(entries);
        Self {
            mode,
            docs_total: 0,
            docs_processed: 0,
            docs_skipped: 0,
            docs_failed: 0,
            backend_unreachable: false,
            total_tokens: ledger.total.total_tokens,
            machine_tier_tokens: tier_sum(true),
            human_tier_tokens: tier_sum(false),
            max_prompt_tokens: entries.iter().map(|e| e.prompt_tokens).max().unwrap_or(0),
            wall_time_ms: 0,
            ledger,
        }
    }

    /// 0 on success, 3 if some documents failed, 4 if a backend could not
    /// be reached.
    pub fn exit_code(&self) -> i32 {
        if self.backend_unreachable {
            4
        } else if self.docs_failed > 0 {
            3
        } else {
            0
        }
    }

    pub fn token_pct_vs(&self, reference: &RunReport) -> Option<f64> {
        pct_diff(reference.total_tokens as f64, self.total_tokens as f64)
    }

    pub fn runtime_pct_vs(&self, reference: &RunReport) -> Option<f64> {
        pct_diff(reference.wall_time_ms as f64, self.wall_time_ms as f64)
    }

    pub fn load(run_dir: &Path) -> std::io::Result<Self> {
        let raw = std::fs::read_to_string(run_dir.join(REPORT_FILE))?;
        serde_json::from_str(&raw).map_err(std::io::Error::other)
    }

    pub fn save(&self, run_dir: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(run_dir.join(REPORT_FILE), json + "\n")
    }
}

/// Table of token and runtime differences of each run against `reference`.
pub fn format_comparison(reference: &RunReport, runs: &[&RunReport]) -> String {
    let mut out = format!(
        "{:<10} {:>14} {:>14} {:>14} {:>16}\n",
        "mode", "tokens", "% token diff", "runtime (ms)", "% runtime diff"
    );
    for run in std::iter::once(reference).chain(runs.iter().copied()) {
        let _ = writeln!(
            out,
            "{:<10} {:>14} {:>14} {:>14} {:>16}",
            run.mode.as_str(),
            run.total_tokens,
            format_pct(run.token_pct_vs(reference)),
            run.wall_time_ms,
            format_pct(run.runtime_pct_vs(reference)),
        );
    }
    out
}

/// Per-stage breakdown of one run.
pub fn format_report(report: &RunReport) -> String {
    let mut out = format!(
        "mode {}: {} of {} documents processed, {} skipped, {} failed\n",
        report.mode, report.docs_processed, report.docs_total, report.docs_skipped, report.docs_failed
    );
    let _ = writeln!(
        out,
        "{:<12} {:>7} {:>14} {:>14} {:>14} {:>12}",
        "stage", "calls", "prompt", "completion", "total", "time (ms)"
    );
    for (stage, t) in &report.ledger.stages {
        let _ = writeln!(
            out,
            "{:<12} {:>7} {:>14} {:>14} {:>14} {:>12}",
            stage.as_str(),
            t.calls,
            t.prompt_tokens,
            t.completion_tokens,
            t.total_tokens,
            t.wall_time_ms
        );
    }
    let t = &report.ledger.total;
    let _ = writeln!(
        out,
        "{:<12} {:>7} {:>14} {:>14} {:>14} {:>12}",
        "total", t.calls, t.prompt_tokens, t.completion_tokens, t.total_tokens, report.wall_time_ms
    );
    let _ = writeln!(
        out,
        "machine-level tokens {}, human-level tokens {}, largest prompt {} tokens",
        report.machine_tier_tokens, report.human_tier_tokens, report.max_prompt_tokens
    );
    out
}
