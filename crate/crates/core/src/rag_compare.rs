//! Retrieval-augmented comparison: the retrieval question, the six-field
//! comparison assessment, and parsing of the assessment response.

use std::sync::OnceLock;

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus_io::Stage;
use crate::criteria_store::{CriteriaIndex, IndexError, RetrievalResult};
use crate::llm_gateway::{CallContext, CompletionProfile, GatewayError, LlmGateway};
use crate::prompts::{markers, render, COMPARISON_TEMPLATE, RAG_TEMPLATE};

/// User-supplied scope of the comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonContext {
    pub company: String,
    pub target_topic: String,
}

impl ComparisonContext {
    pub fn new(company: impl Into<String>, target_topic: impl Into<String>) -> Result<Self, String> {
        let ctx = Self {
            company: company.into(),
            target_topic: target_topic.into(),
        };
        if ctx.company.trim().is_empty() {
            return Err("company must not be empty".into());
        }
        if ctx.target_topic.trim().is_empty() {
            return Err("target_topic must not be empty".into());
        }
        Ok(ctx)
    }
}

/// What text is embedded to query the criteria index.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// The document summary followed by the target topic on its own line.
    #[default]
    SummaryPlusTopic,
    /// The fully rendered retrieval prompt.
    FullPrompt,
}

impl std::str::FromStr for QueryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "summary_plus_topic" => Ok(Self::SummaryPlusTopic),
            "full_prompt" => Ok(Self::FullPrompt),
            other => Err(format!("unknown query mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagOutput {
    pub doc_id: String,
    pub retrieved: RetrievalResult,
    pub augmented_text: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CompareError {
    #[error(transparent)]
    Retrieval(#[from] IndexError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl CompareError {
    pub fn is_unreachable(&self) -> bool {
        match self {
            Self::Gateway(e) | Self::Retrieval(IndexError::Gateway(e)) => e.is_unreachable(),
            _ => false,
        }
    }
}

pub fn render_rag_prompt(summary: &str, target_topic: &str) -> String {
    render(RAG_TEMPLATE, &[("summary", summary), ("target_topic", target_topic)])
}

pub fn render_ca_prompt(summary: &str, retrieved_text: &str, ctx: &ComparisonContext) -> String {
    render(
        COMPARISON_TEMPLATE,
        &[
            ("company", &ctx.company),
            ("summary", summary),
            ("retrieved_text", retrieved_text),
            ("target_topic", &ctx.target_topic),
        ],
    )
}

/// Retrieval question followed by the comparison request, for pipelines
/// that answer both in one call. `retrieved_text` fills the comparison's
/// criteria slot.
pub fn render_merged_prompt(summary: &str, retrieved_text: &str, ctx: &ComparisonContext) -> String {
    format!(
        "{}\n\n{}",
        render_rag_prompt(summary, &ctx.target_topic),
        render_ca_prompt(summary, retrieved_text, ctx)
    )
}

/// Passage texts in rank order, one `Criteria passage i:` entry per hit.
pub fn format_passages(index: &CriteriaIndex, retrieved: &RetrievalResult) -> String {
    retrieved
        .hits
        .iter()
        .enumerate()
        .filter_map(|(i, hit)| {
            index
                .passage(hit.passage_id)
                .map(|p| format!("{}{}: {}", markers::PASSAGE_PREFIX, i + 1, p.text))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn retrieval_query(summary: &str, target_topic: &str, mode: QueryMode) -> String {
    match mode {
        QueryMode::SummaryPlusTopic => format!("{summary}\n{target_topic}"),
        QueryMode::FullPrompt => render_rag_prompt(summary, target_topic),
    }
}

/// Retrieves the top `k` criteria passages for `summary` and asks the
/// human-level model which criteria matter for the document.
#[allow(clippy::too_many_arguments)]
pub fn run_rag(
    doc_id: &str,
    summary: &str,
    index: &CriteriaIndex,
    ctx: &ComparisonContext,
    profile: &CompletionProfile,
    k: usize,
    query_mode: QueryMode,
    gateway: &LlmGateway,
) -> Result<RagOutput, CompareError> {
    let query = retrieval_query(summary, &ctx.target_topic, query_mode);
    let retrieved = index.top_k(gateway, doc_id, &query, k)?;
    let prompt = format!(
        "{}\n\n{}",
        render_rag_prompt(summary, &ctx.target_topic),
        format_passages(index, &retrieved)
    );
    let augmented_text = gateway.complete(
        profile,
        &prompt,
        CallContext {
            doc_id,
            stage: Stage::Retrieval,
        },
    )?;
    Ok(RagOutput {
        doc_id: doc_id.to_owned(),
        retrieved,
        augmented_text,
    })
}

/// Sends the comparison prompt and parses the response. Parse problems are
/// reported on the assessment; only transport failures are errors.
pub fn run_assessment(
    doc_id: &str,
    summary: &str,
    retrieved_text: &str,
    ctx: &ComparisonContext,
    profile: &CompletionProfile,
    gateway: &LlmGateway,
) -> Result<Assessment, CompareError> {
    complete_and_parse(
        doc_id,
        &render_ca_prompt(summary, retrieved_text, ctx),
        profile,
        gateway,
    )
}

pub fn complete_and_parse(
    doc_id: &str,
    prompt: &str,
    profile: &CompletionProfile,
    gateway: &LlmGateway,
) -> Result<Assessment, CompareError> {
    let raw = gateway.complete(
        profile,
        prompt,
        CallContext {
            doc_id,
            stage: Stage::Assessment,
        },
    )?;
    Ok(parse_assessment(doc_id, &raw))
}

/// The six numbered fields of an assessment response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssessmentField {
    ArticleDate,
    Participants,
    Transaction,
    TransactionAmount,
    Comparison,
    ConfidenceScore,
}

impl AssessmentField {
    pub const ALL: [AssessmentField; 6] = [
        Self::ArticleDate,
        Self::Participants,
        Self::Transaction,
        Self::TransactionAmount,
        Self::Comparison,
        Self::ConfidenceScore,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::ArticleDate => "Article Date",
            Self::Participants => "Participants of the transaction",
            Self::Transaction => "Transaction and Transaction type",
            Self::TransactionAmount => "Transaction amount in dollars",
            Self::Comparison => "Comparison",
            Self::ConfidenceScore => "Confidence score",
        }
    }

    fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.label().eq_ignore_ascii_case(label))
    }

    fn number(self) -> u8 {
        Self::ALL.iter().position(|f| *f == self).unwrap() as u8 + 1
    }
}

/// A field-level problem found while parsing. None of these abort parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseWarning {
    MissingField {
        field: AssessmentField,
    },
    UnparseableDate {
        value: String,
    },
    UnclearTransaction {
        value: String,
    },
    UnparseableAmount {
        value: String,
    },
    UnparseableConfidence {
        value: String,
    },
    ConfidenceClamped {
        original: i64,
        clamped: u8,
    },
    /// No transaction was reported but the confidence score is not 0.
    NoTransactionNonzeroScore {
        confidence: u8,
    },
    /// No transaction was reported but a positive amount was given.
    NoTransactionNonzeroAmount {
        amount: f64,
    },
}

impl ParseWarning {
    /// Whether the warning means a field could not be extracted.
    pub fn is_parse_failure(&self) -> bool {
        matches!(
            self,
            Self::MissingField { .. }
                | Self::UnparseableDate { .. }
                | Self::UnclearTransaction { .. }
                | Self::UnparseableAmount { .. }
                | Self::UnparseableConfidence { .. }
        )
    }
}

impl std::fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::MissingField { field } => write!(f, "missing field `{}`", field.label()),
            Self::UnparseableDate { value } => write!(f, "unparseable article date `{value}`"),
            Self::UnclearTransaction { value } => {
                write!(f, "cannot tell whether a transaction occurred from `{value}`")
            }
            Self::UnparseableAmount { value } => write!(f, "unparseable transaction amount `{value}`"),
            Self::UnparseableConfidence { value } => write!(f, "unparseable confidence score `{value}`"),
            Self::ConfidenceClamped { original, clamped } => {
                write!(f, "confidence score {original} clamped to {clamped}")
            }
            Self::NoTransactionNonzeroScore { confidence } => {
                write!(f, "no transaction reported but confidence score is {confidence}")
            }
            Self::NoTransactionNonzeroAmount { amount } => {
                write!(f, "no transaction reported but amount is {amount}")
            }
        }
    }
}

/// Parsed comparison assessment. `raw_response` is always kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub doc_id: String,
    pub article_date: Option<NaiveDate>,
    pub participants: String,
    pub transaction_occurred: Option<bool>,
    pub transaction_type: Option<String>,
    pub transaction_amount_usd: Option<f64>,
    pub comparison: String,
    pub confidence_score: Option<u8>,
    pub raw_response: String,
    pub parse_error: bool,
    pub warnings: Vec<ParseWarning>,
}

fn label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^\s*(?:[-*•>#]+\s*)?(?:\*\*|__)?\s*(?:([1-6])\s*[.):]\s*)?(?:\*\*|__)?\s*(article date|participants of the transaction|transaction and transaction type|transaction amount in dollars|comparison|confidence score)\s*(?:\*\*|__)?\s*:\s*(?:\*\*|__)?\s*(.*)$",
        )
        .unwrap()
    })
}

/// Splits a response into field values keyed by field. The first occurrence
/// of a label wins; later lines belong to the field above them.
fn split_fields(raw: &str) -> Vec<(AssessmentField, String)> {
    let mut fields: Vec<(AssessmentField, Vec<String>)> = Vec::new();
    for line in raw.lines() {
        let found = label_re().captures(line).and_then(|caps| {
            let field = AssessmentField::from_label(caps.get(2)?.as_str())?;
            let numbered_ok = caps
                .get(1)
                .is_none_or(|n| n.as_str().parse::<u8>().ok() == Some(field.number()));
            let is_new = !fields.iter().any(|(f, _)| *f == field);
            (numbered_ok && is_new).then(|| (field, caps[3].to_owned()))
        });
        match (found, fields.last_mut()) {
            (Some((field, first)), _) => fields.push((field, vec![first])),
            (None, Some((_, lines))) => lines.push(line.to_owned()),
            (None, None) => {}
        }
    }
    fields.into_iter().map(|(f, lines)| (f, clean_value(&lines))).collect()
}

/// Strips bullets and markdown emphasis, keeping one line per entry.
fn clean_value(lines: &[String]) -> String {
    lines
        .iter()
        .map(|l| {
            let l = l.trim();
            let l = match l.strip_prefix(['-', '*', '•']) {
                Some(rest) if rest.starts_with(char::is_whitespace) => rest,
                _ => l,
            };
            l.trim().trim_matches('*').trim().to_owned()
        })
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

fn parse_date(value: &str) -> Option<NaiveDate> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\b(\d{1,2})/(\d{1,2})/(\d{4})\b").unwrap());
    let caps = re.captures(value)?;
    NaiveDate::from_ymd_opt(caps[3].parse().ok()?, caps[1].parse().ok()?, caps[2].parse().ok()?)
}

fn parse_transaction(value: &str) -> Option<(bool, Option<String>)> {
    let flat = value.replace('\n', " ");
    let lower = flat.to_lowercase();
    let starts_with_word =
        |w: &str| lower.starts_with(w) && !lower[w.len()..].starts_with(|c: char| c.is_alphanumeric());
    let negative = [
        "no transaction",
        "not taken place",
        "has not",
        "did not",
        "no,",
        "not applicable",
    ];
    if starts_with_word("no") || starts_with_word("none") || negative.iter().any(|n| lower.contains(n)) {
        return Some((false, None));
    }
    if starts_with_word("yes") {
        let rest = flat[3..].trim_start_matches(|c: char| c.is_whitespace() || ",.;:-\u{2013}\u{2014}".contains(c));
        let rest = rest
            .strip_prefix("Type:")
            .or_else(|| rest.strip_prefix("type:"))
            .unwrap_or(rest)
            .trim();
        let kind = (!rest.is_empty()).then(|| rest.to_owned());
        return Some((true, kind));
    }
    if lower.contains("has taken place") || lower.contains("took place") {
        return Some((true, Some(flat.trim().to_owned())));
    }
    None
}

/// Parses a decimal literal (commas allowed) times `10^exp` without
/// accumulating binary rounding error.
fn scaled_decimal(digits: &str, exp: i32) -> Option<f64> {
    let cleaned: String = digits.chars().filter(|c| *c != ',').collect();
    format!("{cleaned}e{exp}").parse().ok()
}

fn multiplier_exp(word: Option<&str>) -> i32 {
    match word.map(str::to_lowercase).as_deref() {
        Some("thousand" | "k") => 3,
        Some("million" | "m" | "mm" | "mn") => 6,
        Some("billion" | "b" | "bn") => 9,
        Some("trillion" | "tn") => 12,
        _ => 0,
    }
}

/// First currency-like amount in `value`, in dollars.
pub fn parse_amount(value: &str) -> Option<f64> {
    static CURRENCY: OnceLock<Regex> = OnceLock::new();
    static BARE: OnceLock<Regex> = OnceLock::new();
    let suffix = r"(?:\s*(trillion|billion|million|thousand|tn|bn|mm|mn|m|b|k)\b)?";
    let currency = CURRENCY
        .get_or_init(|| Regex::new(&format!(r"(?i)(?:US\$|\$|USD\s*)\s*(\d[\d,]*(?:\.\d+)?){suffix}")).unwrap());
    if let Some(c) = currency.captures(value) {
        return scaled_decimal(&c[1], multiplier_exp(c.get(2).map(|m| m.as_str())));
    }
    let lower = value.to_lowercase();
    if lower.contains("dollar") || lower.contains("usd") {
        let bare = BARE.get_or_init(|| Regex::new(&format!(r"(?i)(\d[\d,]*(?:\.\d+)?){suffix}")).unwrap());
        if let Some(c) = bare.captures(value) {
            return scaled_decimal(&c[1], multiplier_exp(c.get(2).map(|m| m.as_str())));
        }
    }
    None
}

fn parse_confidence(value: &str, warnings: &mut Vec<ParseWarning>) -> Option<u8> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"-?\d+").unwrap());
    let Some(m) = re.find(value) else {
        warnings.push(ParseWarning::UnparseableConfidence {
            value: value.to_owned(),
        });
        return None;
    };
    let original: i64 = m.as_str().parse().unwrap_or(if m.as_str().starts_with('-') {
        i64::MIN
    } else {
        i64::MAX
    });
    let clamped = original.clamp(0, 100) as u8;
    if i64::from(clamped) != original {
        warnings.push(ParseWarning::ConfidenceClamped { original, clamped });
    }
    Some(clamped)
}

/// Extracts the six fields from a model response. Never fails: missing or
/// unreadable fields are left empty and reported as warnings.
pub fn parse_assessment(doc_id: &str, raw: &str) -> Assessment {
    let fields = split_fields(raw);
    let get = |f: AssessmentField| fields.iter().find(|(g, _)| *g == f).map(|(_, v)| v.as_str());
    let mut warnings = Vec::new();
    let require = |f: AssessmentField, warnings: &mut Vec<ParseWarning>| {
        let v = get(f);
        if v.is_none() {
            warnings.push(ParseWarning::MissingField { field: f });
        }
        v
    };

    let article_date = require(AssessmentField::ArticleDate, &mut warnings).and_then(|v| {
        let d = parse_date(v);
        if d.is_none() {
            warnings.push(ParseWarning::UnparseableDate { value: v.to_owned() });
        }
        d
    });
    let participants = require(AssessmentField::Participants, &mut warnings)
        .unwrap_or_default()
        .to_owned();
    let (transaction_occurred, transaction_type) = match require(AssessmentField::Transaction, &mut warnings) {
        Some(v) => match parse_transaction(v) {
            Some((occurred, kind)) => (Some(occurred), kind),
            None => {
                warnings.push(ParseWarning::UnclearTransaction { value: v.to_owned() });
                (None, None)
            }
        },
        None => (None, None),
    };
    let transaction_amount_usd = require(AssessmentField::TransactionAmount, &mut warnings).and_then(|v| {
        let a = parse_amount(v);
        if a.is_none() {
            warnings.push(ParseWarning::UnparseableAmount { value: v.to_owned() });
        }
        a
    });
    let comparison = require(AssessmentField::Comparison, &mut warnings)
        .unwrap_or_default()
        .to_owned();
    let confidence_score =
        require(AssessmentField::ConfidenceScore, &mut warnings).and_then(|v| parse_confidence(v, &mut warnings));

    let no_transaction = transaction_occurred == Some(false) || transaction_amount_usd == Some(0.0);
    if no_transaction {
        if let Some(c) = confidence_score.filter(|c| *c > 0) {
            warnings.push(ParseWarning::NoTransactionNonzeroScore { confidence: c });
        }
    }
    if transaction_occurred == Some(false) {
        if let Some(a) = transaction_amount_usd.filter(|a| *a > 0.0) {
            warnings.push(ParseWarning::NoTransactionNonzeroAmount { amount: a });
        }
    }

    Assessment {
        doc_id: doc_id.to_owned(),
        article_date,
        participants,
        transaction_occurred,
        transaction_type,
        transaction_amount_usd,
        comparison,
        confidence_score,
        raw_response: raw.to_owned(),
        parse_error: warnings.iter().any(ParseWarning::is_parse_failure),
        warnings,
    }
}
