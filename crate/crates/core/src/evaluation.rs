//! ROUGE-1/2/L scoring of summaries against their source documents, and
//! aggregation of human survey scorecards.
//!
//! Text is lowercased, split on whitespace, and stripped of leading and
//! trailing punctuation before scoring. N-gram overlap uses the clipped
//! multiset intersection by default; `OverlapMode::Set` counts distinct
//! n-grams instead. Corpus averages weight every document equally.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus_io::{ArtifactStore, CorpusError, Document, Stage};
use crate::summarizer::SummaryRecord;

pub const ROUGE_JSON_FILE: &str = "rouge_report.json";
pub const ROUGE_TEXT_FILE: &str = "rouge_report.txt";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: row {row}: {message}")]
    MalformedRow { path: String, row: u64, message: String },
    #[error("model label `{0}` has no entry in the unmasking map")]
    UnknownModelLabel(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Lowercased whitespace tokens with surrounding punctuation removed.
pub fn tokenize_for_rouge(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RougeN {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "L")]
    L,
}

impl RougeN {
    pub fn label(self) -> &'static str {
        match self {
            Self::One => "1",
            Self::Two => "2",
            Self::L => "L",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    #[default]
    Clipped,
    Set,
}

impl std::str::FromStr for OverlapMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clipped" => Ok(Self::Clipped),
            "set" => Ok(Self::Set),
            other => Err(format!("unknown rouge overlap mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub n: RougeN,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl RougeScore {
    /// F1 is taken as `2·overlap / (cand + ref)`, which equals the harmonic
    /// mean of precision and recall without the extra rounding step.
    pub fn from_counts(n: RougeN, overlap: usize, cand_total: usize, ref_total: usize) -> Self {
        Self {
            n,
            precision: ratio(overlap, cand_total),
            recall: ratio(overlap, ref_total),
            f1: ratio(2 * overlap, cand_total + ref_total),
        }
    }

    pub fn from_pr(n: RougeN, precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            n,
            precision,
            recall,
            f1,
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N over pre-tokenized text.
pub fn rouge_n_tokens(cand: &[String], reference: &[String], n: usize, mode: OverlapMode) -> RougeScore {
    assert!(n == 1 || n == 2, "rouge_n supports n = 1 or 2");
    let label = if n == 1 { RougeN::One } else { RougeN::Two };
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    match mode {
        OverlapMode::Clipped => {
            let overlap = c.iter().map(|(g, cc)| r.get(g).map_or(0, |rc| (*cc).min(*rc))).sum();
            let total = |m: &HashMap<&[String], usize>| m.values().sum();
            RougeScore::from_counts(label, overlap, total(&c), total(&r))
        }
        OverlapMode::Set => {
            let overlap = c.keys().filter(|g| r.contains_key(*g)).count();
            RougeScore::from_counts(label, overlap, c.len(), r.len())
        }
    }
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> RougeScore {
    rouge_n_with(candidate, reference, n, OverlapMode::Clipped)
}

pub fn rouge_n_with(candidate: &str, reference: &str, n: usize, mode: OverlapMode) -> RougeScore {
    rouge_n_tokens(&tokenize_for_rouge(candidate), &tokenize_for_rouge(reference), n, mode)
}

/// Word-level longest common subsequence length, O(|a|·|b|) time and
/// O(min) memory.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

pub fn rouge_l_tokens(cand: &[String], reference: &[String]) -> RougeScore {
    RougeScore::from_counts(RougeN::L, lcs_len(cand, reference), cand.len(), reference.len())
}

pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    rouge_l_tokens(&tokenize_for_rouge(candidate), &tokenize_for_rouge(reference))
}

/// ROUGE-1, ROUGE-2 and ROUGE-L for one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeTriple {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    #[serde(rename = "rougeL")]
    pub rouge_l: RougeScore,
}

impl RougeTriple {
    pub fn score(candidate: &str, reference: &str, mode: OverlapMode) -> Self {
        let c = tokenize_for_rouge(candidate);
        let r = tokenize_for_rouge(reference);
        Self {
            rouge1: rouge_n_tokens(&c, &r, 1, mode),
            rouge2: rouge_n_tokens(&c, &r, 2, mode),
            rouge_l: rouge_l_tokens(&c, &r),
        }
    }

    pub fn get(&self, n: RougeN) -> &RougeScore {
        match n {
            RougeN::One => &self.rouge1,
            RougeN::Two => &self.rouge2,
            RougeN::L => &self.rouge_l,
        }
    }

    /// Component-wise arithmetic mean. F1 is averaged like the other
    /// columns, not recomputed from the mean precision and recall.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a RougeTriple>) -> Option<Self> {
        let items: Vec<_> = items.into_iter().collect();
        if items.is_empty() {
            return None;
        }
        let count = items.len() as f64;
        let avg = |n: RougeN| {
            let sum = |f: fn(&RougeScore) -> f64| items.iter().map(|t| f(t.get(n))).sum::<f64>() / count;
            RougeScore {
                n,
                precision: sum(|s| s.precision),
                recall: sum(|s| s.recall),
                f1: sum(|s| s.f1),
            }
        };
        Some(Self {
            rouge1: avg(RougeN::One),
            rouge2: avg(RougeN::Two),
            rouge_l: avg(RougeN::L),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRougeReport {
    pub overlap: OverlapMode,
    pub per_document: BTreeMap<String, RougeTriple>,
    /// Absent when no document could be scored.
    pub averages: Option<RougeTriple>,
    /// Documents in the corpus without a summary.
    pub missing: Vec<String>,
}

impl CorpusRougeReport {
    /// Scores `(doc_id, candidate, reference)` triples in parallel.
    pub fn from_pairs<'a>(pairs: &[(&'a str, &'a str, &'a str)], overlap: OverlapMode) -> Self {
        let per_document: BTreeMap<String, RougeTriple> = pairs
            .par_iter()
            .map(|(id, cand, reference)| (id.to_string(), RougeTriple::score(cand, reference, overlap)))
            .collect();
        Self {
            overlap,
            averages: RougeTriple::mean(per_document.values()),
            per_document,
            missing: Vec::new(),
        }
    }
}

/// Scores every persisted summary in `run_dir` against its document body
/// and writes the JSON and text reports next to it.
pub fn score_summaries(
    run_dir: &Path,
    corpus: &[Document],
    overlap: OverlapMode,
) -> Result<CorpusRougeReport, EvalError> {
    let store = ArtifactStore::open(run_dir)?;
    let summaries = store.load_stage(Stage::Summary)?;
    let mut texts = Vec::new();
    let mut missing = Vec::new();
    for doc in corpus.iter().filter(|d| d.has_body()) {
        match summaries.get(&doc.doc_id) {
            Some(artifact) => texts.push((doc, artifact.payload_as::<SummaryRecord>()?.final_text)),
            None => {
                log::warn!("document {} has no summary; excluded from ROUGE scoring", doc.doc_id);
                missing.push(doc.doc_id.clone());
            }
        }
    }
    let pairs: Vec<_> = texts
        .iter()
        .map(|(doc, summary)| (doc.doc_id.as_str(), summary.as_str(), doc.body.as_str()))
        .collect();
    let mut report = CorpusRougeReport::from_pairs(&pairs, overlap);
    report.missing = missing;

    let json_path = run_dir.join(ROUGE_JSON_FILE);
    fs::write(&json_path, serde_json::to_string_pretty(&report)?).map_err(|source| EvalError::Io {
        path: json_path.display().to_string(),
        source,
    })?;
    let text = match &report.averages {
        Some(avg) => format_rouge_table(&[("summary", avg)]),
        None => "no documents scored\n".to_owned(),
    };
    let text_path = run_dir.join(ROUGE_TEXT_FILE);
    fs::write(&text_path, text).map_err(|source| EvalError::Io {
        path: text_path.display().to_string(),
        source,
    })?;
    Ok(report)
}

/// Plain-text table with one column per labelled run and rows grouped by
/// precision, recall and F1, each split by n.
pub fn format_rouge_table(columns: &[(&str, &RougeTriple)]) -> String {
    let width = columns.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<10}", "");
    for (label, _) in columns {
        let _ = write!(out, "  {label:>width$}");
    }
    out.push('\n');
    type Metric = fn(&RougeScore) -> f64;
    let metrics: [(&str, Metric); 3] = [
        ("Precision", |s| s.precision),
        ("Recall", |s| s.recall),
        ("F1", |s| s.f1),
    ];
    for (name, metric) in metrics {
        out.push_str(name);
        out.push('\n');
        for n in [RougeN::One, RougeN::Two, RougeN::L] {
            let _ = write!(out, "{:<10}", format!("n = {}", n.label()));
            for (_, triple) in columns {
                let _ = write!(out, "  {:>width$.3}", metric(triple.get(n)));
            }
            out.push('\n');
        }
    }
    out
}

pub const SURVEY_QUESTIONS: [&str; 5] = [
    "Correctly Stated Roles",
    "Correctly Stated Transaction Type",
    "Correctly Stated Transaction Amount",
    "Correct Comparison",
    "Correct Confidence Score",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyScorecard {
    pub annotator_id: String,
    pub doc_id: String,
    pub model_label: String,
    pub answers: [u8; 5],
}

fn open_csv(path: &Path) -> Result<csv::Reader<fs::File>, EvalError> {
    csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| EvalError::Csv {
            path: path.display().to_string(),
            source,
        })
}

/// Reads `annotator_id,doc_id,model_label,q1..q5`. Rows are numbered from 2
/// (the header is row 1).
pub fn load_scorecards(path: &Path) -> Result<Vec<SurveyScorecard>, EvalError> {
    let shown = path.display().to_string();
    let mut reader = open_csv(path)?;
    let mut cards = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i as u64 + 2;
        let bad = |message: String| EvalError::MalformedRow {
            path: shown.clone(),
            row,
            message,
        };
        let record = record.map_err(|source| EvalError::Csv {
            path: shown.clone(),
            source,
        })?;
        if record.len() != 8 {
            return Err(bad(format!(
                "expected 3 id columns and 5 answers, found {} fields",
                record.len()
            )));
        }
        let mut answers = [0u8; 5];
        for (q, slot) in answers.iter_mut().enumerate() {
            *slot = match &record[q + 3] {
                "0" => 0,
                "1" => 1,
                other => return Err(bad(format!("q{} must be 0 or 1, found `{other}`", q + 1))),
            };
        }
        cards.push(SurveyScorecard {
            annotator_id: record[0].to_owned(),
            doc_id: record[1].to_owned(),
            model_label: record[2].to_owned(),
            answers,
        });
    }
    Ok(cards)
}

/// Reads `model_label,model_name`.
pub fn load_unmask_map(path: &Path) -> Result<BTreeMap<String, String>, EvalError> {
    let shown = path.display().to_string();
    let mut reader = open_csv(path)?;
    let mut map = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|source| EvalError::Csv {
            path: shown.clone(),
            source,
        })?;
        if record.len() != 2 {
            return Err(EvalError::MalformedRow {
                path: shown.clone(),
                row: i as u64 + 2,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        map.insert(record[0].to_owned(), record[1].to_owned());
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSurveyScore {
    pub cards: usize,
    pub annotators: usize,
    pub documents: usize,
    pub means: [f64; 5],
    /// Sum of the five means, on a 0 to 5 scale.
    pub overall: f64,
}

/// Per-model question means across all annotators and documents, keyed by
/// unmasked model name.
pub fn aggregate_survey(
    cards: &[SurveyScorecard],
    unmask: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, ModelSurveyScore>, EvalError> {
    let mut groups: BTreeMap<&str, Vec<&SurveyScorecard>> = BTreeMap::new();
    for card in cards {
        let model = unmask
            .get(&card.model_label)
            .ok_or_else(|| EvalError::UnknownModelLabel(card.model_label.clone()))?;
        groups.entry(model).or_default().push(card);
    }
    Ok(groups
        .into_iter()
        .map(|(model, cards)| {
            let count = cards.len() as f64;
            let mut means = [0.0; 5];
            for (q, mean) in means.iter_mut().enumerate() {
                *mean = cards.iter().map(|c| f64::from(c.answers[q])).sum::<f64>() / count;
            }
            let distinct = |f: fn(&SurveyScorecard) -> &str| cards.iter().map(|c| f(c)).collect::<HashSet<_>>().len();
            let score = ModelSurveyScore {
                cards: cards.len(),
                annotators: distinct(|c| &c.annotator_id),
                documents: distinct(|c| &c.doc_id),
                means,
                overall: means.iter().sum(),
            };
            (model.to_owned(), score)
        })
        .collect())
}

pub fn format_survey_table(scores: &BTreeMap<String, ModelSurveyScore>) -> String {
    let width = scores.keys().map(String::len).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}", "model");
    for q in SURVEY_QUESTIONS.iter().chain(["Overall Score"].iter()) {
        let _ = write!(out, "  {q}");
    }
    out.push('\n');
    for (model, score) in scores {
        let _ = write!(out, "{model:<width$}");
        for (q, mean) in SURVEY_QUESTIONS.iter().zip(score.means) {
            let _ = write!(out, "  {mean:>w$.3}", w = q.len());
        }
        let _ = write!(out, "  {:>13.3}", score.overall);
        out.push('\n');
    }
    out
}
