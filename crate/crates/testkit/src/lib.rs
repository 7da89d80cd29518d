//! Test support for asc2end: paths to the bundled toy data, golden prompt
//! files, and brute-force reference implementations of the ROUGE scores that
//! share no code with the library.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use asc2end_core::runner::{Mode, RunConfig};

pub fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Golden file contents without the single trailing newline the files end with.
pub fn golden(name: &str) -> String {
    let raw = std::fs::read_to_string(golden_dir().join(name)).unwrap();
    raw.strip_suffix('\n').unwrap_or(&raw).to_owned()
}

/// The bundled toy configuration, writing into `run_dir`.
pub fn toy_config(mode: Mode, run_dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_file(&toy_dir().join("asc2end.conf")).unwrap();
    cfg.mode = mode;
    cfg.run_dir = Some(run_dir.to_path_buf());
    cfg
}

/// Tokenizer written independently: scan characters, cut on whitespace, then
/// drop leading and trailing non-alphanumeric characters.
pub fn oracle_tokens(text: &str) -> Vec<String> {
    let mut words: Vec<Vec<char>> = vec![Vec::new()];
    for ch in text.chars() {
        if ch.is_whitespace() {
            words.push(Vec::new());
        } else {
            words.last_mut().unwrap().push(ch);
        }
    }
    let mut out = Vec::new();
    for w in words {
        let mut lo = 0;
        let mut hi = w.len();
        while lo < hi && !w[lo].is_alphanumeric() {
            lo += 1;
        }
        while hi > lo && !w[hi - 1].is_alphanumeric() {
            hi -= 1;
        }
        if lo < hi {
            let s: String = w[lo..hi].iter().collect();
            out.push(s.to_lowercase());
        }
    }
    out
}

fn grams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + n <= tokens.len() {
        out.push(tokens[i..i + n].to_vec());
        i += 1;
    }
    out
}

fn prf(overlap: f64, cand: f64, reference: f64) -> (f64, f64, f64) {
    let p = if cand > 0.0 { overlap / cand } else { 0.0 };
    let r = if reference > 0.0 { overlap / reference } else { 0.0 };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

/// ROUGE-N with clipped counts: each candidate n-gram matches at most as many
/// times as it occurs in the reference. Counts by linear scans.
pub fn oracle_rouge_n(candidate: &str, reference: &str, n: usize) -> (f64, f64, f64) {
    let c = grams(&oracle_tokens(candidate), n);
    let r = grams(&oracle_tokens(reference), n);
    let mut seen: Vec<&Vec<String>> = Vec::new();
    let mut overlap = 0usize;
    for g in &c {
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        let in_c = c.iter().filter(|x| *x == g).count();
        let in_r = r.iter().filter(|x| *x == g).count();
        overlap += in_c.min(in_r);
    }
    prf(overlap as f64, c.len() as f64, r.len() as f64)
}

/// ROUGE-N over distinct n-grams.
pub fn oracle_rouge_n_set(candidate: &str, reference: &str, n: usize) -> (f64, f64, f64) {
    let mut c = grams(&oracle_tokens(candidate), n);
    let mut r = grams(&oracle_tokens(reference), n);
    c.sort();
    c.dedup();
    r.sort();
    r.dedup();
    let overlap = c.iter().filter(|g| r.contains(g)).count();
    prf(overlap as f64, c.len() as f64, r.len() as f64)
}

/// LCS length by memoized recursion on suffixes.
pub fn oracle_lcs(a: &[String], b: &[String]) -> usize {
    fn go(a: &[String], b: &[String], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(v) = memo.get(&(i, j)) {
            return *v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

pub fn oracle_rouge_l(candidate: &str, reference: &str) -> (f64, f64, f64) {
    let c = oracle_tokens(candidate);
    let r = oracle_tokens(reference);
    prf(oracle_lcs(&c, &r) as f64, c.len() as f64, r.len() as f64)
}

/// Committed candidate/reference pairs for the ROUGE checks.
pub const ROUGE_PAIRS: &[(&str, &str)] = &[
    ("", ""),
    ("", "the cat sat"),
    ("the cat sat", ""),
    ("the cat sat", "the cat sat"),
    ("the cat sat", "the cat sat on the mat"),
    ("a c e", "a b c d e"),
    ("alpha beta gamma", "delta epsilon zeta"),
    ("the the the the", "the cat the"),
    ("the cat the", "the the the the"),
    ("police killed the gunman", "the gunman killed police"),
    ("police kill the gunman", "police killed the gunman"),
    ("Green bonds, issued in 2021!", "green BONDS issued in 2021"),
    ("--- ... !!!", "nothing to see"),
    ("a a b b a a b b", "a b a b a b"),
    ("one", "one"),
    ("one", "two"),
    ("x y x y x y x", "y x y x"),
    (
        "Helios Grid Partners priced a $750 million green bond to refinance wind assets.",
        "Helios Grid Partners priced a green bond worth $750 million on 03/15/2021; proceeds refinance wind and solar assets.",
    ),
    (
        "Northstar Capital arranged a sustainability-linked loan for Arden Oil.",
        "Arden Oil signed a sustainability-linked loan arranged by Northstar Capital and two other banks.",
    ),
    ("café naïve résumé", "Café naïve resume"),
    ("b a b a b a", "a b a b a b"),
    ("the quick brown fox jumps over the lazy dog", "the lazy dog jumps over the quick brown fox"),
    ("repeated repeated repeated", "repeated"),
    ("line one\nline two\ttabbed", "line one line two tabbed"),
];
