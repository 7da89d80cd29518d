//! Randomized invariants for splitting, ROUGE, retrieval and summarization.

use proptest::prelude::*;

use asc2end_core::corpus_io::Document;
use asc2end_core::criteria_store::{CriteriaIndex, CriteriaPassage};
use asc2end_core::evaluation::{lcs_len, rouge_l, rouge_n, rouge_n_with, tokenize_for_rouge, OverlapMode};
use asc2end_core::llm_gateway::{CompletionProfile, EmbeddingVector, LlmGateway};
use asc2end_core::summarizer::{summarize_document, SummaryConfig};
use asc2end_core::text_units::{
    estimate_tokens, split_by_char_window, split_by_token_budget, truncate_to_tokens, BoundaryPolicy,
};

use asc2end_testkit::*;

fn policy() -> impl Strategy<Value = BoundaryPolicy> {
    prop_oneof![Just(BoundaryPolicy::ExactChar), Just(BoundaryPolicy::NearestWhitespace)]
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop::sample::select(vec!["the", "cat", "sat", "on", "mat", "a", "bond", "Green,", "bond."]),
        0..25,
    )
    .prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn token_estimate_is_ceil_quarter(s in "\\PC{0,400}") {
        let chars = s.chars().count();
        prop_assert_eq!(estimate_tokens(&s).tokens, chars.div_ceil(4));
    }

    #[test]
    fn truncation_is_a_prefix_within_budget(s in "\\PC{0,400}", tokens in 0usize..120) {
        let t = truncate_to_tokens(&s, tokens);
        prop_assert!(s.starts_with(t));
        prop_assert!(estimate_tokens(t).tokens <= tokens);
    }

    #[test]
    fn budget_split_is_lossless_and_bounded(s in "[a-z \\n]{0,3000}|\\PC{0,800}", budget in 1usize..400, p in policy()) {
        let chunks = split_by_token_budget(&s, budget, p);
        let joined: String = chunks.iter().map(|c| c.text.as_str()).collect();
        prop_assert_eq!(joined, s.clone());
        let mut next_start = 0;
        for (i, c) in chunks.iter().enumerate() {
            prop_assert_eq!(c.index, i);
            prop_assert_eq!(c.start_char, next_start);
            prop_assert!(estimate_tokens(&c.text).tokens <= budget);
            next_start = c.end_char;
        }
        prop_assert_eq!(next_start, s.chars().count());
    }

    #[test]
    fn exact_policy_chunk_count_is_ceil(s in "[a-z ]{1,3000}", budget in 20usize..200) {
        let exact = split_by_token_budget(&s, budget, BoundaryPolicy::ExactChar).len();
        prop_assert_eq!(exact, s.chars().count().div_ceil(budget * 4));
    }

    #[test]
    fn window_split_overlaps_exactly(s in "\\PC{0,2500}", window in 2usize..300, overlap_frac in 0.0f64..0.9) {
        let overlap = ((window as f64) * overlap_frac) as usize;
        let chunks = split_by_char_window(&s, window, overlap);
        let total = s.chars().count();
        if total == 0 {
            prop_assert!(chunks.is_empty());
        } else {
            prop_assert_eq!(chunks[0].start_char, 0);
            prop_assert_eq!(chunks.last().unwrap().end_char, total);
        }
        for pair in chunks.windows(2) {
            prop_assert_eq!(pair[0].len_chars(), window);
            prop_assert_eq!(pair[0].end_char - pair[1].start_char, overlap);
        }
    }

    #[test]
    fn rouge_matches_oracles(c in sentence(), r in sentence()) {
        for n in [1, 2] {
            let got = rouge_n(&c, &r, n);
            let want = oracle_rouge_n(&c, &r, n);
            prop_assert!((got.precision - want.0).abs() < 1e-9 && (got.recall - want.1).abs() < 1e-9 && (got.f1 - want.2).abs() < 1e-9);
            let got = rouge_n_with(&c, &r, n, OverlapMode::Set);
            let want = oracle_rouge_n_set(&c, &r, n);
            prop_assert!((got.precision - want.0).abs() < 1e-9 && (got.recall - want.1).abs() < 1e-9 && (got.f1 - want.2).abs() < 1e-9);
        }
        let got = rouge_l(&c, &r);
        let want = oracle_rouge_l(&c, &r);
        prop_assert!((got.f1 - want.2).abs() < 1e-9);
    }

    #[test]
    fn rouge_tokenizer_matches_oracle(s in "\\PC{0,200}") {
        prop_assert_eq!(tokenize_for_rouge(&s), oracle_tokens(&s));
    }

    #[test]
    fn lcs_is_symmetric_and_bounded(c in sentence(), r in sentence()) {
        let (a, b) = (oracle_tokens(&c), oracle_tokens(&r));
        let l = lcs_len(&a, &b);
        prop_assert_eq!(l, lcs_len(&b, &a));
        prop_assert!(l <= a.len().min(b.len()));
        prop_assert_eq!(l, oracle_lcs(&a, &b));
    }

    #[test]
    fn rouge_scores_stay_in_unit_range(c in sentence(), r in sentence()) {
        for s in [rouge_n(&c, &r, 1), rouge_n(&c, &r, 2), rouge_l(&c, &r)] {
            for v in [s.precision, s.recall, s.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn top_k_is_sorted_prefix(
        vectors in prop::collection::vec(prop::collection::vec(-3i8..=3, 4), 1..40),
        query in prop::collection::vec(-3i8..=3, 4),
        k in 1usize..50,
    ) {
        let passages = vectors.iter().enumerate().map(|(i, v)| CriteriaPassage {
            passage_id: i,
            text: format!("p{i}"),
            start_char: 0,
            end_char: 0,
            embedding: EmbeddingVector { values: v.iter().map(|x| f64::from(*x)).collect() },
        }).collect();
        let index = CriteriaIndex::from_passages(passages).unwrap();
        let q: Vec<f64> = query.iter().map(|x| f64::from(*x)).collect();
        let all = index.top_k_by_vector(&q, vectors.len()).unwrap();
        let top = index.top_k_by_vector(&q, k).unwrap();
        prop_assert_eq!(top.len(), k.min(vectors.len()));
        prop_assert_eq!(&all[..top.len()], &top[..]);
        for w in all.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].passage_id < w[1].passage_id));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn summaries_respect_threshold(words in 1usize..12_000, threshold in 250usize..1500, p in policy()) {
        let body: String = (0..words).map(|i| format!("w{} ", i % 13)).collect();
        let cfg = SummaryConfig { threshold_tokens: threshold, boundary_policy: p, ..SummaryConfig::default() };
        let doc = Document { doc_id: "d".into(), title: String::new(), body };
        let gateway = LlmGateway::mock(16);
        let rec = summarize_document(&doc, &cfg, &CompletionProfile::machine_level(), &gateway).unwrap();
        prop_assert!(rec.passes >= 1 && rec.passes <= cfg.max_passes);
        prop_assert_eq!(rec.per_pass_chunk_counts.len(), rec.passes);
        prop_assert!(estimate_tokens(&rec.final_text).tokens <= threshold);
        let calls = gateway.ledger().len();
        prop_assert_eq!(calls, rec.per_pass_chunk_counts.iter().sum::<usize>());
    }
}
