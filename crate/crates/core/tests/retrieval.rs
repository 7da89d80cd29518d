//! Criteria indexing and retrieval over the mock embedding backend.

use asc2end_core::corpus_io::{load_criteria, CriteriaDocument};
use asc2end_core::criteria_store::{CriteriaIndex, IndexError};
use asc2end_core::llm_gateway::{CompletionProfile, LlmGateway};
use asc2end_core::rag_compare::{format_passages, retrieval_query, run_rag, ComparisonContext, QueryMode};

use asc2end_testkit::toy_dir;

fn criteria(text: String) -> CriteriaDocument {
    CriteriaDocument {
        source_path: "mem".into(),
        text,
    }
}

fn passages_for(chars: usize) -> usize {
    // Windows start every 480 characters until one reaches the end.
    let mut starts = 0;
    let mut start = 0;
    loop {
        starts += 1;
        if start + 500 >= chars {
            return starts;
        }
        start += 480;
    }
}

#[test]
fn passage_counts_follow_the_window_rule() {
    let gateway = LlmGateway::mock(32);
    for chars in [1, 500, 501, 980, 981, 20_000] {
        let text: String = (0..chars).map(|i| if i % 7 == 6 { ' ' } else { 'x' }).collect();
        let index = CriteriaIndex::build(&criteria(text), &gateway).unwrap();
        assert_eq!(index.len(), passages_for(chars), "{chars} chars");
    }
    assert_eq!(passages_for(980), 2);
    assert_eq!(passages_for(20_000), 42);
}

#[test]
fn toy_criteria_index_round_trips() {
    let gateway = LlmGateway::mock(256);
    let doc = load_criteria(toy_dir().join("criteria.md")).unwrap();
    let index = CriteriaIndex::build(&doc, &gateway).unwrap();
    assert!(index.len() > 3);
    assert_eq!(index.dim, 256);

    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("index.json");
    index.save(&path).unwrap();
    assert_eq!(CriteriaIndex::load(&path).unwrap(), index);
}

#[test]
fn passage_text_is_its_own_best_match() {
    let gateway = LlmGateway::mock(256);
    let doc = load_criteria(toy_dir().join("criteria.md")).unwrap();
    let index = CriteriaIndex::build(&doc, &gateway).unwrap();
    for p in index.passages().iter().step_by(5) {
        let hit = index.top_k(&gateway, "q", &p.text, 1).unwrap();
        assert_eq!(hit.hits[0].passage_id, p.passage_id);
    }
}

#[test]
fn retrieval_errors() {
    let gateway = LlmGateway::mock(16);
    assert!(matches!(
        CriteriaIndex::build(&criteria("  \n ".into()), &gateway),
        Err(IndexError::EmptyCriteria)
    ));
    let index = CriteriaIndex::build(&criteria("some criteria text".into()), &gateway).unwrap();
    assert!(matches!(
        index.top_k(&gateway, "q", " ", 3),
        Err(IndexError::EmptyQuery)
    ));
    assert!(matches!(index.top_k(&gateway, "q", "text", 0), Err(IndexError::ZeroK)));
    assert!(matches!(
        index.top_k_by_vector(&[1.0; 3], 1),
        Err(IndexError::QueryDimension { expected: 16, found: 3 })
    ));
}

#[test]
fn rag_appends_ranked_passages() {
    let gateway = LlmGateway::mock(256);
    let doc = load_criteria(toy_dir().join("criteria.md")).unwrap();
    let index = CriteriaIndex::build(&doc, &gateway).unwrap();
    let ctx = ComparisonContext::new("Northstar Capital", "sustainable finance").unwrap();
    let summary = "Helios priced a green bond to refinance wind farms.";
    let out = run_rag(
        "d1",
        summary,
        &index,
        &ctx,
        &CompletionProfile::human_level(),
        3,
        QueryMode::default(),
        &gateway,
    )
    .unwrap();
    assert_eq!(out.retrieved.hits.len(), 3);

    let listed = format_passages(&index, &out.retrieved);
    let lines: Vec<&str> = listed.lines().filter(|l| l.starts_with("Criteria passage ")).collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("Criteria passage 1: "));
    assert!(!out.augmented_text.is_empty());
    assert_eq!(gateway.ledger().len(), 1);

    assert_eq!(
        retrieval_query(summary, "sustainable finance", QueryMode::SummaryPlusTopic),
        format!("{summary}\nsustainable finance")
    );
}
