//! Summarize long financial news articles, retrieve matching passages from a
//! criteria document, and assess each article against those criteria with a
//! six-field structured answer.

pub mod clock;
pub mod corpus_io;
pub mod criteria_store;
pub mod evaluation;
pub mod llm_gateway;
pub mod prompts;
pub mod rag_compare;
pub mod runner;
pub mod summarizer;
pub mod text_units;
