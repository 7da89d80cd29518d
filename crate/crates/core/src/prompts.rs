//! Prompt templates for the summary, retrieval and comparison calls.
//!
//! Templates use `{name}` placeholders and are rendered in a single pass, so
//! substituted values that happen to contain `{...}` are never re-expanded.

pub const SUMMARY_TEMPLATE: &str = "Query:
Given this text: {split_text}...
generate a TL;DR.

Guidelines for your answer:

1. Include all detailed information relevant from the text.

2. Formulate concise answers, grounded on facts from context. Keep answers logical.

3. Use point form answers.

Answer: TL;DR:";

pub const RAG_TEMPLATE: &str = "Query:

Given this document delimited by \"\": \"{summary}\":
Provide the most relevant information only from the criteria that matches with the given document in terms of {target_topic}?

Answer:";

pub const COMPARISON_TEMPLATE: &str = "Prompt:
You are an AI model assisting a Financial Analyst at {company}. Your task is to analyze the document delimited by \"\": \"{summary}\" and provide a thorough, yet concise analysis in the following format:

1. Article Date: [Please input the date of the article here in MM/DD/YYYY format]

2. Participants of the transaction: [Please provide a brief description of {company}'s role in relation to the article, then list the entities involved in the transaction mentioned in the article]

3. Transaction and Transaction type: [Please indicate whether a transaction has taken place. If yes, state the type of transaction.]

4. Transaction amount in dollars: [If a transaction has occurred, please specify the amount in dollars. If no transaction, please input $0]

5. Comparison: [Based on the following criteria, delimited by \"\": \"{retrieved_text}\". Provide a concise comparison between the document and provided criteria and discuss the relevancy of the document to {target_topic}. Use specific information from the criteria and be very critical in your assessment].

6. Confidence score: [Please provide a score between 0-100 indicating the degree to which the document discusses topics related to {target_topic}. A score of 0 means the document is not at all related to {target_topic}, a score of 50 means there are many uncertainties as to its correlation to {target_topic}, and a score of 100 means the document content is entirely about {target_topic}. If the transaction amount is $0 or there is no transaction, please input a score of 0. Use your comparison to affect your decision, skepticism and implicit assumptions in the answer needed to negatively affect the confidence score.]

Please remember to:

1. Provide factual and concise answers. 2. Critically evaluate the information from the document. 3. Use bullet points for your answers. 4. Do not explain your thought process. 5. Do not include extra text in addition to your analysis outside of the six points of analysis. 6. \"document\" should only refer to the provided article document.

Response:";

/// Fixed fragments used to recognise which template produced a prompt.
pub mod markers {
    pub const SUMMARY_HEAD: &str = "Query:\nGiven this text: ";
    pub const SUMMARY_TAIL: &str = "...\ngenerate a TL;DR.";
    pub const RAG_QUESTION: &str = "Provide the most relevant information only from the criteria";
    pub const RAG_DOC_HEAD: &str = "Given this document delimited by \"\": \"";
    pub const RAG_TOPIC_HEAD: &str = "matches with the given document in terms of ";
    pub const CA_TASK: &str = "Your task is to analyze the document delimited by \"\": \"";
    pub const CA_TASK_TAIL: &str = "\" and provide a thorough, yet concise analysis";
    pub const CA_COMPANY_HEAD: &str = "assisting a Financial Analyst at ";
    pub const CA_CRITERIA_HEAD: &str = "Based on the following criteria, delimited by \"\": \"";
    pub const CA_CRITERIA_TAIL: &str = "\". Provide a concise comparison";
    pub const CA_TOPIC_HEAD: &str = "discuss the relevancy of the document to ";
    pub const PASSAGE_PREFIX: &str = "Criteria passage ";
}

/// Substitutes `{name}` placeholders from `values` in one left-to-right pass.
/// Unknown placeholders are left as written.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let extra: usize = values.iter().map(|(_, v)| v.len()).sum();
    let mut out = String::with_capacity(template.len() + extra);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            values.iter().find(|(k, _)| *k == name).map(|(_, v)| (*v, close))
        });
        match replaced {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Text between the first `head` and the first `tail` after it.
pub(crate) fn between<'a>(text: &'a str, head: &str, tail: &str) -> Option<&'a str> {
    let start = text.find(head)? + head.len();
    let len = text[start..].find(tail)?;
    Some(&text[start..start + len])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_single_pass() {
        let out = render("a {x} b {y}", &[("x", "{y}"), ("y", "Y")]);
        assert_eq!(out, "a {y} b Y");
    }

    #[test]
    fn unknown_placeholders_survive() {
        assert_eq!(render("{nope} {x", &[("x", "1")]), "{nope} {x");
    }

    #[test]
    fn templates_have_only_known_placeholders() {
        let rendered = render(
            COMPARISON_TEMPLATE,
            &[
                ("company", "C"),
                ("summary", "S"),
                ("retrieved_text", "R"),
                ("target_topic", "T"),
            ],
        );
        assert!(!rendered.contains('{'));
        assert!(!render(SUMMARY_TEMPLATE, &[("split_text", "x")]).contains('{'));
        assert!(!render(RAG_TEMPLATE, &[("summary", "s"), ("target_topic", "t")]).contains('{'));
    }
}
