//! Character-based token estimation and chunking.
//!
//! All budgets in the pipeline are expressed in estimated tokens, where one
//! token is four characters (Unicode scalar values, not bytes). No
//! model-specific tokenizer is involved, so budgets are reproducible across
//! backends.
//!
//! Two splitters are provided:
//!
//! - [`split_by_token_budget`] cuts a document into contiguous,
//!   non-overlapping chunks that each fit a token budget. Concatenating the
//!   chunk texts reproduces the input exactly.
//! - [`split_by_char_window`] produces fixed-size character windows with a
//!   constant overlap, used for criteria passages.

use serde::{Deserialize, Serialize};

/// Characters per estimated token.
pub const CHARS_PER_TOKEN: usize = 4;

/// How far back (in characters) the whitespace policy may move a cut.
pub const WHITESPACE_LOOKBACK_CHARS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEstimate {
    pub chars: usize,
    pub tokens: usize,
}

/// Estimates the token count of `text` as `ceil(chars / 4)`.
pub fn estimate_tokens(text: &str) -> TokenEstimate {
    let chars = text.chars().count();
    TokenEstimate {
        chars,
        tokens: chars.div_ceil(CHARS_PER_TOKEN),
    }
}

/// Largest character count whose estimate fits in `tokens`.
pub fn chars_for_tokens(tokens: usize) -> usize {
    tokens.saturating_mul(CHARS_PER_TOKEN)
}

/// Returns the longest prefix of `text` whose estimate is at most `tokens`.
pub fn truncate_to_tokens(text: &str, tokens: usize) -> &str {
    let limit = chars_for_tokens(tokens);
    match text.char_indices().nth(limit) {
        Some((byte, _)) => &text[..byte],
        None => text,
    }
}

/// A contiguous slice of a source document. Offsets are in characters;
/// `end_char` is exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    pub text: String,
    pub start_char: usize,
    pub end_char: usize,
}

impl Chunk {
    pub fn len_chars(&self) -> usize {
        self.end_char - self.start_char
    }
}

/// Where [`split_by_token_budget`] is allowed to cut.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    /// Cut exactly at the budget limit, even mid-word.
    ExactChar,
    /// Move the cut back to just after the closest whitespace within the
    /// last [`WHITESPACE_LOOKBACK_CHARS`] characters of the window, if any.
    #[default]
    NearestWhitespace,
}

impl std::str::FromStr for BoundaryPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact_char" | "exact-char" => Ok(Self::ExactChar),
            "nearest_whitespace" | "nearest-whitespace" => Ok(Self::NearestWhitespace),
            other => Err(format!("unknown boundary policy `{other}`")),
        }
    }
}

/// Byte offsets of every char boundary in `text`, including `text.len()`.
fn char_boundaries(text: &str) -> Vec<usize> {
    let mut bounds: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
    bounds.push(text.len());
    bounds
}

/// Splits `text` into chunks of at most `budget_tokens` estimated tokens.
///
/// Chunks are contiguous and lossless under both policies. An empty input
/// yields an empty list.
///
/// # Panics
///
/// Panics if `budget_tokens` is zero.
pub fn split_by_token_budget(text: &str, budget_tokens: usize, policy: BoundaryPolicy) -> Vec<Chunk> {
    assert!(budget_tokens >= 1, "token budget must be at least 1");
    let bounds = char_boundaries(text);
    let total = bounds.len() - 1;
    let window = chars_for_tokens(budget_tokens);

    let mut chunks = Vec::new();
    let mut start = 0;
    while start < total {
        let mut end = (start + window).min(total);
        if end < total && policy == BoundaryPolicy::NearestWhitespace {
            let floor = end.saturating_sub(WHITESPACE_LOOKBACK_CHARS).max(start);
            // Keep the whitespace char at the tail of the preceding chunk.
            if let Some(ws) = (floor..end)
                .rev()
                .find(|&i| text[bounds[i]..bounds[i + 1]].starts_with(char::is_whitespace))
            {
                end = ws + 1;
            }
        }
        chunks.push(Chunk {
            index: chunks.len(),
            text: text[bounds[start]..bounds[end]].to_owned(),
            start_char: start,
            end_char: end,
        });
        start = end;
    }
    chunks
}

/// Splits `text` into windows of `window_chars` characters where chunk `i`
/// starts at `i * (window_chars - overlap_chars)`.
///
/// Adjacent chunks share exactly `overlap_chars` characters and the last
/// chunk ends at the end of the text.
///
/// # Panics
///
/// Panics unless `overlap_chars < window_chars`.
pub fn split_by_char_window(text: &str, window_chars: usize, overlap_chars: usize) -> Vec<Chunk> {
    assert!(
        overlap_chars < window_chars,
        "overlap ({overlap_chars}) must be smaller than the window ({window_chars})"
    );
    let bounds = char_boundaries(text);
    let total = bounds.len() - 1;
    let step = window_chars - overlap_chars;

    let mut chunks = Vec::new();
    let mut start = 0;
    while start < total {
        let end = (start + window_chars).min(total);
        chunks.push(Chunk {
            index: chunks.len(),
            text: text[bounds[start]..bounds[end]].to_owned(),
            start_char: start,
            end_char: end,
        });
        if end == total {
            break;
        }
        start += step;
    }
    chunks
}
