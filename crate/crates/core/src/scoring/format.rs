//! Response format grammar.
//!
//! A well-formed response is, modulo surrounding whitespace, exactly one
//! `<think>...</think>` block followed by exactly one `<answer>...</answer>`
//! block, and the answer holds exactly one ```` ```sql ... ``` ```` fence.
//! Lengths are whitespace-delimited token counts.

use std::fmt;

use serde::{Deserialize, Serialize};

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";
const SQL_FENCE: &str = "```sql";
const FENCE: &str = "```";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub think: String,
    pub answer: String,
    /// Contents of the fenced SQL block, trimmed; `None` only for responses
    /// built by hand, never for a successful parse.
    pub sql: Option<String>,
    pub total_len: usize,
    pub answer_len: usize,
    pub sql_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatFailure {
    MissingThink,
    MissingAnswer,
    DuplicateBlock,
    MissingSqlFence,
    /// Non-whitespace text outside the two blocks.
    TrailingGarbage,
}

impl FormatFailure {
    pub fn code(self) -> &'static str {
        match self {
            FormatFailure::MissingThink => "missing-think",
            FormatFailure::MissingAnswer => "missing-answer",
            FormatFailure::DuplicateBlock => "duplicate-block",
            FormatFailure::MissingSqlFence => "missing-sql-fence",
            FormatFailure::TrailingGarbage => "trailing-garbage",
        }
    }
}

impl fmt::Display for FormatFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl std::error::Error for FormatFailure {}

pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Parses a raw response against the think/answer/fenced-SQL grammar.
pub fn parse_response(text: &str) -> Result<ParsedResponse, FormatFailure> {
    let count = |tag: &str| text.matches(tag).count();
    let (think_open, think_close) = (count(THINK_OPEN), count(THINK_CLOSE));
    let (answer_open, answer_close) = (count(ANSWER_OPEN), count(ANSWER_CLOSE));

    if think_open > 1 || think_close > 1 || answer_open > 1 || answer_close > 1 {
        return Err(FormatFailure::DuplicateBlock);
    }
    if think_open == 0 || think_close == 0 {
        return Err(FormatFailure::MissingThink);
    }
    if answer_open == 0 || answer_close == 0 {
        return Err(FormatFailure::MissingAnswer);
    }

    let t_open = text.find(THINK_OPEN).unwrap();
    let t_close = text.find(THINK_CLOSE).unwrap();
    let a_open = text.find(ANSWER_OPEN).unwrap();
    let a_close = text.find(ANSWER_CLOSE).unwrap();
    if t_close < t_open + THINK_OPEN.len() || a_open < t_close + THINK_CLOSE.len() {
        // No think block precedes the answer.
        return Err(FormatFailure::MissingThink);
    }
    if a_close < a_open + ANSWER_OPEN.len() {
        return Err(FormatFailure::MissingAnswer);
    }

    let before = &text[..t_open];
    let between = &text[t_close + THINK_CLOSE.len()..a_open];
    let after = &text[a_close + ANSWER_CLOSE.len()..];
    if [before, between, after].iter().any(|s| !s.trim().is_empty()) {
        return Err(FormatFailure::TrailingGarbage);
    }

    let think = &text[t_open + THINK_OPEN.len()..t_close];
    let answer = &text[a_open + ANSWER_OPEN.len()..a_close];
    let sql = extract_sql(answer)?;

    Ok(ParsedResponse {
        think: think.to_string(),
        answer: answer.to_string(),
        total_len: token_count(text),
        answer_len: token_count(answer),
        sql_len: token_count(sql),
        sql: Some(sql.to_string()),
    })
}

fn extract_sql(answer: &str) -> Result<&str, FormatFailure> {
    match answer.matches(SQL_FENCE).count() {
        0 => return Err(FormatFailure::MissingSqlFence),
        1 => {}
        _ => return Err(FormatFailure::DuplicateBlock),
    }
    let start = answer.find(SQL_FENCE).unwrap() + SQL_FENCE.len();
    let end = answer[start..]
        .find(FENCE)
        .ok_or(FormatFailure::MissingSqlFence)?;
    let sql = answer[start..start + end].trim();
    if sql.is_empty() {
        return Err(FormatFailure::MissingSqlFence);
    }
    Ok(sql)
}
