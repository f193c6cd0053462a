//! Pulling final answers out of free-form model text.
//!
//! Answers are compared as normalized strings everywhere in the crate, never
//! as tokens: draft and verdict models use different tokenizers.

use std::sync::LazyLock;

use regex::Regex;

use crate::types::AnswerFormat;

const BOXED: &str = "\\boxed{";
const OPEN_TAG: &str = "<answer>";
const CLOSE_TAG: &str = "</answer>";

static LETTER_TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\(?([A-H])\)?[.:,;)]*$").unwrap());

/// Returns the marked final answer, or `None` when no usable marker exists.
///
/// `Boxed` takes the last `\boxed{...}` (brace-balanced), `Tagged` the last
/// `<answer>...</answer>` block, and `Letter` the first standalone option
/// letter of the last line that has one. Whitespace around the answer is
/// trimmed and an empty answer counts as absent.
pub fn extract_answer(raw_text: &str, format: AnswerFormat) -> Option<String> {
    let found = match format {
        AnswerFormat::Boxed => extract_boxed(raw_text),
        AnswerFormat::Tagged => extract_tagged(raw_text),
        AnswerFormat::Letter => extract_letter(raw_text),
    }?;
    let trimmed = found.trim();
    (!trimmed.is_empty()).then(|| trimmed.to_owned())
}

fn extract_boxed(text: &str) -> Option<&str> {
    let start = text.rfind(BOXED)? + BOXED.len();
    let mut depth = 1usize;
    for (offset, ch) in text[start..].char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + offset]);
                }
            }
            _ => {}
        }
    }
    // unbalanced: output was truncated mid-answer
    None
}

fn extract_tagged(text: &str) -> Option<&str> {
    let start = text.rfind(OPEN_TAG)? + OPEN_TAG.len();
    let end = text[start..].find(CLOSE_TAG)?;
    Some(&text[start..start + end])
}

fn extract_letter(text: &str) -> Option<&str> {
    text.lines().rev().find_map(|line| {
        line.split_whitespace()
            .find_map(|token| LETTER_TOKEN.captures(token).and_then(|c| c.get(1)).map(|m| m.as_str()))
    })
}

fn is_quote(c: char) -> bool {
    matches!(c, '"' | '\'' | '`' | '\u{201c}' | '\u{201d}' | '\u{2018}' | '\u{2019}')
}

fn strip_surrounding_quotes(mut s: &str) -> &str {
    loop {
        s = s.trim();
        let mut chars = s.chars();
        match (chars.next(), chars.next_back()) {
            (Some(first), Some(last)) if is_quote(first) && is_quote(last) => {
                s = &s[first.len_utf8()..s.len() - last.len_utf8()];
            }
            _ => return s,
        }
    }
}

/// Case-fold, trim, strip surrounding quotes and collapse internal
/// whitespace. Units and percent signs are left alone.
pub fn normalize_answer(raw: &str) -> String {
    let inner = strip_surrounding_quotes(raw);
    inner.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}
