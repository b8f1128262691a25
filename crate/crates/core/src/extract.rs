//! Rule-based extraction of an option letter from free-form model output.
//!
//! Rules run in fixed priority order and the first rule that yields a letter
//! wins:
//!
//! 1. explicit markers (`answer is X`, `Answer: X`, `(X)`), last occurrence in
//!    the text wins;
//! 2. a line holding nothing but a letter, optionally followed by `.` or `)`;
//! 3. a unique, case-insensitive, word-bounded occurrence of one option's full
//!    text (this is also how numeric answers such as `12` map to a letter).
//!
//! Only letters present in the option map ever match.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::question::{OptionLetter, Options};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionRule {
    ExplicitMarker,
    BareLetterLine,
    OptionText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerStatus {
    Letter(OptionLetter),
    Invalid,
}

impl AnswerStatus {
    pub fn letter(self) -> Option<OptionLetter> {
        match self {
            AnswerStatus::Letter(l) => Some(l),
            AnswerStatus::Invalid => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedAnswer {
    pub status: AnswerStatus,
    pub raw: String,
    /// `None` exactly when `status` is `Invalid`.
    pub rule_fired: Option<ExtractionRule>,
}

impl ExtractedAnswer {
    pub fn invalid(raw: impl Into<String>) -> Self {
        Self { status: AnswerStatus::Invalid, raw: raw.into(), rule_fired: None }
    }
}

/// Applies the extraction rules to `raw`. Total and deterministic.
pub fn extract_answer(raw: &str, options: &Options) -> ExtractedAnswer {
    let found = explicit_marker(raw, options)
        .map(|l| (l, ExtractionRule::ExplicitMarker))
        .or_else(|| bare_letter_line(raw, options).map(|l| (l, ExtractionRule::BareLetterLine)))
        .or_else(|| option_text(raw, options).map(|l| (l, ExtractionRule::OptionText)));
    match found {
        Some((letter, rule)) => {
            ExtractedAnswer { status: AnswerStatus::Letter(letter), raw: raw.into(), rule_fired: Some(rule) }
        }
        None => ExtractedAnswer::invalid(raw),
    }
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn valid_letter(b: u8, options: &Options) -> Option<OptionLetter> {
    if !b.is_ascii_alphabetic() {
        return None;
    }
    OptionLetter::new(b as char).filter(|l| options.contains_key(l))
}

fn skip_spaces(s: &[u8], mut i: usize) -> usize {
    while i < s.len() && (s[i] == b' ' || s[i] == b'\t') {
        i += 1;
    }
    i
}

fn explicit_marker(raw: &str, options: &Options) -> Option<OptionLetter> {
    let bytes = raw.as_bytes();
    let lower: Vec<u8> = bytes.iter().map(u8::to_ascii_lowercase).collect();
    let mut best: Option<(usize, OptionLetter)> = None;
    let mut keep = |pos: usize, letter: OptionLetter| {
        if best.is_none_or(|(p, _)| pos >= p) {
            best = Some((pos, letter));
        }
    };

    // "(X)"
    for i in 0..bytes.len().saturating_sub(2) {
        if bytes[i] == b'(' && bytes[i + 2] == b')' {
            if let Some(l) = valid_letter(bytes[i + 1], options) {
                keep(i, l);
            }
        }
    }

    // "answer is X" / "answer: X"
    const KEY: &[u8] = b"answer";
    let mut start = 0;
    while let Some(off) = find(&lower[start..], KEY) {
        let at = start + off;
        start = at + 1;
        if at > 0 && is_word_byte(lower[at - 1]) {
            continue;
        }
        let mut i = skip_spaces(&lower, at + KEY.len());
        if lower.get(i) == Some(&b':') {
            i += 1;
        } else if lower[i..].starts_with(b"is") && !lower.get(i + 2).is_some_and(|&b| is_word_byte(b)) {
            i = skip_spaces(&lower, i + 2);
            if lower.get(i) == Some(&b':') {
                i += 1;
            }
        } else {
            continue;
        }
        i = skip_spaces(&lower, i);
        while lower.get(i) == Some(&b'*') {
            i += 1;
        }
        if lower.get(i) == Some(&b'(') {
            i += 1;
        }
        let Some(&b) = bytes.get(i) else { continue };
        let Some(letter) = valid_letter(b, options) else { continue };
        let after = i + 1;
        if bytes.get(after).is_some_and(|&n| is_word_byte(n)) {
            continue;
        }
        // A lower-case letter followed by more words on the line is an
        // article or pronoun ("the answer is a bit unclear"), not a choice.
        if b.is_ascii_lowercase() {
            let j = skip_spaces(bytes, after);
            if bytes.get(j).is_some_and(|n| n.is_ascii_alphabetic()) {
                continue;
            }
        }
        keep(at, letter);
    }
    best.map(|(_, l)| l)
}

fn bare_letter_line(raw: &str, options: &Options) -> Option<OptionLetter> {
    raw.lines().rev().find_map(|line| {
        let t = line.trim().as_bytes();
        match t {
            [b] | [b, b'.'] | [b, b')'] => valid_letter(*b, options),
            _ => None,
        }
    })
}

fn option_text(raw: &str, options: &Options) -> Option<OptionLetter> {
    let hay = raw.to_lowercase();
    let mut hit = None;
    for (letter, text) in options {
        let needle = text.trim().to_lowercase();
        if needle.is_empty() || !contains_bounded(&hay, &needle) {
            continue;
        }
        if hit.is_some() {
            return None;
        }
        hit = Some(*letter);
    }
    hit
}

fn contains_bounded(hay: &str, needle: &str) -> bool {
    let mut from = 0;
    while let Some(off) = hay[from..].find(needle) {
        let at = from + off;
        let end = at + needle.len();
        let before_ok = hay[..at].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = hay[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        from = at + hay[at..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::question::tests::opts;

    fn letter(c: char) -> AnswerStatus {
        AnswerStatus::Letter(OptionLetter::new(c).unwrap())
    }

    fn abcd() -> Options {
        opts(&["13", "10", "12", "9"])
    }

    #[test]
    fn explicit_marker_rule() {
        let e = extract_answer("The answer is D.", &abcd());
        assert_eq!(e.status, letter('D'));
        assert_eq!(e.rule_fired, Some(ExtractionRule::ExplicitMarker));
    }

    #[test]
    fn bare_letter_rule() {
        let e = extract_answer("B", &abcd());
        assert_eq!(e.status, letter('B'));
        assert_eq!(e.rule_fired, Some(ExtractionRule::BareLetterLine));
    }

    #[test]
    fn two_letters_without_marker_is_invalid() {
        let e = extract_answer("Both A and C seem plausible; I cannot decide.", &abcd());
        assert_eq!(e.status, AnswerStatus::Invalid);
        assert_eq!(e.rule_fired, None);
    }

    #[test]
    fn last_marker_wins() {
        let e = extract_answer("At first the answer is A. After checking, Answer: C", &abcd());
        assert_eq!(e.status, letter('C'));
    }

    #[test]
    fn letter_outside_options_never_matches() {
        let e = extract_answer("The answer is E.", &abcd());
        assert_eq!(e.status, AnswerStatus::Invalid);
    }

    #[test]
    fn numeric_option_text() {
        let e = extract_answer("I count 12 aircraft.", &abcd());
        assert_eq!(e.status, letter('C'));
        assert_eq!(e.rule_fired, Some(ExtractionRule::OptionText));
        assert_eq!(extract_answer("112 objects", &abcd()).status, AnswerStatus::Invalid);
    }

    #[test]
    fn article_is_not_a_letter() {
        let e = extract_answer("the answer is a bit unclear", &abcd());
        assert_eq!(e.status, AnswerStatus::Invalid);
    }

    #[test]
    fn non_ascii_input_does_not_panic() {
        let e = extract_answer("Band ① → réponse (b) — 答案", &abcd());
        assert_eq!(e.status, letter('B'));
    }
}
