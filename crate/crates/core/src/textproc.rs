//! Sentence segmentation, whitespace/Unicode normalization and word counts.
//!
//! Segmentation is rule based and deterministic. A boundary is placed after
//! a run of `.`, `?` or `!` (optionally followed by closing quotes or
//! brackets) when the run is followed by whitespace and the next visible
//! character is uppercase, a digit, or an opening quote. A `.`-terminated
//! word found on the abbreviation stop-list never ends a sentence.

use std::collections::HashSet;
use std::io;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Abbreviations that do not end a sentence.
pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "Mr.", "Mrs.", "Ms.", "Dr.", "Prof.", "Sr.", "Jr.", "St.", "Mt.", "Ft.", "Gen.", "Gov.", "Sen.",
    "Rep.", "Rev.", "Capt.", "Col.", "Lt.", "Sgt.", "Inc.", "Ltd.", "Co.", "Corp.", "No.", "vs.",
    "etc.", "e.g.", "i.e.", "approx.", "U.S.", "U.K.", "Jan.", "Feb.", "Mar.", "Apr.", "Aug.",
    "Sept.", "Sep.", "Oct.", "Nov.", "Dec.",
];

const TERMINATORS: &[char] = &['.', '?', '!'];
const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}', '\u{bb}'];
const OPENING_QUOTES: &[char] = &['"', '\'', '\u{201c}', '\u{2018}', '\u{ab}', '('];

/// One sentence of a passage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub passage_id: String,
    /// Ordinal within the passage, contiguous from 0.
    pub index: usize,
    pub text: String,
    /// Byte offsets into the passage text; slicing yields `text`.
    pub range: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct Segmenter {
    abbreviations: HashSet<String>,
}

impl Default for Segmenter {
    fn default() -> Self {
        Self::new(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

impl Segmenter {
    pub fn new<I, S>(abbreviations: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            abbreviations: abbreviations.into_iter().map(Into::into).collect(),
        }
    }

    /// Loads a stop-list file: one abbreviation per line, blank lines and
    /// `#` comments ignored.
    pub fn from_stop_list(path: impl AsRef<Path>) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_owned),
        ))
    }

    pub fn is_abbreviation(&self, word: &str) -> bool {
        self.abbreviations.contains(word)
    }

    /// Byte ranges of the sentences of `text`, trimmed, ordered, non-overlapping.
    pub fn spans(&self, text: &str) -> Vec<Range<usize>> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut out = Vec::new();
        let mut start: Option<usize> = None;
        let mut i = 0;
        while i < chars.len() {
            let (pos, c) = chars[i];
            if start.is_none() {
                if c.is_whitespace() {
                    i += 1;
                    continue;
                }
                start = Some(pos);
            }
            if !TERMINATORS.contains(&c) {
                i += 1;
                continue;
            }
            let run_start = i;
            let mut j = i;
            while j < chars.len() && TERMINATORS.contains(&chars[j].1) {
                j += 1;
            }
            let terminators_end = j;
            while j < chars.len() && CLOSERS.contains(&chars[j].1) {
                j += 1;
            }
            let end = chars.get(j).map_or(text.len(), |&(p, _)| p);
            let mut k = j;
            while k < chars.len() && chars[k].1.is_whitespace() {
                k += 1;
            }
            let followed_by_space = k > j;
            let next_opens = chars.get(k).is_some_and(|&(_, n)| {
                n.is_uppercase() || n.is_ascii_digit() || OPENING_QUOTES.contains(&n)
            });
            let at_end = k == chars.len();
            let is_boundary = (at_end || (followed_by_space && next_opens))
                && !(terminators_end - run_start == 1
                    && c == '.'
                    && self.ends_with_abbreviation(text, start.unwrap(), chars[run_start].0 + 1));
            if is_boundary {
                out.push(start.take().unwrap()..end);
                i = k;
            } else {
                i = j.max(i + 1);
            }
        }
        if let Some(s) = start {
            let end = s + text[s..].trim_end().len();
            if end > s {
                out.push(s..end);
            }
        }
        out
    }

    fn ends_with_abbreviation(&self, text: &str, sentence_start: usize, word_end: usize) -> bool {
        let head = &text[sentence_start..word_end];
        let word_start = head
            .rfind(char::is_whitespace)
            .map_or(0, |p| p + head[p..].chars().next().unwrap().len_utf8());
        let word = head[word_start..].trim_start_matches(OPENING_QUOTES);
        self.is_abbreviation(word)
    }

    pub fn split(&self, passage_id: &str, text: &str) -> Vec<SentenceSpan> {
        self.spans(text)
            .into_iter()
            .enumerate()
            .map(|(index, range)| SentenceSpan {
                passage_id: passage_id.to_owned(),
                index,
                text: text[range.clone()].to_owned(),
                range,
            })
            .collect()
    }

    /// Sentence strings of `text`.
    pub fn sentences<'a>(&self, text: &'a str) -> Vec<&'a str> {
        self.spans(text).into_iter().map(|r| &text[r]).collect()
    }
}

/// Splits `text` with the default abbreviation list. Spans carry an empty passage id.
pub fn split_sentences(text: &str) -> Vec<SentenceSpan> {
    Segmenter::default().split("", text)
}

/// Canonical composition, whitespace runs collapsed to one space, trimmed.
pub fn normalize(text: &str) -> String {
    let composed: String = text.nfc().collect();
    let mut out = String::with_capacity(composed.len());
    for word in composed.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Number of maximal non-whitespace runs.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
