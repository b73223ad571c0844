//! Character spans, the whitespace/punctuation tokenizer and the stop-word list.
//!
//! All offsets are counted in Unicode scalar values, never bytes.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Half-open character range `[start, end)`. Serialized as `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl Serialize for Span {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.start, self.end].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Span {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [start, end] = <[usize; 2]>::deserialize(d)?;
        Ok(Self { start, end })
    }
}

/// Byte offset of the `char_idx`-th character (or `text.len()` at the end).
pub fn byte_offset(text: &str, char_idx: usize) -> usize {
    text.char_indices()
        .nth(char_idx)
        .map(|(b, _)| b)
        .unwrap_or(text.len())
}

/// Slice `text` by a character span. Out-of-range ends are clamped.
pub fn slice(text: &str, span: Span) -> &str {
    let start = byte_offset(text, span.start);
    let end = byte_offset(text, span.end);
    &text[start..end.max(start)]
}

pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// A token with its character span in the source text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub span: Span,
}

impl Token<'_> {
    pub fn is_word(&self) -> bool {
        self.text.chars().all(char::is_alphanumeric)
    }
}

/// Splits on whitespace; inside each chunk, runs of alphanumerics form one
/// token and every other character is a token of its own.
pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut word_start: Option<(usize, usize)> = None;
    let mut char_idx = 0;
    for (byte_idx, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if word_start.is_none() {
                word_start = Some((byte_idx, char_idx));
            }
        } else {
            if let Some((b, c)) = word_start.take() {
                out.push(Token {
                    text: &text[b..byte_idx],
                    span: Span::new(c, char_idx),
                });
            }
            if !ch.is_whitespace() {
                out.push(Token {
                    text: &text[byte_idx..byte_idx + ch.len_utf8()],
                    span: Span::new(char_idx, char_idx + 1),
                });
            }
        }
        char_idx += 1;
    }
    if let Some((b, c)) = word_start {
        out.push(Token {
            text: &text[b..],
            span: Span::new(c, char_idx),
        });
    }
    out
}

pub fn token_strings(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.text.to_string()).collect()
}

/// Joins tokens with single spaces, gluing closing punctuation to the left
/// and opening brackets to the right.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = true;
    for tok in tokens {
        let tok = tok.as_ref();
        let closing = matches!(tok, "." | "," | ";" | ":" | "!" | "?" | ")" | "]" | "}" | "%");
        if !glue_next && !closing {
            out.push(' ');
        }
        out.push_str(tok);
        glue_next = matches!(tok, "(" | "[" | "{");
    }
    out
}

const STOP_WORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been",
    "before", "being", "but", "by", "can", "could", "did", "do", "does", "during", "each", "for",
    "from", "had", "has", "have", "he", "her", "hers", "him", "his", "how", "i", "if", "in",
    "into", "is", "it", "its", "itself", "more", "most", "no", "not", "of", "on", "one", "only",
    "or", "other", "our", "over", "she", "so", "some", "such", "than", "that", "the", "their",
    "them", "then", "there", "these", "they", "this", "those", "through", "to", "too", "under",
    "until", "up", "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom",
    "why", "will", "with", "would", "you", "your",
];

pub fn is_stop_word(lowercase: &str) -> bool {
    STOP_WORDS.binary_search(&lowercase).is_ok()
}

/// Lowercased alphanumeric token that is not a stop word.
pub fn content_word(tok: &Token<'_>) -> Option<String> {
    if !tok.is_word() {
        return None;
    }
    let lower = tok.text.to_lowercase();
    (!is_stop_word(&lower)).then_some(lower)
}
