//! Deterministic tokenizers used for counting, truncation, and simulation.
//!
//! Two interchangeable segmentations sit behind `TokenizerHandle`:
//!
//! * the default splitter: maximal runs of alphanumeric characters are one
//!   token each, every other non-whitespace character is its own token, and
//!   whitespace only separates;
//! * a vocabulary tokenizer loaded from a file (one token per line) that
//!   greedily takes the longest matching vocabulary entry at each position
//!   and falls back to a single character when nothing matches.
//!
//! Detokenization is the inverse presentation: space-joined for the splitter,
//! plain concatenation for the vocabulary form. Both satisfy round-trip count
//! stability: re-tokenizing a detokenized sequence yields the same tokens.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Kind {
    Whitespace,
    Vocab(Vocab),
}

#[derive(Debug, Clone)]
struct Vocab {
    entries: HashSet<String>,
    max_chars: usize,
}

#[derive(Debug, Clone)]
pub struct TokenizerHandle {
    name: String,
    kind: Kind,
}

impl TokenizerHandle {
    /// The default whitespace-plus-punctuation splitter.
    pub fn whitespace() -> Self {
        TokenizerHandle { name: "whitespace".to_string(), kind: Kind::Whitespace }
    }

    /// Loads a vocabulary file: UTF-8, one token per line, blank lines skipped.
    pub fn from_vocab_file(name: &str, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read tokenizer vocabulary {}: {e}", path.display())))?;
        let mut entries = HashSet::new();
        let mut max_chars = 0;
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            max_chars = max_chars.max(line.chars().count());
            entries.insert(line.to_string());
        }
        if entries.is_empty() {
            return Err(Error::Config(format!(
                "tokenizer vocabulary {} contains no tokens",
                path.display()
            )));
        }
        Ok(TokenizerHandle { name: name.to_string(), kind: Kind::Vocab(Vocab { entries, max_chars }) })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tokenize<'a>(&self, text: &'a str) -> Vec<&'a str> {
        match &self.kind {
            Kind::Whitespace => split_whitespace_punct(text),
            Kind::Vocab(v) => split_vocab(text, v),
        }
    }

    pub fn count_tokens(&self, text: &str) -> u64 {
        self.tokenize(text).len() as u64
    }

    pub fn detokenize(&self, tokens: &[&str]) -> String {
        match &self.kind {
            Kind::Whitespace => tokens.join(" "),
            Kind::Vocab(_) => tokens.concat(),
        }
    }
}

/// Alphanumeric runs are single tokens; other non-whitespace characters are
/// single-character tokens; whitespace separates and is dropped.
fn split_whitespace_punct(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if word_start.is_none() {
                word_start = Some(i);
            }
        } else {
            if let Some(start) = word_start.take() {
                out.push(&text[start..i]);
            }
            if !c.is_whitespace() {
                out.push(&text[i..i + c.len_utf8()]);
            }
        }
    }
    if let Some(start) = word_start {
        out.push(&text[start..]);
    }
    out
}

/// Greedy longest-match against the vocabulary, single-char fallback.
fn split_vocab<'a>(text: &'a str, vocab: &Vocab) -> Vec<&'a str> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < text.len() {
        let rest = &text[pos..];
        // candidate end offsets at char boundaries, longest first
        let mut ends: Vec<usize> = rest
            .char_indices()
            .take(vocab.max_chars)
            .map(|(i, c)| i + c.len_utf8())
            .collect();
        ends.reverse();
        let mut matched = None;
        for end in ends {
            if vocab.entries.contains(&rest[..end]) {
                matched = Some(end);
                break;
            }
        }
        let end = matched.unwrap_or_else(|| rest.chars().next().map(char::len_utf8).unwrap_or(1));
        out.push(&rest[..end]);
        pos += end;
    }
    out
}
