//! Word-level text helpers shared by the filters, distractor strategies and
//! the stub scorer.
//!
//! Everything here works on whitespace tokens. A token's "core" is the token
//! with leading and trailing non-alphanumeric characters removed, so
//! `"cigarette."` and `"(cigarette"` both have the core `cigarette`.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Strip leading and trailing characters that are not alphanumeric.
pub fn token_core(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_alphanumeric())
}

/// Lowercased core of a token.
pub fn normalize_token(token: &str) -> String {
    token_core(token).to_lowercase()
}

/// Read a one-entry-per-line list, skipping blank lines and `#` comments.
pub fn parse_line_list(content: &str) -> impl Iterator<Item = &str> {
    content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    pub fn parse(content: &str) -> Self {
        StopWords(parse_line_list(content).map(str::to_lowercase).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::parse(&read_to_string(path)?))
    }

    pub fn empty() -> Self {
        StopWords(HashSet::new())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for StopWords {
    fn default() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }
}

/// Content words: punctuation-stripped, lowercased, purely alphabetic tokens
/// of at least two characters that are not stopwords.
pub fn content_words(text: &str, stopwords: &StopWords) -> BTreeSet<String> {
    text.split_whitespace()
        .map(normalize_token)
        .filter(|w| w.chars().count() >= 2 && w.chars().all(char::is_alphabetic))
        .filter(|w| !stopwords.contains(w))
        .collect()
}

pub fn capitalize_first(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut done = false;
    for c in text.chars() {
        if !done && c.is_alphabetic() {
            out.extend(c.to_uppercase());
            done = true;
        } else {
            out.push(c);
        }
    }
    out
}

/// Lowercase the first alphabetic character of `text`.
pub fn lowercase_first(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut done = false;
    for c in text.chars() {
        if !done && c.is_alphabetic() {
            out.extend(c.to_lowercase());
            done = true;
        } else {
            out.push(c);
        }
    }
    out
}

pub fn is_sentence_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Drop trailing sentence punctuation and whitespace, then end with a single period.
pub fn with_terminal_period(text: &str) -> String {
    let body = text
        .trim()
        .trim_end_matches(|c: char| is_sentence_terminator(c) || c.is_whitespace());
    format!("{body}.")
}

/// Derive a sub-seed from a base seed and a label (e.g. a source id).
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
