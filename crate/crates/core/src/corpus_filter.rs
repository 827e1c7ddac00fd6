//! Mining explicitly marked causal clause pairs from raw text.
//!
//! The pipeline per sentence is: connective matching, the ordered constraint
//! checks (single connective, 5..=22 words, connective within two words of the
//! center, at least one implicit-causality verb), splitting into clauses and
//! rewriting into backward (effect, cause) order, and finally an optional
//! external discourse validator.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::str::FromStr;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{
    capitalize_first, normalize_token, parse_line_list, read_to_string, token_core,
    with_terminal_period,
};

const DEFAULT_CONNECTIVES: &str = include_str!("../data/connectives.tsv");
const DEFAULT_IC_VERBS: &str = include_str!("../data/ic_verbs.txt");
const DEFAULT_ABBREVIATIONS: &str = include_str!("../data/abbreviations.txt");

pub const MIN_SENTENCE_WORDS: usize = 5;
pub const MAX_SENTENCE_WORDS: usize = 22;
pub const CENTER_TOLERANCE: f64 = 2.0;
pub const MIN_CLAUSE_WORDS: usize = 2;
pub const MAX_CLAUSE_WORDS: usize = 20;

// ---------------------------------------------------------------------------
// Connectives
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// "A because B": the clause after the connective is the cause.
    Backward,
    /// "A, therefore B": the clause after the connective is the effect.
    Forward,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "backward" => Ok(Direction::Backward),
            "forward" => Ok(Direction::Forward),
            other => Err(Error::Argument(format!("unknown direction {other:?}"))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Backward => "backward",
            Direction::Forward => "forward",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectiveSpec {
    pub surface: String,
    pub direction: Direction,
    #[serde(default)]
    pub head_index: usize,
}

impl ConnectiveSpec {
    pub fn new(surface: &str, direction: Direction) -> Result<Self> {
        let surface = surface.split_whitespace().collect::<Vec<_>>().join(" ");
        if surface.is_empty() {
            return Err(Error::Argument("connective surface must not be empty".into()));
        }
        if surface != surface.to_lowercase() {
            return Err(Error::Argument(format!(
                "connective surface {surface:?} must be lowercase"
            )));
        }
        Ok(ConnectiveSpec {
            surface,
            direction,
            head_index: 0,
        })
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.surface.split(' ')
    }

    pub fn len(&self) -> usize {
        self.words().count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectiveMatch {
    pub spec: ConnectiveSpec,
    /// Whitespace-token index of the connective's first word.
    pub token_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectiveSet {
    specs: Vec<ConnectiveSpec>,
}

impl ConnectiveSet {
    pub fn new(specs: Vec<ConnectiveSpec>) -> Self {
        ConnectiveSet { specs }
    }

    /// Parse `surface<TAB>direction` lines.
    pub fn parse(content: &str) -> Result<Self> {
        let mut specs = Vec::new();
        for (idx, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (surface, direction) = raw.split_once('\t').ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: "expected surface<TAB>direction".into(),
            })?;
            let direction: Direction = direction.parse().map_err(|e: Error| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            specs.push(ConnectiveSpec::new(surface, direction).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?);
        }
        Ok(ConnectiveSet { specs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?)
    }

    pub fn specs(&self) -> &[ConnectiveSpec] {
        &self.specs
    }

    /// Every occurrence of every connective, ordered by token index.
    pub fn find_all(&self, sentence: &str) -> Vec<ConnectiveMatch> {
        let tokens: Vec<String> = sentence.split_whitespace().map(normalize_token).collect();
        match_tokens(&tokens, &self.specs)
    }
}

impl Default for ConnectiveSet {
    fn default() -> Self {
        Self::parse(DEFAULT_CONNECTIVES).expect("bundled connective list is valid")
    }
}

/// Case-insensitive match over punctuation-stripped whitespace tokens.
pub fn match_connectives(sentence: &str, specs: &[ConnectiveSpec]) -> Vec<ConnectiveMatch> {
    let tokens: Vec<String> = sentence.split_whitespace().map(normalize_token).collect();
    match_tokens(&tokens, specs)
}

fn match_tokens(tokens: &[String], specs: &[ConnectiveSpec]) -> Vec<ConnectiveMatch> {
    let mut out = Vec::new();
    for start in 0..tokens.len() {
        for spec in specs {
            let n = spec.len();
            if start + n > tokens.len() {
                continue;
            }
            if spec.words().zip(&tokens[start..start + n]).all(|(w, t)| w == t) {
                out.push(ConnectiveMatch {
                    spec: spec.clone(),
                    token_index: start,
                });
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Implicit-causality verbs
// ---------------------------------------------------------------------------

/// Surface forms (already inflected) of implicit-causality verbs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IcLexicon(HashSet<String>);

impl IcLexicon {
    pub fn parse(content: &str) -> Self {
        IcLexicon(parse_line_list(content).map(str::to_lowercase).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::parse(&read_to_string(path)?))
    }

    pub fn from_words<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        IcLexicon(words.into_iter().map(Into::into).collect())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn has_verb_in(&self, sentence: &str) -> bool {
        sentence
            .split_whitespace()
            .any(|t| self.contains(&normalize_token(t)))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for IcLexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_IC_VERBS)
    }
}

// ---------------------------------------------------------------------------
// Rejections
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectCode {
    Length,
    Center,
    MultiConnective,
    NoIcVerb,
    NoConnective,
    ValidatorReject,
    VagueClause,
}

impl RejectCode {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectCode::Length => "LENGTH",
            RejectCode::Center => "CENTER",
            RejectCode::MultiConnective => "MULTI_CONNECTIVE",
            RejectCode::NoIcVerb => "NO_IC_VERB",
            RejectCode::NoConnective => "NO_CONNECTIVE",
            RejectCode::ValidatorReject => "VALIDATOR_REJECT",
            RejectCode::VagueClause => "VAGUE_CLAUSE",
        }
    }
}

impl fmt::Display for RejectCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectReason {
    pub code: RejectCode,
    pub detail: String,
}

impl RejectReason {
    pub fn new(code: RejectCode, detail: impl Into<String>) -> Self {
        RejectReason {
            code,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.detail)
    }
}

/// Apply the ordered sentence constraints to one connective occurrence.
///
/// `connectives` is the full set, used to detect sentences holding more than
/// one connective.
pub fn check_constraints(
    sentence: &str,
    m: &ConnectiveMatch,
    connectives: &ConnectiveSet,
    ic_lexicon: &IcLexicon,
) -> Result<(), RejectReason> {
    let all = connectives.find_all(sentence);
    if all.len() > 1 {
        let names: Vec<&str> = all.iter().map(|m| m.spec.surface.as_str()).collect();
        return Err(RejectReason::new(
            RejectCode::MultiConnective,
            names.join(","),
        ));
    }
    let n = sentence.split_whitespace().count();
    if !(MIN_SENTENCE_WORDS..=MAX_SENTENCE_WORDS).contains(&n) {
        return Err(RejectReason::new(RejectCode::Length, format!("{n} words")));
    }
    let center = (n as f64 - 1.0) / 2.0;
    let offset = (m.token_index as f64 - center).abs();
    if offset > CENTER_TOLERANCE {
        return Err(RejectReason::new(
            RejectCode::Center,
            format!("connective at {} of {n}, center {center}", m.token_index),
        ));
    }
    if !ic_lexicon.has_verb_in(sentence) {
        return Err(RejectReason::new(RejectCode::NoIcVerb, ""));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Pairs
// ---------------------------------------------------------------------------

/// Where a sentence came from: shard name and byte offset of its first character.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SourceId {
    pub file: String,
    pub offset: u64,
}

impl SourceId {
    pub fn new(file: impl Into<String>, offset: u64) -> Self {
        SourceId {
            file: file.into(),
            offset,
        }
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.offset)
    }
}

impl FromStr for SourceId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (file, offset) = s
            .rsplit_once(':')
            .ok_or_else(|| Error::Argument(format!("source id {s:?} lacks an offset")))?;
        let offset = offset
            .parse()
            .map_err(|_| Error::Argument(format!("source id {s:?} has a bad offset")))?;
        Ok(SourceId::new(file, offset))
    }
}

impl Serialize for SourceId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SourceId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub text: String,
    pub source: SourceId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalPair {
    pub effect_clause: String,
    pub cause_clause: String,
    pub connective: ConnectiveSpec,
    pub source_id: SourceId,
    pub original_sentence: String,
}

/// On-disk form of a [`CausalPair`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalPairRecord {
    pub effect: String,
    pub cause: String,
    pub connective: String,
    pub direction: Direction,
    pub source_id: SourceId,
    pub original: String,
}

impl From<&CausalPair> for CausalPairRecord {
    fn from(p: &CausalPair) -> Self {
        CausalPairRecord {
            effect: p.effect_clause.clone(),
            cause: p.cause_clause.clone(),
            connective: p.connective.surface.clone(),
            direction: p.connective.direction,
            source_id: p.source_id.clone(),
            original: p.original_sentence.clone(),
        }
    }
}

impl From<CausalPairRecord> for CausalPair {
    fn from(r: CausalPairRecord) -> Self {
        CausalPair {
            effect_clause: r.effect,
            cause_clause: r.cause,
            connective: ConnectiveSpec {
                surface: r.connective,
                direction: r.direction,
                head_index: 0,
            },
            source_id: r.source_id,
            original_sentence: r.original,
        }
    }
}

pub fn read_pairs(path: &Path) -> Result<Vec<CausalPair>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CausalPairRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(rec.into());
    }
    Ok(out)
}

pub fn write_pairs(path: &Path, pairs: &[CausalPair]) -> Result<()> {
    let records: Vec<CausalPairRecord> = pairs.iter().map(CausalPairRecord::from).collect();
    crate::copa_data::write_jsonl(path, &records)
}

const CONJUNCTION_RESIDUE: &[&str] = &["and", "but", "or", "yet"];

/// Split an accepted sentence at its connective and rewrite it as an
/// (effect, cause) pair.
pub fn split_and_rewrite(sentence: &Sentence, m: &ConnectiveMatch) -> Result<CausalPair, RejectReason> {
    let tokens: Vec<&str> = sentence.text.split_whitespace().collect();
    let end = m.token_index + m.spec.len();
    if end > tokens.len() {
        return Err(RejectReason::new(
            RejectCode::VagueClause,
            "connective span exceeds sentence",
        ));
    }
    let left = clean_left(&tokens[..m.token_index]);
    let right = clean_right(&tokens[end..]);
    for (name, clause) in [("left", &left), ("right", &right)] {
        let n = clause.split_whitespace().count();
        if !(MIN_CLAUSE_WORDS..=MAX_CLAUSE_WORDS).contains(&n) {
            return Err(RejectReason::new(
                RejectCode::VagueClause,
                format!("{name} clause has {n} words"),
            ));
        }
    }
    let left = with_terminal_period(&capitalize_first(&left));
    let right = with_terminal_period(&capitalize_first(&right));
    let (effect_clause, cause_clause) = match m.spec.direction {
        Direction::Backward => (left, right),
        Direction::Forward => (right, left),
    };
    Ok(CausalPair {
        effect_clause,
        cause_clause,
        connective: m.spec.clone(),
        source_id: sentence.source.clone(),
        original_sentence: sentence.text.clone(),
    })
}

fn clean_left(tokens: &[&str]) -> String {
    let mut toks: Vec<&str> = tokens.to_vec();
    while let Some(&last) = toks.last() {
        let trimmed = last.trim_end_matches([',', ';', ':', '-', '\u{2014}', '\u{2013}']);
        let core = token_core(trimmed);
        let residue = core.len() == trimmed.len()
            && CONJUNCTION_RESIDUE.contains(&core.to_lowercase().as_str());
        toks.pop();
        if !trimmed.is_empty() && !residue {
            toks.push(trimmed);
            break;
        }
    }
    toks.join(" ")
}

fn clean_right(tokens: &[&str]) -> String {
    let mut toks: &[&str] = tokens;
    let mut head = None;
    while let Some((&first, rest)) = toks.split_first() {
        toks = rest;
        let trimmed = first.trim_start_matches([',', ';', ':', '-', '\u{2014}', '\u{2013}']);
        if !trimmed.is_empty() {
            head = Some(trimmed);
            break;
        }
    }
    let joined = head.into_iter().chain(toks.iter().copied()).collect::<Vec<_>>().join(" ");
    joined
        .trim_end_matches(|c: char| {
            crate::text::is_sentence_terminator(c)
                || c.is_whitespace()
                || matches!(c, '"' | '\'' | '\u{201d}' | '\u{2019}')
        })
        .to_string()
}

// ---------------------------------------------------------------------------
// Discourse validator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationRequest {
    pub sentence: String,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationResponse {
    pub id: String,
    pub labels: Vec<String>,
}

/// An external discourse-relation labeller.
pub trait Validator: Send + Sync {
    /// Label a batch of sentences. `None` means every sentence is accepted
    /// without consulting anything.
    fn label(&self, requests: &[ValidationRequest]) -> Result<Option<Vec<ValidationResponse>>>;
}

/// Default validator: accepts everything.
#[derive(Debug, Clone, Copy, Default)]
pub struct AcceptAll;

impl Validator for AcceptAll {
    fn label(&self, _requests: &[ValidationRequest]) -> Result<Option<Vec<ValidationResponse>>> {
        Ok(None)
    }
}

/// Runs a shell command per batch: requests go to its stdin as JSON lines,
/// responses are read from its stdout as JSON lines.
#[derive(Debug, Clone)]
pub struct CommandValidator {
    pub command: String,
}

impl Validator for CommandValidator {
    fn label(&self, requests: &[ValidationRequest]) -> Result<Option<Vec<ValidationResponse>>> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Validator(format!("cannot start {:?}: {e}", self.command)))?;
        let mut payload = Vec::new();
        crate::copa_data::write_records(&mut payload, requests)
            .map_err(|e| Error::Validator(e.to_string()))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(&payload));
        let mut out = String::new();
        child
            .stdout
            .take()
            .expect("piped stdout")
            .read_to_string(&mut out)
            .map_err(|e| Error::Validator(e.to_string()))?;
        let status = child.wait().map_err(|e| Error::Validator(e.to_string()))?;
        writer
            .join()
            .map_err(|_| Error::Validator("stdin writer panicked".into()))?
            .map_err(|e| Error::Validator(format!("writing requests: {e}")))?;
        if !status.success() {
            return Err(Error::Validator(format!("{:?} exited with {status}", self.command)));
        }
        let mut responses = Vec::new();
        for (idx, line) in out.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            responses.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                line: idx + 1,
                message: format!("validator response: {e}"),
            })?);
        }
        Ok(Some(responses))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationPolicy {
    pub accept_labels: Vec<String>,
    /// Accept everything when the validator cannot be reached.
    pub fail_open: bool,
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        ValidationPolicy {
            accept_labels: vec!["Contingency.Cause".to_string()],
            fail_open: false,
        }
    }
}

impl ValidationPolicy {
    /// Exact label or a finer-grained sub-label ("Contingency.Cause.Reason").
    pub fn accepts(&self, labels: &[String]) -> bool {
        labels.iter().any(|l| {
            self.accept_labels.iter().any(|a| {
                l == a || (l.starts_with(a.as_str()) && l[a.len()..].starts_with('.'))
            })
        })
    }
}

pub fn validate_relation(
    pair: &CausalPair,
    validator: &dyn Validator,
    policy: &ValidationPolicy,
) -> Result<(), RejectReason> {
    validate_batch(std::slice::from_ref(pair), validator, policy)
        .pop()
        .expect("one verdict per pair")
}

/// One verdict per pair, in input order.
pub fn validate_batch(
    pairs: &[CausalPair],
    validator: &dyn Validator,
    policy: &ValidationPolicy,
) -> Vec<Result<(), RejectReason>> {
    if pairs.is_empty() {
        return Vec::new();
    }
    let requests: Vec<ValidationRequest> = pairs
        .iter()
        .map(|p| ValidationRequest {
            sentence: p.original_sentence.clone(),
            id: p.source_id.to_string(),
        })
        .collect();
    match validator.label(&requests) {
        Ok(None) => vec![Ok(()); pairs.len()],
        Ok(Some(responses)) => {
            let by_id: HashMap<&str, &[String]> = responses
                .iter()
                .map(|r| (r.id.as_str(), r.labels.as_slice()))
                .collect();
            requests
                .iter()
                .map(|req| match by_id.get(req.id.as_str()) {
                    Some(labels) if policy.accepts(labels) => Ok(()),
                    Some(labels) => Err(RejectReason::new(
                        RejectCode::ValidatorReject,
                        format!("labels {labels:?}"),
                    )),
                    None => Err(RejectReason::new(RejectCode::ValidatorReject, "no response")),
                })
                .collect()
        }
        Err(e) if policy.fail_open => {
            warn!("validator unavailable, accepting batch: {e}");
            vec![Ok(()); pairs.len()]
        }
        Err(e) => {
            warn!("validator unavailable, rejecting batch: {e}");
            vec![Err(RejectReason::new(RejectCode::ValidatorReject, e.to_string())); pairs.len()]
        }
    }
}

// ---------------------------------------------------------------------------
// Sentence segmentation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Segmenter {
    abbreviations: HashSet<String>,
    /// Fail on invalid UTF-8 instead of skipping the offending line.
    pub strict: bool,
}

impl Default for Segmenter {
    fn default() -> Self {
        Segmenter::new(parse_line_list(DEFAULT_ABBREVIATIONS).map(String::from), false)
    }
}

impl Segmenter {
    pub fn new<I: IntoIterator<Item = String>>(abbreviations: I, strict: bool) -> Self {
        Segmenter {
            abbreviations: abbreviations.into_iter().collect(),
            strict,
        }
    }

    pub fn load_abbreviations(path: &Path, strict: bool) -> Result<Self> {
        let content = read_to_string(path)?;
        Ok(Segmenter::new(parse_line_list(&content).map(String::from), strict))
    }

    pub fn segment<R: BufRead>(&self, reader: R, source_name: &str) -> Sentences<'_, R> {
        Sentences {
            segmenter: self,
            reader,
            source: source_name.to_string(),
            pending: String::new(),
            pending_offset: 0,
            consumed: 0,
            queue: VecDeque::new(),
            line: Vec::new(),
            done: false,
            skipped_lines: 0,
        }
    }

    pub fn segment_str(&self, text: &str, source_name: &str) -> Vec<Sentence> {
        self.segment(text.as_bytes(), source_name)
            .collect::<Result<Vec<_>>>()
            .expect("&str input is valid utf-8")
    }
}

/// Streaming sentence iterator over one shard.
pub struct Sentences<'a, R> {
    segmenter: &'a Segmenter,
    reader: R,
    source: String,
    pending: String,
    pending_offset: u64,
    consumed: u64,
    queue: VecDeque<Result<Sentence>>,
    line: Vec<u8>,
    done: bool,
    skipped_lines: usize,
}

impl<R: BufRead> Sentences<'_, R> {
    /// Lines dropped because they were not valid UTF-8.
    pub fn skipped_lines(&self) -> usize {
        self.skipped_lines
    }

    fn emit(&mut self, end: usize, drain_to: usize) {
        let raw = &self.pending[..end];
        let lead = raw.len() - raw.trim_start().len();
        let text = raw.split_whitespace().collect::<Vec<_>>().join(" ");
        if !text.is_empty() {
            self.queue.push_back(Ok(Sentence {
                text,
                source: SourceId::new(self.source.clone(), self.pending_offset + lead as u64),
            }));
        }
        self.pending.drain(..drain_to);
        self.pending_offset += drain_to as u64;
    }

    fn flush(&mut self) {
        let len = self.pending.len();
        self.emit(len, len);
    }

    fn is_abbreviation(&self, upto: usize) -> bool {
        let head = &self.pending[..upto];
        let start = head
            .rfind(char::is_whitespace)
            .map_or(0, |i| i + head[i..].chars().next().map_or(1, char::len_utf8));
        let token = head[start..].trim_start_matches(['"', '\'', '(', '\u{201c}', '\u{2018}']);
        self.segmenter.abbreviations.contains(token)
    }

    fn scan(&mut self) {
        let mut from = 0;
        'outer: while let Some(rel) = self.pending[from..].find(['.', '!', '?']) {
            let term = from + rel;
            let bytes = self.pending.as_bytes();
            let mut j = term + 1;
            // runs like "?!" or "..." and closing quotes/brackets
            while j < self.pending.len() {
                let c = self.pending[j..].chars().next().unwrap();
                if crate::text::is_sentence_terminator(c)
                    || matches!(c, '"' | '\'' | ')' | '\u{201d}' | '\u{2019}')
                {
                    j += c.len_utf8();
                } else {
                    break;
                }
            }
            if j >= bytes.len() {
                break;
            }
            let next = self.pending[j..].chars().next().unwrap();
            if !next.is_whitespace() {
                from = j;
                continue;
            }
            let rest = &self.pending[j..];
            let k = j + (rest.len() - rest.trim_start().len());
            if k >= self.pending.len() {
                break;
            }
            for c in self.pending[k..].chars() {
                if matches!(c, '"' | '\'' | '(' | '\u{201c}' | '\u{2018}') {
                    continue;
                }
                if c.is_uppercase() && !self.is_abbreviation(term + 1) {
                    self.emit(j, k);
                    from = 0;
                    continue 'outer;
                }
                break;
            }
            from = j;
        }
    }
}

impl<R: BufRead> Iterator for Sentences<'_, R> {
    type Item = Result<Sentence>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(s) = self.queue.pop_front() {
                return Some(s);
            }
            if self.done {
                return None;
            }
            self.line.clear();
            let line_start = self.consumed;
            let read = match self.reader.read_until(b'\n', &mut self.line) {
                Ok(n) => n,
                Err(e) => {
                    self.done = true;
                    return Some(Err(Error::io(PathBuf::from(&self.source), e)));
                }
            };
            if read == 0 {
                self.flush();
                self.done = true;
                continue;
            }
            self.consumed += read as u64;
            let line = match std::str::from_utf8(&self.line) {
                Ok(l) => l.to_string(),
                Err(_) if self.segmenter.strict => {
                    self.flush();
                    self.queue.push_back(Err(Error::Utf8 {
                        source_name: self.source.clone(),
                        offset: line_start,
                    }));
                    self.done = true;
                    continue;
                }
                Err(_) => {
                    warn!("{}: skipping invalid utf-8 line at byte {line_start}", self.source);
                    self.skipped_lines += 1;
                    self.flush();
                    self.pending_offset = self.consumed;
                    continue;
                }
            };
            if line.trim().is_empty() {
                self.flush();
                self.pending_offset = self.consumed;
                continue;
            }
            if self.pending.is_empty() {
                self.pending_offset = line_start;
            }
            self.pending.push_str(&line);
            self.scan();
        }
    }
}

/// Split text into sentences at `.`, `!` or `?` followed by whitespace and an
/// uppercase letter, unless the word before the mark is a known abbreviation.
pub fn segment_sentences(text: &str, source_name: &str, segmenter: &Segmenter) -> Vec<Sentence> {
    segmenter.segment_str(text, source_name)
}

// ---------------------------------------------------------------------------
// Extraction pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub sentences: usize,
    pub with_connective: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<RejectCode, usize>,
    pub skipped_lines: usize,
}

impl FilterStats {
    pub fn record_reject(&mut self, code: RejectCode) {
        *self.rejected.entry(code).or_default() += 1;
    }

    pub fn total_rejected(&self) -> usize {
        self.rejected.values().sum()
    }

    pub fn merge(&mut self, other: &FilterStats) {
        self.sentences += other.sentences;
        self.with_connective += other.with_connective;
        self.accepted += other.accepted;
        self.skipped_lines += other.skipped_lines;
        for (code, n) in &other.rejected {
            *self.rejected.entry(*code).or_default() += n;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SentenceOutcome {
    NoConnective,
    Accepted(CausalPair),
    Rejected(RejectReason),
}

pub struct Extractor {
    pub connectives: ConnectiveSet,
    pub ic_lexicon: IcLexicon,
    pub segmenter: Segmenter,
    pub validator: Box<dyn Validator>,
    pub policy: ValidationPolicy,
}

impl Default for Extractor {
    fn default() -> Self {
        Extractor {
            connectives: ConnectiveSet::default(),
            ic_lexicon: IcLexicon::default(),
            segmenter: Segmenter::default(),
            validator: Box::new(AcceptAll),
            policy: ValidationPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub pairs: Vec<CausalPair>,
    pub stats: FilterStats,
}

impl Extractor {
    /// Local checks only; the validator runs per batch in [`Extractor::extract_reader`].
    pub fn process_sentence(&self, sentence: &Sentence) -> SentenceOutcome {
        let matches = self.connectives.find_all(&sentence.text);
        let Some(first) = matches.first() else {
            return SentenceOutcome::NoConnective;
        };
        if let Err(r) = check_constraints(&sentence.text, first, &self.connectives, &self.ic_lexicon) {
            return SentenceOutcome::Rejected(r);
        }
        match split_and_rewrite(sentence, first) {
            Ok(pair) => SentenceOutcome::Accepted(pair),
            Err(r) => SentenceOutcome::Rejected(r),
        }
    }

    pub fn extract_reader<R: BufRead>(&self, reader: R, source_name: &str) -> Result<Extraction> {
        let mut stats = FilterStats::default();
        let mut candidates = Vec::new();
        let mut sentences = self.segmenter.segment(reader, source_name);
        for sentence in sentences.by_ref() {
            let sentence = sentence?;
            stats.sentences += 1;
            match self.process_sentence(&sentence) {
                SentenceOutcome::NoConnective => {}
                SentenceOutcome::Accepted(pair) => {
                    stats.with_connective += 1;
                    candidates.push(pair);
                }
                SentenceOutcome::Rejected(r) => {
                    stats.with_connective += 1;
                    stats.record_reject(r.code);
                }
            }
        }
        stats.skipped_lines = sentences.skipped_lines();
        let verdicts = validate_batch(&candidates, self.validator.as_ref(), &self.policy);
        let mut pairs = Vec::with_capacity(candidates.len());
        for (pair, verdict) in candidates.into_iter().zip(verdicts) {
            match verdict {
                Ok(()) => pairs.push(pair),
                Err(r) => {
                    debug!("{}: {r}", pair.source_id);
                    stats.record_reject(r.code);
                }
            }
        }
        stats.accepted = pairs.len();
        Ok(Extraction { pairs, stats })
    }

    pub fn extract_file(&self, path: &Path, source_name: &str) -> Result<Extraction> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        self.extract_reader(BufReader::new(file), source_name)
    }

    /// Every regular file under `dir` is one shard. Shards run in parallel;
    /// output is ordered by source id.
    pub fn extract_dir(&self, dir: &Path) -> Result<Extraction> {
        let mut files = Vec::new();
        for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
            let entry = entry.map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e.into(),
            })?;
            if entry.file_type().is_file() {
                let name = entry
                    .path()
                    .strip_prefix(dir)
                    .unwrap_or(entry.path())
                    .to_string_lossy()
                    .replace('\\', "/");
                files.push((entry.into_path(), name));
            }
        }
        let shards: Vec<Extraction> = files
            .par_iter()
            .map(|(path, name)| self.extract_file(path, name))
            .collect::<Result<_>>()?;
        let mut out = Extraction::default();
        for shard in shards {
            out.stats.merge(&shard.stats);
            out.pairs.extend(shard.pairs);
        }
        out.pairs.sort_by(|a, b| a.source_id.cmp(&b.source_id));
        Ok(out)
    }
}
