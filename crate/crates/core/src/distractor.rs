//! Turning extracted (effect, cause) pairs into complete COPA items by adding
//! a false alternative.
//!
//! Three strategies pick the distractor: a random clause from the pool, a pool
//! clause sharing a content word with the premise, or a language-model
//! continuation of "{premise}. And".

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use log::debug;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::copa_data::{CopaItem, Label, Relation};
use crate::corpus_filter::{CausalPair, ConnectiveSet};
use crate::error::{Error, Result};
use crate::model_backend::Generator;
use crate::text::{
    capitalize_first, content_words, derive_seed, is_sentence_terminator, seeded_rng, token_core,
    with_terminal_period, word_count, StopWords,
};

pub const MIN_DISTRACTOR_WORDS: usize = 2;
pub const MAX_DISTRACTOR_WORDS: usize = 11;
pub const DEFAULT_MAX_RETRIES: usize = 5;
pub const DEFAULT_MAX_NEW_WORDS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Overlap,
    Lm,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::Overlap => "overlap",
            Strategy::Lm => "lm",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "overlap" => Ok(Strategy::Overlap),
            "lm" => Ok(Strategy::Lm),
            other => Err(Error::Argument(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Distractor {
    pub text: String,
    pub source: String,
}

fn length_ok(text: &str) -> bool {
    (MIN_DISTRACTOR_WORDS..=MAX_DISTRACTOR_WORDS).contains(&word_count(text))
}

/// Candidate false alternatives, each 2..=11 words and connective-free.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DistractorPool {
    entries: Vec<Distractor>,
}

impl DistractorPool {
    pub fn new(entries: Vec<Distractor>, connectives: &ConnectiveSet) -> Result<Self> {
        for e in &entries {
            if !length_ok(&e.text) {
                return Err(Error::Argument(format!(
                    "pool entry {:?} is outside {MIN_DISTRACTOR_WORDS}..={MAX_DISTRACTOR_WORDS} words",
                    e.text
                )));
            }
            if !connectives.find_all(&e.text).is_empty() {
                return Err(Error::Argument(format!(
                    "pool entry {:?} contains a connective",
                    e.text
                )));
            }
        }
        Ok(DistractorPool { entries })
    }

    /// Cause clauses of extracted pairs that fit the length bound.
    pub fn from_pairs(pairs: &[CausalPair], connectives: &ConnectiveSet) -> Self {
        let entries = pairs
            .iter()
            .filter(|p| length_ok(&p.cause_clause) && connectives.find_all(&p.cause_clause).is_empty())
            .map(|p| Distractor {
                text: p.cause_clause.clone(),
                source: p.source_id.to_string(),
            })
            .collect();
        DistractorPool { entries }
    }

    pub fn entries(&self) -> &[Distractor] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn draw(candidates: &[&Distractor], seed: u64) -> Distractor {
    let mut rng = seeded_rng(seed);
    candidates[rng.random_range(0..candidates.len())].clone()
}

/// Uniform draw from the pool, excluding the pair's own cause clause.
pub fn random_distractor(pair: &CausalPair, pool: &DistractorPool, seed: u64) -> Result<Distractor> {
    let candidates: Vec<&Distractor> = pool
        .entries
        .iter()
        .filter(|e| e.text != pair.cause_clause)
        .collect();
    if candidates.is_empty() {
        return Err(Error::Argument(format!(
            "no eligible random distractor for {}",
            pair.source_id
        )));
    }
    Ok(draw(&candidates, seed))
}

/// Uniform draw among pool entries sharing at least one content word with the premise.
pub fn overlap_distractor(
    pair: &CausalPair,
    pool: &DistractorPool,
    seed: u64,
    stopwords: &StopWords,
) -> Result<Distractor> {
    let premise = content_words(&pair.effect_clause, stopwords);
    let candidates: Vec<&Distractor> = pool
        .entries
        .iter()
        .filter(|e| e.text != pair.cause_clause)
        .filter(|e| !content_words(&e.text, stopwords).is_disjoint(&premise))
        .collect();
    if candidates.is_empty() {
        return Err(Error::Argument(format!(
            "no pool clause shares a content word with premise {:?}",
            pair.effect_clause
        )));
    }
    Ok(draw(&candidates, seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LmConstraints {
    pub max_retries: usize,
    pub max_new_words: usize,
    pub seed: u64,
}

impl Default for LmConstraints {
    fn default() -> Self {
        LmConstraints {
            max_retries: DEFAULT_MAX_RETRIES,
            max_new_words: DEFAULT_MAX_NEW_WORDS,
            seed: 0,
        }
    }
}

pub fn lm_prompt(effect_clause: &str) -> String {
    let body = effect_clause
        .trim()
        .trim_end_matches(|c: char| is_sentence_terminator(c) || c.is_whitespace());
    format!("{body}. And")
}

/// Cut a raw continuation down to a candidate clause: up to the first sentence
/// terminator, without an echoed leading "and", capitalized, period-terminated.
pub fn clean_continuation(raw: &str) -> String {
    let first = match raw.find(is_sentence_terminator) {
        Some(i) => &raw[..i],
        None => raw,
    };
    let mut text = first.trim();
    if let Some(head) = text.split_whitespace().next() {
        if token_core(head).eq_ignore_ascii_case("and") {
            text = text[head.len()..].trim_start();
        }
    }
    let text = text.trim_start_matches(|c: char| !c.is_alphanumeric());
    if text.is_empty() {
        return String::new();
    }
    with_terminal_period(&capitalize_first(text))
}

/// Generate a distractor as a conjunct continuation of the premise.
///
/// Attempts use seeds `seed, seed+1, ...`; a candidate must have 2..=11 words,
/// hold no connective and differ from the true cause.
pub fn lm_distractor(
    pair: &CausalPair,
    generator: &dyn Generator,
    constraints: &LmConstraints,
    connectives: &ConnectiveSet,
) -> Result<String> {
    let prompt = lm_prompt(&pair.effect_clause);
    let attempts = constraints.max_retries.max(1);
    let mut last = String::new();
    for attempt in 0..attempts {
        let seed = constraints.seed.wrapping_add(attempt as u64);
        let raw = generator.generate(&prompt, constraints.max_new_words, seed)?;
        let candidate = clean_continuation(&raw);
        let acceptable = !candidate.is_empty()
            && length_ok(&candidate)
            && connectives.find_all(&candidate).is_empty()
            && candidate != pair.cause_clause;
        if acceptable {
            return Ok(candidate);
        }
        debug!("attempt {attempt}: rejected continuation {raw:?}");
        last = if candidate.is_empty() { raw } else { candidate };
    }
    Err(Error::GenerationFailure {
        attempts,
        last_candidate: last,
    })
}

/// A generated COPA item with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedItem {
    pub item: CopaItem,
    pub strategy: Strategy,
    pub pair_source: String,
    pub distractor_source: String,
}

impl AugmentedItem {
    /// Native record with `strategy`, `pair_source` and `distractor_source` keys.
    pub fn to_record(&self) -> CopaItem {
        let mut item = self.item.clone();
        item.extra
            .insert("strategy".into(), Value::from(self.strategy.to_string()));
        item.extra
            .insert("pair_source".into(), Value::from(self.pair_source.clone()));
        item.extra.insert(
            "distractor_source".into(),
            Value::from(self.distractor_source.clone()),
        );
        item
    }

    pub fn from_record(mut item: CopaItem) -> Result<Self> {
        let mut take = |key: &str| -> Result<String> {
            match item.extra.remove(key) {
                Some(Value::String(s)) => Ok(s),
                _ => Err(Error::Field {
                    item: item.id.to_string(),
                    field: key.to_string(),
                }),
            }
        };
        let strategy = take("strategy")?.parse()?;
        let pair_source = take("pair_source")?;
        let distractor_source = take("distractor_source")?;
        Ok(AugmentedItem {
            item,
            strategy,
            pair_source,
            distractor_source,
        })
    }
}

/// Place the true cause at a seeded random position next to the distractor.
pub fn assemble_item(
    pair: &CausalPair,
    distractor: &Distractor,
    strategy: Strategy,
    next_id: u64,
    seed: u64,
) -> Result<AugmentedItem> {
    if distractor.text == pair.cause_clause {
        return Err(Error::Argument(
            "distractor is identical to the true cause".into(),
        ));
    }
    let mut rng = seeded_rng(seed);
    let label = if rng.random_bool(0.5) {
        Label::One
    } else {
        Label::Two
    };
    let (choice1, choice2) = match label {
        Label::One => (pair.cause_clause.clone(), distractor.text.clone()),
        Label::Two => (distractor.text.clone(), pair.cause_clause.clone()),
    };
    Ok(AugmentedItem {
        item: CopaItem::new(
            next_id,
            pair.effect_clause.clone(),
            choice1,
            choice2,
            Relation::Cause,
            label,
        ),
        strategy,
        pair_source: pair.source_id.to_string(),
        distractor_source: distractor.source.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct AugmentOptions {
    pub strategy: Strategy,
    pub seed: u64,
    pub stopwords: StopWords,
    pub connectives: ConnectiveSet,
    pub max_retries: usize,
    pub max_new_words: usize,
    pub first_id: u64,
    /// Drop items whose premise and choice set repeat an earlier item.
    pub dedup: bool,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            strategy: Strategy::Random,
            seed: 0,
            stopwords: StopWords::default(),
            connectives: ConnectiveSet::default(),
            max_retries: DEFAULT_MAX_RETRIES,
            max_new_words: DEFAULT_MAX_NEW_WORDS,
            first_id: 1,
            dedup: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AugmentOutcome {
    pub items: Vec<AugmentedItem>,
    /// (pair source, reason) for every pair that produced no item.
    pub failures: Vec<(String, String)>,
    pub duplicates: usize,
}

/// Build one item per pair. Pairs are processed in parallel, each with a
/// sub-seed derived from the base seed and its source id; ids are assigned in
/// input order.
pub fn augment(
    pairs: &[CausalPair],
    opts: &AugmentOptions,
    generator: Option<&dyn Generator>,
) -> Result<AugmentOutcome> {
    if opts.strategy == Strategy::Lm && generator.is_none() {
        return Err(Error::Argument("the lm strategy needs a generation backend".into()));
    }
    let pool = DistractorPool::from_pairs(pairs, &opts.connectives);
    let drawn: Vec<Result<(Distractor, u64)>> = pairs
        .par_iter()
        .map(|pair| {
            let sub = derive_seed(opts.seed, &pair.source_id.to_string());
            let distractor = match opts.strategy {
                Strategy::Random => random_distractor(pair, &pool, sub)?,
                Strategy::Overlap => overlap_distractor(pair, &pool, sub, &opts.stopwords)?,
                Strategy::Lm => {
                    let constraints = LmConstraints {
                        max_retries: opts.max_retries,
                        max_new_words: opts.max_new_words,
                        seed: sub,
                    };
                    let gen = generator.expect("checked above");
                    Distractor {
                        text: lm_distractor(pair, gen, &constraints, &opts.connectives)?,
                        source: format!("lm:seed={sub}"),
                    }
                }
            };
            Ok((distractor, derive_seed(sub, "position")))
        })
        .collect();

    let mut out = AugmentOutcome::default();
    let mut seen = HashSet::new();
    let mut next_id = opts.first_id;
    for (pair, result) in pairs.iter().zip(drawn) {
        let assembled = result.and_then(|(d, pos_seed)| {
            let item = assemble_item(pair, &d, opts.strategy, next_id, pos_seed)?;
            item.item.validate(&opts.connectives)?;
            Ok(item)
        });
        match assembled {
            Ok(item) => {
                if opts.dedup {
                    let mut choices = [item.item.choice1.clone(), item.item.choice2.clone()];
                    choices.sort();
                    if !seen.insert((item.item.premise.clone(), choices)) {
                        out.duplicates += 1;
                        continue;
                    }
                }
                next_id += 1;
                out.items.push(item);
            }
            Err(e) => out.failures.push((pair.source_id.to_string(), e.to_string())),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus_filter::{ConnectiveSpec, Direction, SourceId};
    use crate::model_backend::{Generator, StubModel};

    fn pair(effect: &str, cause: &str, offset: u64) -> CausalPair {
        CausalPair {
            effect_clause: effect.into(),
            cause_clause: cause.into(),
            connective: ConnectiveSpec::new("because", Direction::Backward).unwrap(),
            source_id: SourceId::new("t", offset),
            original_sentence: String::new(),
        }
    }

    fn pool(texts: &[&str]) -> DistractorPool {
        let entries = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Distractor {
                text: t.to_string(),
                source: format!("p:{i}"),
            })
            .collect();
        DistractorPool::new(entries, &ConnectiveSet::default()).unwrap()
    }

    #[test]
    fn random_single_entry() {
        let p = pair("He stayed home.", "It rained.", 0);
        let d = random_distractor(&p, &pool(&["We sang songs."]), 1).unwrap();
        assert_eq!(d.text, "We sang songs.");
    }

    #[test]
    fn random_only_cause_is_error() {
        let p = pair("He stayed home.", "It rained.", 0);
        assert!(random_distractor(&p, &pool(&["It rained."]), 1).is_err());
        assert!(random_distractor(&p, &DistractorPool::default(), 1).is_err());
    }

    #[test]
    fn random_is_seeded() {
        let texts: Vec<String> = (0..100).map(|i| format!("Clause number {i}.")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let pl = pool(&refs);
        let p = pair("He stayed home.", "It rained.", 0);
        let a = random_distractor(&p, &pl, 42).unwrap();
        let b = random_distractor(&p, &pl, 42).unwrap();
        assert_eq!(a, b);
        let distinct: HashSet<String> = (0..50)
            .map(|s| random_distractor(&p, &pl, s).unwrap().text)
            .collect();
        assert!(distinct.len() > 10);
    }

    #[test]
    fn overlap_requires_shared_content_word() {
        let sw = StopWords::default();
        let p = pair("The dog barked loudly.", "A cat hissed.", 0);
        let d = overlap_distractor(&p, &pool(&["A dog slept."]), 0, &sw).unwrap();
        assert_eq!(d.text, "A dog slept.");

        let p = pair("He ran.", "It rained.", 0);
        assert!(overlap_distractor(&p, &pool(&["She swam."]), 0, &sw).is_err());

        let p = pair("The house burned.", "It rained.", 0);
        assert!(overlap_distractor(&p, &pool(&["The children slept."]), 0, &sw).is_err());
    }

    #[test]
    fn pool_rejects_bad_entries() {
        let set = ConnectiveSet::default();
        let long = Distractor {
            text: "one two three four five six seven eight nine ten eleven twelve".into(),
            source: "x".into(),
        };
        assert!(DistractorPool::new(vec![long], &set).is_err());
        let conn = Distractor {
            text: "So it goes.".into(),
            source: "x".into(),
        };
        assert!(DistractorPool::new(vec![conn], &set).is_err());
    }

    #[test]
    fn lm_uses_canned_continuation() {
        let mut stub = StubModel::default();
        stub.canned.insert("The bananas ripened. And", " we put them in the basket.");
        let p = pair("The bananas ripened.", "It was warm.", 0);
        let d = lm_distractor(&p, &stub, &LmConstraints::default(), &ConnectiveSet::default())
            .unwrap();
        assert_eq!(d, "We put them in the basket.");
    }

    struct Always(&'static str);

    impl Generator for Always {
        fn generate(&self, _: &str, _: usize, _: u64) -> Result<String> {
            Ok(self.0.to_string())
        }
    }

    #[test]
    fn lm_length_violations_fail() {
        let p = pair("The bananas ripened.", "It was warm.", 0);
        let long = Always(" one two three four five six seven eight nine ten eleven twelve thirteen fourteen fifteen.");
        match lm_distractor(&p, &long, &LmConstraints::default(), &ConnectiveSet::default()) {
            Err(Error::GenerationFailure { attempts, last_candidate }) => {
                assert_eq!(attempts, DEFAULT_MAX_RETRIES);
                assert_eq!(last_candidate.split_whitespace().count(), 15);
            }
            other => panic!("expected failure, got {other:?}"),
        }
        let empty = Always("");
        assert!(matches!(
            lm_distractor(&p, &empty, &LmConstraints::default(), &ConnectiveSet::default()),
            Err(Error::GenerationFailure { .. })
        ));
    }

    #[test]
    fn continuation_cleanup() {
        assert_eq!(clean_continuation(" and we left. Then more"), "We left.");
        assert_eq!(clean_continuation("And, they cheered!"), "They cheered.");
        assert_eq!(clean_continuation(" Android phones sold"), "Android phones sold.");
        assert_eq!(clean_continuation("..."), "");
    }

    #[test]
    fn assemble_places_truth() {
        let p = pair("He stayed home.", "It rained.", 0);
        let d = Distractor {
            text: "We sang.".into(),
            source: "p:0".into(),
        };
        let seed = (0..).find(|&s| !seeded_rng(s).random_bool(0.5)).unwrap();
        let a = assemble_item(&p, &d, Strategy::Random, 7, seed).unwrap();
        assert_eq!(a.item.label, Label::Two);
        assert_eq!(a.item.choice2, "It rained.");
        assert_eq!(a.item.question, Relation::Cause);
        assert_eq!(a.item.id, 7);
        let same = Distractor {
            text: "It rained.".into(),
            source: "p:1".into(),
        };
        assert!(assemble_item(&p, &same, Strategy::Random, 7, seed).is_err());
    }

    #[test]
    fn record_round_trip() {
        let p = pair("He stayed home.", "It rained.", 3);
        let d = Distractor {
            text: "We sang.".into(),
            source: "p:0".into(),
        };
        let a = assemble_item(&p, &d, Strategy::Overlap, 1, 5).unwrap();
        let rec = a.to_record();
        assert_eq!(rec.extra["strategy"], "overlap");
        assert_eq!(AugmentedItem::from_record(rec).unwrap(), a);
    }

    #[test]
    fn augment_random_is_deterministic() {
        let pairs: Vec<CausalPair> = (0..20)
            .map(|i| pair(&format!("Event {i} happened."), &format!("Reason {i} applied."), i))
            .collect();
        let opts = AugmentOptions {
            seed: 11,
            ..AugmentOptions::default()
        };
        let a = augment(&pairs, &opts, None).unwrap();
        let b = augment(&pairs, &opts, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.items.len(), 20);
        let ids: Vec<u64> = a.items.iter().map(|i| i.item.id).collect();
        assert_eq!(ids, (1..=20).collect::<Vec<_>>());
        assert!(augment(&pairs, &AugmentOptions { strategy: Strategy::Lm, ..opts }, None).is_err());
    }
}
