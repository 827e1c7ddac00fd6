//! Fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use causal_augment::adversarial::{AnnotationRecord, Pos, Segment, TokenAnnotation};
use causal_augment::copa_data::CopaItem;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SUBJECTS: &[&str] = &[
    "The teacher", "Anna", "My brother", "The committee", "Our neighbor", "The boy", "She",
    "He", "They", "The manager", "Dr. Lee",
];
const IC_VERBS: &[&str] = &[
    "blamed", "praised", "thanked", "apologized to", "admired", "scolded", "congratulated",
    "feared", "envied", "trusted",
];
const PLAIN_VERBS: &[&str] = &["walked with", "saw", "carried", "found", "watched", "met"];
const OBJECTS: &[&str] = &[
    "the driver", "her sister", "the manager", "the cat", "his friend", "the old man",
    "the teacher", "the neighbor",
];
const CAUSES: &[&str] = &[
    "he was late again",
    "she had won the prize",
    "it rained all night",
    "the road was closed",
    "they forgot the tickets",
    "the driver ignored the signal",
    "his friend told a lie",
];
const EFFECTS: &[&str] = &[
    "the meeting was cancelled",
    "everyone went home early",
    "the cat hid under the bed",
    "her sister called the police",
];
const BACKWARD: &[&str] = &["because", "since", "when", "if"];
const FORWARD: &[&str] = &["so", "therefore", "thus", "as a result"];
const PADDING: &str = "after the long and tiring meeting at the crowded office downtown";

/// English-looking text with a known mix of accepted and rejected sentences.
pub fn synthetic_corpus(seed: u64, target_bytes: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(target_bytes + 256);
    let mut in_paragraph = 0;
    while out.len() < target_bytes {
        let s = SUBJECTS.choose(&mut rng).unwrap();
        let v = if rng.random_bool(0.6) {
            IC_VERBS.choose(&mut rng).unwrap()
        } else {
            PLAIN_VERBS.choose(&mut rng).unwrap()
        };
        let o = OBJECTS.choose(&mut rng).unwrap();
        let c = CAUSES.choose(&mut rng).unwrap();
        let e = EFFECTS.choose(&mut rng).unwrap();
        let b = BACKWARD.choose(&mut rng).unwrap();
        let f = FORWARD.choose(&mut rng).unwrap();
        let sentence = match rng.random_range(0..8) {
            0 | 1 => format!("{s} {v} {o} {b} {c}."),
            2 => format!("{s} {v} {o}, {f} {e}."),
            3 => format!("{s} {v} {o} in the morning."),
            4 => format!("{s} {v} {o} {PADDING} {b} {c}."),
            5 => format!("{s} {v} {o} {b} {c}, {f} {e}."),
            6 => {
                let mut c = c.to_string();
                c[..1].make_ascii_uppercase();
                format!("{c}, {s} {v} {o} {PADDING} {f} {e} again.")
            }
            _ => format!("{s} {v} {o} {b} {c} and {e}!"),
        };
        out.push_str(&sentence);
        in_paragraph += 1;
        if in_paragraph >= 5 {
            out.push_str("\n\n");
            in_paragraph = 0;
        } else {
            out.push(' ');
        }
    }
    out.push('\n');
    out
}

fn core(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

const ALL_CONNECTIVES: &[&str] = &[
    "as a result", "because", "if", "since", "so", "therefore", "thus", "when",
];

/// Connective occurrences (start index) found by a plain token-window scan.
pub fn connective_positions(sentence: &str) -> Vec<usize> {
    let toks: Vec<String> = sentence.split_whitespace().map(core).collect();
    let mut out = Vec::new();
    for i in 0..toks.len() {
        for c in ALL_CONNECTIVES {
            let words: Vec<&str> = c.split(' ').collect();
            if i + words.len() <= toks.len()
                && words.iter().zip(&toks[i..]).all(|(w, t)| *w == t)
            {
                out.push(i);
            }
        }
    }
    out
}

pub fn ic_verbs() -> HashSet<String> {
    include_str!("../../data/ic_verbs.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

/// Re-check a sentence against the four local filter rules; `None` if it passes.
pub fn independent_reject(sentence: &str, ic: &HashSet<String>) -> Option<&'static str> {
    let hits = connective_positions(sentence);
    if hits.len() > 1 {
        return Some("MULTI_CONNECTIVE");
    }
    let n = sentence.split_whitespace().count();
    if !(5..=22).contains(&n) {
        return Some("LENGTH");
    }
    let i = *hits.first()? as f64;
    if (i - (n as f64 - 1.0) / 2.0).abs() > 2.0 {
        return Some("CENTER");
    }
    if !sentence.split_whitespace().any(|t| ic.contains(&core(t))) {
        return Some("NO_IC_VERB");
    }
    None
}

const SYNONYMS: &[(&str, &[&str])] = &[
    ("teacher", &["instructor", "tutor"]),
    ("driver", &["chauffeur"]),
    ("manager", &["boss", "supervisor"]),
    ("cat", &["kitten"]),
    ("friend", &["pal", "buddy"]),
    ("prize", &["award"]),
    ("tickets", &["passes"]),
    ("road", &["street", "lane"]),
    ("night", &["evening"]),
    ("sister", &["sibling"]),
    ("neighbor", &["neighbour"]),
    ("police", &["cops"]),
    ("meeting", &["session"]),
    ("home", &["house"]),
];

/// Substitution lexicon TSV for the synthetic vocabulary; every entry uses
/// the sense `<lemma>.n.01`.
pub fn substitution_lexicon_tsv() -> String {
    let mut out = String::from("# lemma\tpos\tsense\tcandidate\n");
    for (lemma, cands) in SYNONYMS {
        for c in *cands {
            writeln!(out, "{lemma}\tnoun\t{lemma}.n.01\t{c}").unwrap();
        }
    }
    out
}

/// Annotation records for every segment: known nouns get their sense,
/// everything else is tagged `other`.
pub fn annotations_for(items: &[CopaItem]) -> Vec<AnnotationRecord> {
    let nouns: BTreeMap<&str, ()> = SYNONYMS.iter().map(|(l, _)| (*l, ())).collect();
    let mut out = Vec::new();
    for item in items {
        for seg in Segment::ALL {
            let tokens = seg
                .text(item)
                .split_whitespace()
                .map(|t| {
                    let lemma = core(t);
                    let (pos, sense) = if nouns.contains_key(lemma.as_str()) {
                        (Pos::Noun, format!("{lemma}.n.01"))
                    } else {
                        (Pos::Other, String::new())
                    };
                    TokenAnnotation::new(t, lemma, pos, sense).unwrap()
                })
                .collect();
            out.push(AnnotationRecord {
                item_id: item.id,
                segment: seg,
                tokens,
            });
        }
    }
    out
}

pub fn jsonl<T: serde::Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).unwrap());
        out.push('\n');
    }
    out
}

/// Content words as a set, for overlap checks independent of the library.
pub fn content_set(text: &str, stopwords: &HashSet<String>) -> BTreeSet<String> {
    text.split_whitespace()
        .map(core)
        .filter(|w| w.len() >= 2 && w.chars().all(char::is_alphabetic) && !stopwords.contains(w))
        .collect()
}

pub fn stopwords() -> HashSet<String> {
    include_str!("../../data/stopwords.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Run `bin` with `args`, panicking with its stderr on a non-zero exit.
pub fn run_ok(bin: &str, args: &[&str]) -> String {
    let out = std::process::Command::new(bin)
        .args(args)
        .env_remove("CAUSAL_AUGMENT_BACKEND")
        .output()
        .expect("spawn binary");
    assert!(
        out.status.success(),
        "{args:?} exited with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// extract -> augment -> attack -> eval -> sigtest in `dir` against the stub
/// backend; returns every file in `dir` afterwards.
pub fn run_pipeline(bin: &str, dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    use causal_augment::copa_data::read_items;

    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    std::fs::create_dir_all(dir.join("corpus")).unwrap();
    std::fs::write(dir.join("corpus/a.txt"), synthetic_corpus(1, 40_000)).unwrap();
    std::fs::write(dir.join("corpus/b.txt"), synthetic_corpus(2, 40_000)).unwrap();

    run_ok(bin, &[
        "extract", "--corpus", &p("corpus"), "--out", &p("pairs.jsonl"), "--stats", &p("filter_stats.json"),
    ]);
    run_ok(bin, &[
        "augment", "--pairs", &p("pairs.jsonl"), "--strategy", "overlap", "--out", &p("items.jsonl"),
        "--seed", "7", "--dedup",
    ]);
    run_ok(bin, &[
        "augment", "--pairs", &p("pairs.jsonl"), "--strategy", "lm", "--backend", "stub",
        "--out", &p("lm_items.jsonl"), "--seed", "7",
    ]);

    let items = read_items(&dir.join("items.jsonl")).unwrap();
    std::fs::write(dir.join("annotations.jsonl"), jsonl(&annotations_for(&items))).unwrap();
    std::fs::write(dir.join("lexicon.tsv"), substitution_lexicon_tsv()).unwrap();
    run_ok(bin, &[
        "attack", "--data", &p("items.jsonl"), "--backend", "stub", "--subst-lexicon", &p("lexicon.tsv"),
        "--annotations", &p("annotations.jsonl"), "--out", &p("attack.jsonl"), "--seed", "3",
        "--max-frac", "1.0",
    ]);
    run_ok(bin, &[
        "eval", "--data", &p("items.jsonl"), "--backend", "stub", "--backend", "stub:w=3",
        "--backend", "stub:w=5", "--backend", "stub:w=2,b=-0.5", "--backend", "stub:w=6",
        "--out", &p("eval_a.jsonl"),
    ]);
    run_ok(bin, &[
        "eval", "--data", &p("items.jsonl"), "--backend", "stub:w=1", "--out", &p("eval_b.jsonl"),
    ]);
    run_ok(bin, &[
        "sigtest", "--a", &p("eval_a.jsonl"), "--b", &p("eval_b.jsonl"), "--seed", "5",
        "--iterations", "2000", "--out", &p("sigtest.json"),
    ]);

    let mut files = BTreeMap::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.unwrap();
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            files.insert(rel, std::fs::read(entry.path()).unwrap());
        }
    }
    files
}
