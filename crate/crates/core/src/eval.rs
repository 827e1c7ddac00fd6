//! Prediction, accuracy, seed aggregation and the approximate randomization
//! significance test.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copa_data::{conv, CopaItem, Label};
use crate::error::{Error, Result};
use crate::model_backend::Scorer;
use crate::text::{derive_seed, seeded_rng};

/// Items per scoring request in [`accuracy`].
const SCORE_CHUNK: usize = 128;
/// Trimmed on each side by [`aggregate_seeds`].
const TRIM: usize = 2;
pub const MAX_EXACT_ITEMS: usize = 20;
const AR_EPSILON: f64 = 1e-12;
const AR_CHUNK: u64 = 4096;

/// The two input sequences of an item, choice 1 first.
pub fn item_sequences(item: &CopaItem) -> Result<[String; 2]> {
    Ok([
        conv(&item.premise, &item.choice1, item.question)?,
        conv(&item.premise, &item.choice2, item.question)?,
    ])
}

fn pick(p1_first: f64, p1_second: f64) -> Label {
    if p1_second > p1_first {
        Label::Two
    } else {
        Label::One
    }
}

/// Choice with the higher `P(1 | conv(premise, choice, question))`; ties go to choice 1.
pub fn predict(item: &CopaItem, scorer: &dyn Scorer) -> Result<Label> {
    Ok(predict_scored(item, scorer)?.0)
}

/// Prediction together with both choices' `P(1)`.
pub fn predict_scored(item: &CopaItem, scorer: &dyn Scorer) -> Result<(Label, [f64; 2])> {
    let seqs = item_sequences(item)?;
    let probs = scorer.score(&seqs)?;
    crate::model_backend::check_probs(2, &probs)?;
    let scores = [probs[0][1], probs[1][1]];
    Ok((pick(scores[0], scores[1]), scores))
}

/// Fraction of items predicted correctly and the per-item correctness vector.
pub fn accuracy(items: &[CopaItem], scorer: &dyn Scorer) -> Result<(f64, Vec<bool>)> {
    if items.is_empty() {
        return Err(Error::Argument("accuracy over an empty dataset".into()));
    }
    let chunks: Vec<Vec<bool>> = items
        .par_chunks(SCORE_CHUNK)
        .map(|chunk| -> Result<Vec<bool>> {
            let mut seqs = Vec::with_capacity(chunk.len() * 2);
            for item in chunk {
                seqs.extend(item_sequences(item)?);
            }
            let probs = scorer.score(&seqs)?;
            crate::model_backend::check_probs(seqs.len(), &probs)?;
            Ok(chunk
                .iter()
                .zip(probs.chunks(2))
                .map(|(item, p)| pick(p[0][1], p[1][1]) == item.label)
                .collect())
        })
        .collect::<Result<_>>()?;
    let correct: Vec<bool> = chunks.into_iter().flatten().collect();
    let acc = correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64;
    Ok((acc, correct))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

/// Drop the two lowest and two highest values, then summarize the rest.
/// `std` is the sample standard deviation, 0 when a single value remains.
pub fn aggregate_seeds(values: &[f64]) -> Result<Aggregate> {
    if values.len() < 2 * TRIM + 1 {
        return Err(Error::Argument(format!(
            "seed aggregation needs at least {} values, got {}",
            2 * TRIM + 1,
            values.len()
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let kept = &sorted[TRIM..sorted.len() - TRIM];
    let n = kept.len() as f64;
    let mean = kept.iter().sum::<f64>() / n;
    let std = if kept.len() > 1 {
        (kept.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(Aggregate {
        min: kept[0],
        max: kept[kept.len() - 1],
        mean,
        std,
    })
}

// ---------------------------------------------------------------------------
// Approximate randomization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArOutcome {
    /// |mean(a) - mean(b)| on the unshuffled vectors.
    pub observed: f64,
    pub p_value: f64,
    /// Monte Carlo iterations, or the number of enumerated swap patterns.
    pub samples: u64,
    pub exact: bool,
}

fn check_pair(a: &[bool], b: &[bool]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "correctness vectors differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Argument("correctness vectors are empty".into()));
    }
    Ok(())
}

fn mean_gap(a: &[bool], b: &[bool]) -> f64 {
    let n = a.len() as f64;
    let sa = a.iter().filter(|&&x| x).count() as f64;
    let sb = b.iter().filter(|&&x| x).count() as f64;
    (sa / n - sb / n).abs()
}

/// Bit masks of the items where only `a` is correct and where only `b` is.
/// Swapping a concordant item changes nothing, so only these matter.
struct Discordance {
    a_only: Vec<u64>,
    b_only: Vec<u64>,
    a_count: i64,
    b_count: i64,
}

impl Discordance {
    fn new(a: &[bool], b: &[bool]) -> Self {
        let words = a.len().div_ceil(64);
        let mut a_only = vec![0u64; words];
        let mut b_only = vec![0u64; words];
        for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
            if x && !y {
                a_only[i / 64] |= 1 << (i % 64);
            } else if y && !x {
                b_only[i / 64] |= 1 << (i % 64);
            }
        }
        let ones = |v: &[u64]| v.iter().map(|w| w.count_ones() as i64).sum::<i64>();
        Discordance {
            a_count: ones(&a_only),
            b_count: ones(&b_only),
            a_only,
            b_only,
        }
    }

    /// Difference of correct counts (a - b) after swapping the items in `swap`.
    fn shuffled_gap(&self, swap: &[u64]) -> i64 {
        let mut sa = 0i64;
        let mut sb = 0i64;
        for ((s, a), b) in swap.iter().zip(&self.a_only).zip(&self.b_only) {
            sa += (s & a).count_ones() as i64;
            sb += (s & b).count_ones() as i64;
        }
        (self.a_count - 2 * sa) - (self.b_count - 2 * sb)
    }
}

/// Monte Carlo approximate randomization: each of `iterations` rounds swaps
/// every item's pair of outcomes with probability 1/2.
/// Returns `p = (c + 1) / (iterations + 1)`.
pub fn ar_test(a: &[bool], b: &[bool], iterations: u64, seed: u64) -> Result<ArOutcome> {
    check_pair(a, b)?;
    if iterations == 0 {
        return Err(Error::Argument("ar_test needs at least one iteration".into()));
    }
    let n = a.len();
    let observed = mean_gap(a, b);
    let disc = Discordance::new(a, b);
    let words = n.div_ceil(64);
    let tail_mask = if n.is_multiple_of(64) { u64::MAX } else { (1u64 << (n % 64)) - 1 };
    let chunks = iterations.div_ceil(AR_CHUNK);
    let count: u64 = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = seeded_rng(derive_seed(seed, &format!("ar-chunk-{chunk}")));
            let todo = AR_CHUNK.min(iterations - chunk * AR_CHUNK);
            let mut swap = vec![0u64; words];
            let mut hits = 0u64;
            for _ in 0..todo {
                for w in swap.iter_mut() {
                    *w = rng.random();
                }
                if let Some(last) = swap.last_mut() {
                    *last &= tail_mask;
                }
                let gap = disc.shuffled_gap(&swap).unsigned_abs() as f64 / n as f64;
                if gap >= observed - AR_EPSILON {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    Ok(ArOutcome {
        observed,
        p_value: (count + 1) as f64 / (iterations + 1) as f64,
        samples: iterations,
        exact: false,
    })
}

/// Exact approximate randomization: enumerate all `2^n` swap patterns and
/// return the fraction whose gap reaches the observed one. `n <= 20`.
pub fn ar_test_exact(a: &[bool], b: &[bool]) -> Result<ArOutcome> {
    check_pair(a, b)?;
    let n = a.len();
    if n > MAX_EXACT_ITEMS {
        return Err(Error::Argument(format!(
            "exact mode enumerates 2^n patterns; n = {n} exceeds {MAX_EXACT_ITEMS}"
        )));
    }
    let observed = mean_gap(a, b);
    let disc = Discordance::new(a, b);
    let total = 1u64 << n;
    let count = (0..total)
        .filter(|&pattern| {
            let gap = disc.shuffled_gap(&[pattern]).unsigned_abs() as f64 / n as f64;
            gap >= observed - AR_EPSILON
        })
        .count() as u64;
    Ok(ArOutcome {
        observed,
        p_value: count as f64 / total as f64,
        samples: total,
        exact: true,
    })
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub backend: String,
    pub accuracy: f64,
    pub correct: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_seed: Vec<SeedResult>,
    pub aggregate: Option<Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ReportRecord {
    Seed {
        seed: u64,
        backend: String,
        accuracy: f64,
        correct: String,
    },
    Aggregate {
        seeds: usize,
        min: f64,
        max: f64,
        mean: f64,
        std: f64,
    },
}

pub fn bits_to_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn bits_from_str(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '1' => Ok(true),
            '0' => Ok(false),
            other => Err(Error::Argument(format!("bad correctness bit {other:?}"))),
        })
        .collect()
}

impl EvalReport {
    /// Aggregation needs at least five seeds; with fewer, `aggregate` is `None`.
    pub fn from_seeds(per_seed: Vec<SeedResult>) -> Self {
        let accs: Vec<f64> = per_seed.iter().map(|s| s.accuracy).collect();
        let aggregate = aggregate_seeds(&accs).ok();
        EvalReport {
            per_seed,
            aggregate,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut records: Vec<ReportRecord> = self
            .per_seed
            .iter()
            .map(|s| ReportRecord::Seed {
                seed: s.seed,
                backend: s.backend.clone(),
                accuracy: s.accuracy,
                correct: bits_to_string(&s.correct),
            })
            .collect();
        if let Some(a) = self.aggregate {
            records.push(ReportRecord::Aggregate {
                seeds: self.per_seed.len(),
                min: a.min,
                max: a.max,
                mean: a.mean,
                std: a.std,
            });
        }
        crate::copa_data::write_jsonl(path, &records)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut per_seed = Vec::new();
        let mut aggregate = None;
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: idx + 1,
                message,
            };
            let rec: ReportRecord =
                serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            match rec {
                ReportRecord::Seed {
                    seed,
                    backend,
                    accuracy,
                    correct,
                } => per_seed.push(SeedResult {
                    seed,
                    backend,
                    accuracy,
                    correct: bits_from_str(&correct).map_err(|e| parse_err(e.to_string()))?,
                }),
                ReportRecord::Aggregate {
                    min, max, mean, std, ..
                } => aggregate = Some(Aggregate { min, max, mean, std }),
            }
        }
        Ok(EvalReport {
            per_seed,
            aggregate,
        })
    }
}
