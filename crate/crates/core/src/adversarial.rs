//! Word-substitution attacks on a victim classifier.
//!
//! Each segment of an item (premise or one alternative) gets a substitution
//! graph: one position per content token with same-lemma, same-POS,
//! same-sense replacements from a precomputed lexicon. An ant colony searches
//! the graph for a perturbation that makes the victim pick the wrong choice.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use log::debug;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::copa_data::CopaItem;
use crate::error::{Error, Result};
use crate::eval::predict_scored;
use crate::model_backend::Scorer;
use crate::text::{
    capitalize_first, derive_seed, read_to_string, seeded_rng, token_core,
};

const PHEROMONE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pos {
    Noun,
    Verb,
    Adj,
    Adv,
    Other,
}

impl Pos {
    pub fn is_content(self) -> bool {
        self != Pos::Other
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Pos::Noun => "noun",
            Pos::Verb => "verb",
            Pos::Adj => "adj",
            Pos::Adv => "adv",
            Pos::Other => "other",
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pos {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "noun" | "n" => Ok(Pos::Noun),
            "verb" | "v" => Ok(Pos::Verb),
            "adj" | "a" | "s" => Ok(Pos::Adj),
            "adv" | "r" => Ok(Pos::Adv),
            "other" => Ok(Pos::Other),
            other => Err(Error::Argument(format!("unknown part of speech {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenAnnotation {
    pub token: String,
    pub lemma: String,
    pub pos: Pos,
    #[serde(default)]
    pub sense_id: String,
}

impl TokenAnnotation {
    pub fn new(
        token: impl Into<String>,
        lemma: impl Into<String>,
        pos: Pos,
        sense_id: impl Into<String>,
    ) -> Result<Self> {
        let token = token.into();
        if token.is_empty() {
            return Err(Error::Argument("empty annotation token".into()));
        }
        Ok(TokenAnnotation {
            token,
            lemma: lemma.into(),
            pos,
            sense_id: sense_id.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Premise,
    Choice1,
    Choice2,
}

impl Segment {
    /// Attack order.
    pub const ALL: [Segment; 3] = [Segment::Premise, Segment::Choice1, Segment::Choice2];

    pub fn text(self, item: &CopaItem) -> &str {
        match self {
            Segment::Premise => &item.premise,
            Segment::Choice1 => &item.choice1,
            Segment::Choice2 => &item.choice2,
        }
    }

    pub fn replaced(self, item: &CopaItem, text: String) -> CopaItem {
        let mut out = item.clone();
        match self {
            Segment::Premise => out.premise = text,
            Segment::Choice1 => out.choice1 = text,
            Segment::Choice2 => out.choice2 = text,
        }
        out
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Segment::Premise => "premise",
            Segment::Choice1 => "choice1",
            Segment::Choice2 => "choice2",
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One line of an annotation file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub item_id: u64,
    pub segment: Segment,
    pub tokens: Vec<TokenAnnotation>,
}

pub type Annotations = HashMap<(u64, Segment), Vec<TokenAnnotation>>;

pub fn parse_annotations<R: BufRead>(reader: R) -> Result<Annotations> {
    let mut out = Annotations::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if rec.tokens.iter().any(|t| t.token.is_empty()) {
            return Err(Error::Parse {
                line: n + 1,
                message: "empty annotation token".into(),
            });
        }
        out.insert((rec.item_id, rec.segment), rec.tokens);
    }
    Ok(out)
}

pub fn read_annotations(path: &Path) -> Result<Annotations> {
    parse_annotations(read_to_string(path)?.as_bytes())
}

/// Replacement candidates keyed by (lemma, pos, sense).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SubstitutionLexicon {
    by_sense: HashMap<(String, Pos, String), Vec<String>>,
    by_pos: HashMap<(String, Pos), Vec<String>>,
}

impl SubstitutionLexicon {
    pub fn parse(content: &str) -> Result<Self> {
        let mut lex = SubstitutionLexicon::default();
        for (n, line) in content.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected 4 tab-separated fields, found {}", fields.len()),
                });
            }
            let pos = fields[1].parse().map_err(|e: Error| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            lex.insert(fields[0], pos, fields[2], fields[3]);
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?)
    }

    pub fn insert(&mut self, lemma: &str, pos: Pos, sense_id: &str, candidate: &str) {
        let lemma = lemma.trim().to_lowercase();
        let candidate = candidate.trim().to_string();
        if candidate.is_empty() {
            return;
        }
        let push = |list: &mut Vec<String>| {
            if !list.contains(&candidate) {
                list.push(candidate.clone());
            }
        };
        push(self
            .by_sense
            .entry((lemma.clone(), pos, sense_id.trim().to_string()))
            .or_default());
        push(self.by_pos.entry((lemma, pos)).or_default());
    }

    /// Admissible surface candidates for a token, excluding its own surface.
    ///
    /// Tokens without a sense id only get candidates when `pos_only` is set,
    /// and then from every sense of the lemma.
    pub fn candidates(&self, ann: &TokenAnnotation, pos_only: bool) -> Vec<String> {
        if !ann.pos.is_content() {
            return Vec::new();
        }
        let lemma = ann.lemma.to_lowercase();
        let list = if !ann.sense_id.is_empty() {
            self.by_sense.get(&(lemma, ann.pos, ann.sense_id.clone()))
        } else if pos_only {
            self.by_pos.get(&(lemma, ann.pos))
        } else {
            None
        };
        let own = token_core(&ann.token).to_lowercase();
        list.map(|l| {
            l.iter()
                .filter(|c| c.to_lowercase() != own)
                .cloned()
                .collect()
        })
        .unwrap_or_default()
    }

    /// Whether `to` is listed for the token's (lemma, pos, sense).
    pub fn admits(&self, ann: &TokenAnnotation, to: &str, pos_only: bool) -> bool {
        self.candidates(ann, pos_only)
            .iter()
            .any(|c| c.eq_ignore_ascii_case(to))
    }

    pub fn len(&self) -> usize {
        self.by_sense.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_sense.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphPosition {
    pub token_index: usize,
    pub original: TokenAnnotation,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstitutionGraph {
    pub segment: Segment,
    /// Whitespace tokens of the segment text.
    pub tokens: Vec<String>,
    pub positions: Vec<GraphPosition>,
}

/// Per position: 0 keeps the original token, k picks candidate k-1.
pub type Assignment = Vec<usize>;

/// Substituted `(position, candidate)` pairs, the brute-force ranking key.
type Rank = Vec<(usize, usize)>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub segment: Segment,
    pub token_index: usize,
    pub from: String,
    pub to: String,
}

/// Keep leading/trailing punctuation and an initial capital of `original`.
fn transfer_surface(original: &str, candidate: &str) -> String {
    let core = token_core(original);
    let start = original.find(core).unwrap_or(0);
    let prefix = &original[..start];
    let suffix = &original[start + core.len()..];
    let capital = core.chars().next().is_some_and(char::is_uppercase);
    let word = if capital {
        capitalize_first(candidate)
    } else {
        candidate.to_string()
    };
    format!("{prefix}{word}{suffix}")
}

impl SubstitutionGraph {
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Number of distinct assignments, identity included (saturating).
    pub fn combinations(&self) -> u128 {
        self.positions.iter().fold(1u128, |acc, p| {
            acc.saturating_mul(p.candidates.len() as u128 + 1)
        })
    }

    pub fn identity(&self) -> Assignment {
        vec![0; self.positions.len()]
    }

    pub fn substitutions(&self, assignment: &[usize]) -> Vec<Substitution> {
        self.positions
            .iter()
            .zip(assignment)
            .filter(|(_, &k)| k > 0)
            .map(|(p, &k)| Substitution {
                segment: self.segment,
                token_index: p.token_index,
                from: self.tokens[p.token_index].clone(),
                to: transfer_surface(&self.tokens[p.token_index], &p.candidates[k - 1]),
            })
            .collect()
    }

    pub fn render(&self, assignment: &[usize]) -> String {
        let mut tokens = self.tokens.clone();
        for s in self.substitutions(assignment) {
            tokens[s.token_index] = s.to;
        }
        tokens.join(" ")
    }
}

/// Align annotations with the segment's whitespace tokens and collect positions.
///
/// An annotation token matches a segment token either exactly or after
/// trimming surrounding punctuation from the segment token.
pub fn build_graph(
    item: &CopaItem,
    segment: Segment,
    annotations: &[TokenAnnotation],
    lexicon: &SubstitutionLexicon,
    pos_only: bool,
) -> Result<SubstitutionGraph> {
    let tokens: Vec<String> = segment
        .text(item)
        .split_whitespace()
        .map(str::to_string)
        .collect();
    let misaligned = |index| Error::Alignment {
        index,
        segment_tokens: tokens.len(),
        annotation_tokens: annotations.len(),
    };
    for (i, tok) in tokens.iter().enumerate() {
        let ann = annotations.get(i).ok_or_else(|| misaligned(i))?;
        if ann.token != *tok && ann.token != token_core(tok) {
            return Err(misaligned(i));
        }
    }
    if annotations.len() != tokens.len() {
        return Err(misaligned(tokens.len()));
    }
    let positions = annotations
        .iter()
        .enumerate()
        .filter_map(|(i, ann)| {
            let candidates = lexicon.candidates(ann, pos_only);
            (!candidates.is_empty()).then(|| GraphPosition {
                token_index: i,
                original: ann.clone(),
                candidates,
            })
        })
        .collect();
    Ok(SubstitutionGraph {
        segment,
        tokens,
        positions,
    })
}

/// `P(1 | wrong) - P(1 | gold)` and whether the victim's choice flips.
pub fn evaluate(item: &CopaItem, scorer: &dyn Scorer) -> Result<(f64, bool)> {
    let (pred, scores) = predict_scored(item, scorer)?;
    let gold = scores[item.label.index() as usize - 1];
    let wrong = scores[item.label.other().index() as usize - 1];
    Ok((wrong - gold, pred != item.label))
}

/// Margin of the item with `segment` replaced by `text`; positive favors the wrong choice.
pub fn fitness(item: &CopaItem, segment: Segment, text: &str, scorer: &dyn Scorer) -> Result<f64> {
    Ok(evaluate(&segment.replaced(item, text.to_string()), scorer)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcoParams {
    pub ants: usize,
    pub iterations: usize,
    pub rho: f64,
    pub tau0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub max_substitution_fraction: f64,
    pub seed: u64,
}

impl Default for AcoParams {
    fn default() -> Self {
        AcoParams {
            ants: 20,
            iterations: 50,
            rho: 0.1,
            tau0: 1.0,
            alpha: 1.0,
            beta: 1.0,
            max_substitution_fraction: 0.25,
            seed: 0,
        }
    }
}

impl AcoParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Argument(format!("invalid ACO parameter: {what}")));
        if self.ants == 0 {
            return bad("ants must be positive");
        }
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho must lie in (0, 1)");
        }
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) {
            return bad("tau0 must be positive");
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return bad("exponents must be positive");
        }
        if !(self.max_substitution_fraction > 0.0 && self.max_substitution_fraction <= 1.0) {
            return bad("max substitution fraction must lie in (0, 1]");
        }
        Ok(())
    }

    /// Most substitutions allowed on a graph with `positions` positions.
    pub fn budget(&self, positions: usize) -> usize {
        (self.max_substitution_fraction * positions as f64).ceil() as usize
    }
}

/// Pheromone per (position, choice); choice 0 is the identity edge.
#[derive(Debug, Clone, PartialEq)]
pub struct PheromoneTable {
    tau: Vec<Vec<f64>>,
    floor: f64,
}

impl PheromoneTable {
    pub fn new(graph: &SubstitutionGraph, tau0: f64) -> Self {
        PheromoneTable {
            tau: graph
                .positions
                .iter()
                .map(|p| vec![tau0; p.candidates.len() + 1])
                .collect(),
            floor: tau0 * PHEROMONE_FLOOR,
        }
    }

    pub fn get(&self, position: usize, choice: usize) -> f64 {
        self.tau[position][choice]
    }

    pub fn row(&self, position: usize) -> &[f64] {
        &self.tau[position]
    }

    pub fn evaporate(&mut self, rho: f64) {
        for v in self.tau.iter_mut().flatten() {
            *v = (*v * (1.0 - rho)).max(self.floor);
        }
    }

    /// Add `amount` (clamped to [0, 1]) on every edge of `assignment`.
    pub fn deposit(&mut self, assignment: &[usize], amount: f64) {
        let amount = if amount.is_nan() { 0.0 } else { amount.clamp(0.0, 1.0) };
        for (row, &k) in self.tau.iter_mut().zip(assignment) {
            row[k] += amount;
        }
    }

    pub fn min(&self) -> f64 {
        self.tau.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Sample one ant's path: positions in random order, at most `budget` substitutions.
pub fn sample_assignment<R: Rng>(
    table: &PheromoneTable,
    params: &AcoParams,
    budget: usize,
    rng: &mut R,
) -> Assignment {
    let n = table.tau.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out = vec![0; n];
    let mut used = 0;
    for pos in order {
        if used >= budget {
            break;
        }
        // Heuristic desirability is uniform, so the beta term is 1.
        let weights: Vec<f64> = table.row(pos).iter().map(|t| t.powf(params.alpha)).collect();
        let total: f64 = weights.iter().sum();
        let mut r = rng.random::<f64>() * total;
        let mut pick = weights.len() - 1;
        for (k, w) in weights.iter().enumerate() {
            if r < *w {
                pick = k;
                break;
            }
            r -= w;
        }
        out[pos] = pick;
        if pick > 0 {
            used += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub item: CopaItem,
    pub perturbed_item: CopaItem,
    pub substitutions: Vec<Substitution>,
    pub success: bool,
    /// False when the victim already misclassifies the original item.
    pub attempted: bool,
    pub original_margin: f64,
    pub final_margin: f64,
    pub iterations_used: usize,
}

impl AttackResult {
    fn not_attempted(item: &CopaItem, margin: f64) -> Self {
        AttackResult {
            item: item.clone(),
            perturbed_item: item.clone(),
            substitutions: Vec::new(),
            success: false,
            attempted: false,
            original_margin: margin,
            final_margin: margin,
            iterations_used: 0,
        }
    }

    /// Re-score both versions and check the flip criterion.
    pub fn verify(&self, scorer: &dyn Scorer) -> Result<bool> {
        let (_, orig_flip) = evaluate(&self.item, scorer)?;
        let (_, pert_flip) = evaluate(&self.perturbed_item, scorer)?;
        Ok(self.success == (!orig_flip && pert_flip))
    }
}

/// Memoised victim evaluations of one segment's assignments.
struct Evaluator<'a> {
    item: &'a CopaItem,
    graph: &'a SubstitutionGraph,
    scorer: &'a dyn Scorer,
    cache: HashMap<Assignment, (f64, bool)>,
}

impl<'a> Evaluator<'a> {
    fn new(item: &'a CopaItem, graph: &'a SubstitutionGraph, scorer: &'a dyn Scorer) -> Self {
        Evaluator {
            item,
            graph,
            scorer,
            cache: HashMap::new(),
        }
    }

    fn eval(&mut self, a: &Assignment) -> Result<(f64, bool)> {
        if let Some(v) = self.cache.get(a) {
            return Ok(*v);
        }
        let text = self.graph.render(a);
        let v = evaluate(&self.graph.segment.replaced(self.item, text), self.scorer)?;
        self.cache.insert(a.clone(), v);
        Ok(v)
    }

    fn result(&self, a: &Assignment, margin: f64, original: f64, success: bool, iters: usize) -> AttackResult {
        let text = self.graph.render(a);
        AttackResult {
            item: self.item.clone(),
            perturbed_item: self.graph.segment.replaced(self.item, text),
            substitutions: self.graph.substitutions(a),
            success,
            attempted: true,
            original_margin: original,
            final_margin: margin,
            iterations_used: iters,
        }
    }
}

/// Ant colony search over one segment's graph; stops at the first flip.
pub fn aco_search(
    item: &CopaItem,
    graph: &SubstitutionGraph,
    scorer: &dyn Scorer,
    params: &AcoParams,
) -> Result<AttackResult> {
    params.validate()?;
    let mut ev = Evaluator::new(item, graph, scorer);
    let identity = graph.identity();
    let (original, flipped) = ev.eval(&identity)?;
    if flipped {
        return Ok(AttackResult::not_attempted(item, original));
    }
    if graph.is_empty() {
        return Ok(ev.result(&identity, original, original, false, 0));
    }
    let budget = params.budget(graph.positions.len());
    let mut table = PheromoneTable::new(graph, params.tau0);
    let mut rng = seeded_rng(params.seed);
    let mut best = (identity, original);

    for iter in 1..=params.iterations {
        let mut scored = Vec::with_capacity(params.ants);
        for _ in 0..params.ants {
            let a = sample_assignment(&table, params, budget, &mut rng);
            let (margin, flip) = ev.eval(&a)?;
            if flip {
                debug!("item {}: flip in iteration {iter}", item.id);
                return Ok(ev.result(&a, margin, original, true, iter));
            }
            scored.push((a, margin));
        }
        let lo = scored.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        let hi = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let (winner, margin) = scored
            .iter()
            .fold(&scored[0], |b, s| if s.1 > b.1 { s } else { b })
            .clone();
        let amount = if hi > lo { (margin - lo) / (hi - lo) } else { 0.0 };
        table.evaporate(params.rho);
        table.deposit(&winner, amount);
        if margin > best.1 {
            best = (winner, margin);
        }
    }
    Ok(ev.result(&best.0, best.1, original, false, params.iterations))
}

/// Exhaustive search; the flip with the fewest substitutions wins, ties going
/// to the lexicographically smallest (position, candidate) list.
pub fn brute_force_search(
    item: &CopaItem,
    graph: &SubstitutionGraph,
    scorer: &dyn Scorer,
    max_combinations: u128,
) -> Result<AttackResult> {
    let combos = graph.combinations();
    if combos > max_combinations {
        return Err(Error::Refused(format!(
            "{combos} combinations exceed the bound of {max_combinations}"
        )));
    }
    let mut ev = Evaluator::new(item, graph, scorer);
    let identity = graph.identity();
    let (original, flipped) = ev.eval(&identity)?;
    if flipped {
        return Ok(AttackResult::not_attempted(item, original));
    }
    let radices: Vec<usize> = graph.positions.iter().map(|p| p.candidates.len() + 1).collect();
    let mut a = identity.clone();
    let mut best_flip: Option<(Rank, Assignment, f64)> = None;
    let mut best_margin = (identity, original);
    loop {
        let (margin, flip) = ev.eval(&a)?;
        if flip {
            let key: Vec<(usize, usize)> = a
                .iter()
                .enumerate()
                .filter(|(_, &k)| k > 0)
                .map(|(i, &k)| (i, k))
                .collect();
            let better = match &best_flip {
                None => true,
                Some((k, _, _)) => (key.len(), &key) < (k.len(), k),
            };
            if better {
                best_flip = Some((key, a.clone(), margin));
            }
        } else if margin > best_margin.1 {
            best_margin = (a.clone(), margin);
        }
        // Odometer increment, last position fastest.
        let mut i = a.len();
        loop {
            if i == 0 {
                return Ok(match best_flip {
                    Some((_, a, m)) => ev.result(&a, m, original, true, 1),
                    None => ev.result(&best_margin.0, best_margin.1, original, false, 1),
                });
            }
            i -= 1;
            a[i] += 1;
            if a[i] < radices[i] {
                break;
            }
            a[i] = 0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub results: Vec<AttackResult>,
    pub attempted: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// (item id, message) for items whose attack failed with an error.
    pub errors: Vec<(u64, String)>,
}

#[derive(Debug, Clone)]
pub struct AttackConfig<'a> {
    pub lexicon: &'a SubstitutionLexicon,
    pub annotations: &'a Annotations,
    pub params: AcoParams,
    pub pos_only: bool,
}

/// Attack premise, then choice 1, then choice 2, keeping the first success.
pub fn attack_item(item: &CopaItem, scorer: &dyn Scorer, config: &AttackConfig) -> Result<AttackResult> {
    let (original, flipped) = evaluate(item, scorer)?;
    if flipped {
        return Ok(AttackResult::not_attempted(item, original));
    }
    let item_seed = derive_seed(config.params.seed, &format!("item:{}", item.id));
    let mut best: Option<AttackResult> = None;
    for segment in Segment::ALL {
        let anns = config
            .annotations
            .get(&(item.id, segment))
            .ok_or_else(|| Error::Field {
                item: item.id.to_string(),
                field: format!("annotations.{segment}"),
            })?;
        let graph = build_graph(item, segment, anns, config.lexicon, config.pos_only)?;
        let params = AcoParams {
            seed: derive_seed(item_seed, segment.as_str()),
            ..config.params
        };
        let result = aco_search(item, &graph, scorer, &params)?;
        if result.success {
            return Ok(result);
        }
        if best.as_ref().is_none_or(|b| result.final_margin > b.final_margin) {
            best = Some(result);
        }
    }
    Ok(best.expect("three segments were searched"))
}

/// Attack every item in parallel; results keep input order.
pub fn attack_dataset(items: &[CopaItem], scorer: &dyn Scorer, config: &AttackConfig) -> Result<AttackSummary> {
    config.params.validate()?;
    let outcomes: Vec<Result<AttackResult>> = items
        .par_iter()
        .map(|item| attack_item(item, scorer, config))
        .collect();
    let mut results = Vec::new();
    let mut errors = Vec::new();
    for (item, outcome) in items.iter().zip(outcomes) {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => errors.push((item.id, e.to_string())),
        }
    }
    let attempted = results.iter().filter(|r| r.attempted).count();
    let successes = results.iter().filter(|r| r.success).count();
    let success_rate = if attempted == 0 {
        0.0
    } else {
        successes as f64 / attempted as f64
    };
    Ok(AttackSummary {
        results,
        attempted,
        successes,
        success_rate,
        errors,
    })
}

/// Successful perturbed items as new dataset items with fresh ids starting
/// at `first_id`; `source_item` names the attacked item.
pub fn perturbed_items(results: &[AttackResult], first_id: u64) -> Vec<CopaItem> {
    results
        .iter()
        .filter(|r| r.success)
        .zip(first_id..)
        .map(|(r, id)| {
            let mut item = r.perturbed_item.clone();
            item.id = id;
            item.extra
                .insert("source_item".into(), Value::from(r.item.id));
            item
        })
        .collect()
}
