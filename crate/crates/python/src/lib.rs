//! Python bindings for the causal-augment toolkit.

use std::collections::BTreeMap;
use std::path::PathBuf;

use causal_augment::copa_data::{self, CopaItem, Label, Relation};
use causal_augment::corpus_filter::{
    match_connectives as core_match, CausalPair, ConnectiveSet, ConnectiveSpec, Direction,
    Extractor, SentenceOutcome, SourceId,
};
use causal_augment::distractor::{self, AugmentOptions, Strategy};
use causal_augment::eval;
use causal_augment::model_backend::{Generator, Scorer, StubModel};
use causal_augment::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Transport { .. } | Error::Protocol(_) | Error::Validator(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_relation(s: &str) -> PyResult<Relation> {
    s.parse().map_err(py_err)
}

/// One COPA question.
#[pyclass(name = "CopaItem", module = "causal_augment_py", skip_from_py_object)]
#[derive(Clone)]
struct PyCopaItem {
    #[pyo3(get, set)]
    id: u64,
    #[pyo3(get, set)]
    premise: String,
    #[pyo3(get, set)]
    choice1: String,
    #[pyo3(get, set)]
    choice2: String,
    /// "cause" or "effect".
    #[pyo3(get, set)]
    question: String,
    /// 1 or 2.
    #[pyo3(get, set)]
    label: u8,
}

impl PyCopaItem {
    fn from_core(item: &CopaItem) -> Self {
        PyCopaItem {
            id: item.id,
            premise: item.premise.clone(),
            choice1: item.choice1.clone(),
            choice2: item.choice2.clone(),
            question: item.question.to_string(),
            label: item.label.index(),
        }
    }

    fn to_core(&self) -> PyResult<CopaItem> {
        let label = Label::try_from(self.label)
            .map_err(|_| PyValueError::new_err(format!("label must be 1 or 2, got {}", self.label)))?;
        Ok(CopaItem::new(
            self.id,
            self.premise.clone(),
            self.choice1.clone(),
            self.choice2.clone(),
            parse_relation(&self.question)?,
            label,
        ))
    }
}

#[pymethods]
impl PyCopaItem {
    #[new]
    fn new(id: u64, premise: String, choice1: String, choice2: String, question: String, label: u8) -> PyResult<Self> {
        let item = PyCopaItem { id, premise, choice1, choice2, question, label };
        item.to_core()?;
        Ok(item)
    }

    /// The two classifier inputs, choice 1 first.
    fn sequences(&self) -> PyResult<(String, String)> {
        let [a, b] = eval::item_sequences(&self.to_core()?).map_err(py_err)?;
        Ok((a, b))
    }

    fn __repr__(&self) -> String {
        format!(
            "CopaItem(id={}, premise={:?}, choice1={:?}, choice2={:?}, question={:?}, label={})",
            self.id, self.premise, self.choice1, self.choice2, self.question, self.label
        )
    }

    fn __eq__(&self, other: PyRef<'_, PyCopaItem>) -> bool {
        self.id == other.id
            && self.premise == other.premise
            && self.choice1 == other.choice1
            && self.choice2 == other.choice2
            && self.question == other.question
            && self.label == other.label
    }
}

fn core_items(items: &[PyRef<'_, PyCopaItem>]) -> PyResult<Vec<CopaItem>> {
    items.iter().map(|i| i.to_core()).collect()
}

/// Deterministic scorer and generator used for tests.
#[pyclass(name = "StubModel", module = "causal_augment_py")]
struct PyStubModel {
    inner: StubModel,
}

#[pymethods]
impl PyStubModel {
    #[new]
    #[pyo3(signature = (w = 4.0, b = -1.0))]
    fn new(w: f64, b: f64) -> Self {
        PyStubModel { inner: StubModel::with_params(w, b) }
    }

    /// `[p0, p1]` for each sequence.
    fn score(&self, sequences: Vec<String>) -> PyResult<Vec<(f64, f64)>> {
        Ok(self
            .inner
            .score(&sequences)
            .map_err(py_err)?
            .into_iter()
            .map(|[p0, p1]| (p0, p1))
            .collect())
    }

    #[pyo3(signature = (prompt, max_new_words = 20, seed = 0))]
    fn generate(&self, prompt: &str, max_new_words: usize, seed: u64) -> PyResult<String> {
        self.inner.generate(prompt, max_new_words, seed).map_err(py_err)
    }

    /// Register a fixed continuation for `prompt`.
    fn add_canned(&mut self, prompt: &str, continuation: String) {
        self.inner.canned.insert(prompt, continuation);
    }

    /// Predicted choice (1 or 2) for an item.
    fn predict(&self, item: PyRef<'_, PyCopaItem>) -> PyResult<u8> {
        Ok(eval::predict(&item.to_core()?, &self.inner).map_err(py_err)?.index())
    }

    /// Accuracy and per-item correctness.
    fn accuracy(&self, items: Vec<PyRef<'_, PyCopaItem>>) -> PyResult<(f64, Vec<bool>)> {
        eval::accuracy(&core_items(&items)?, &self.inner).map_err(py_err)
    }
}

/// Classifier input for a premise/choice pair under `relation` ("cause" or "effect").
#[pyfunction]
fn conv(premise: &str, choice: &str, relation: &str) -> PyResult<String> {
    copa_data::conv(premise, choice, parse_relation(relation)?).map_err(py_err)
}

/// Items from the original XML distribution.
#[pyfunction]
fn import_xml(xml: &str) -> PyResult<Vec<PyCopaItem>> {
    Ok(copa_data::import_xml(xml)
        .map_err(py_err)?
        .iter()
        .map(PyCopaItem::from_core)
        .collect())
}

#[pyfunction]
fn read_items(path: PathBuf) -> PyResult<Vec<PyCopaItem>> {
    Ok(copa_data::read_items(&path)
        .map_err(py_err)?
        .iter()
        .map(PyCopaItem::from_core)
        .collect())
}

#[pyfunction]
fn write_items(path: PathBuf, items: Vec<PyRef<'_, PyCopaItem>>) -> PyResult<()> {
    copa_data::write_items(&path, &core_items(&items)?).map_err(py_err)
}

/// Word-count statistics: `{row: {min, max, mean, median, std}}`.
#[pyfunction]
fn dataset_stats(items: Vec<PyRef<'_, PyCopaItem>>) -> PyResult<BTreeMap<String, BTreeMap<String, f64>>> {
    let s = copa_data::dataset_stats(&core_items(&items)?).map_err(py_err)?;
    Ok([
        ("premise", s.premise),
        ("choice1", s.choice1),
        ("choice2", s.choice2),
        ("total", s.total),
        ("premise_ratio", s.premise_ratio),
    ]
    .into_iter()
    .map(|(name, f)| {
        let row = [("min", f.min), ("max", f.max), ("mean", f.mean), ("median", f.median), ("std", f.std)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        (name.to_string(), row)
    })
    .collect())
}

/// `(surface, direction, token_index)` for every connective in the sentence.
#[pyfunction]
fn match_connectives(sentence: &str) -> Vec<(String, String, usize)> {
    core_match(sentence, ConnectiveSet::default().specs())
        .into_iter()
        .map(|m| {
            let dir = match m.spec.direction {
                Direction::Backward => "backward",
                Direction::Forward => "forward",
            };
            (m.spec.surface, dir.to_string(), m.token_index)
        })
        .collect()
}

/// Run the local filter on one sentence.
///
/// Returns `None` without a connective, `("rejected", code)` or
/// `("accepted", effect, cause)` packed as a dict.
#[pyfunction]
fn filter_sentence(sentence: &str) -> Option<BTreeMap<String, String>> {
    let extractor = Extractor::default();
    let s = causal_augment::corpus_filter::Sentence {
        text: sentence.to_string(),
        source: SourceId::new("python", 0),
    };
    let mut out = BTreeMap::new();
    match extractor.process_sentence(&s) {
        SentenceOutcome::NoConnective => return None,
        SentenceOutcome::Rejected(r) => {
            out.insert("status".into(), "rejected".into());
            out.insert("code".into(), serde_code(&r.code));
            out.insert("detail".into(), r.detail);
        }
        SentenceOutcome::Accepted(p) => {
            out.insert("status".into(), "accepted".into());
            out.insert("effect".into(), p.effect_clause);
            out.insert("cause".into(), p.cause_clause);
            out.insert("connective".into(), p.connective.surface);
        }
    }
    Some(out)
}

fn serde_code<T: serde::Serialize>(code: &T) -> String {
    serde_json::to_value(code)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

/// `(effect, cause, source_id)`.
type PairTuple = (String, String, String);

/// Extract `(effect, cause, source_id)` pairs from raw text, plus filter counts.
#[pyfunction]
#[pyo3(signature = (text, source_name = "text"))]
fn extract_text(text: &str, source_name: &str) -> PyResult<(Vec<PairTuple>, BTreeMap<String, usize>)> {
    let ex = Extractor::default()
        .extract_reader(text.as_bytes(), source_name)
        .map_err(py_err)?;
    let pairs = ex
        .pairs
        .into_iter()
        .map(|p| (p.effect_clause, p.cause_clause, p.source_id.to_string()))
        .collect();
    let mut stats = BTreeMap::from([
        ("sentences".to_string(), ex.stats.sentences),
        ("with_connective".to_string(), ex.stats.with_connective),
        ("accepted".to_string(), ex.stats.accepted),
    ]);
    for (code, n) in ex.stats.rejected {
        stats.insert(serde_code(&code), n);
    }
    Ok((pairs, stats))
}

/// Build COPA items from `(effect, cause, source_id)` pairs.
///
/// `strategy` is "random", "overlap" or "lm"; the last one needs `generator`.
#[pyfunction]
#[pyo3(signature = (pairs, strategy, seed, generator = None))]
fn augment_pairs(
    pairs: Vec<PairTuple>,
    strategy: &str,
    seed: u64,
    generator: Option<PyRef<'_, PyStubModel>>,
) -> PyResult<Vec<PyCopaItem>> {
    let strategy: Strategy = strategy.parse().map_err(py_err)?;
    let spec = ConnectiveSpec::new("because", Direction::Backward).map_err(py_err)?;
    let pairs = pairs
        .into_iter()
        .map(|(effect, cause, source)| {
            Ok(CausalPair {
                effect_clause: effect,
                cause_clause: cause,
                connective: spec.clone(),
                source_id: source.parse().map_err(py_err)?,
                original_sentence: String::new(),
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let opts = AugmentOptions { strategy, seed, ..AugmentOptions::default() };
    let gen = generator.as_ref().map(|g| &g.inner as &dyn Generator);
    let out = distractor::augment(&pairs, &opts, gen).map_err(py_err)?;
    Ok(out.items.iter().map(|a| PyCopaItem::from_core(&a.item)).collect())
}

/// Trimmed aggregate of per-seed accuracies (at least five values).
#[pyfunction]
fn aggregate_seeds(values: Vec<f64>) -> PyResult<BTreeMap<String, f64>> {
    let a = eval::aggregate_seeds(&values).map_err(py_err)?;
    Ok(BTreeMap::from([
        ("min".to_string(), a.min),
        ("max".to_string(), a.max),
        ("mean".to_string(), a.mean),
        ("std".to_string(), a.std),
    ]))
}

fn outcome_map(o: eval::ArOutcome) -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("observed".to_string(), o.observed),
        ("p_value".to_string(), o.p_value),
        ("samples".to_string(), o.samples as f64),
    ])
}

/// Monte Carlo approximate randomization test on paired correctness vectors.
#[pyfunction]
#[pyo3(signature = (a, b, iterations = 10_000, seed = 0))]
fn ar_test(a: Vec<bool>, b: Vec<bool>, iterations: u64, seed: u64) -> PyResult<BTreeMap<String, f64>> {
    Ok(outcome_map(eval::ar_test(&a, &b, iterations, seed).map_err(py_err)?))
}

/// Exact approximate randomization test (at most 20 items).
#[pyfunction]
fn ar_test_exact(a: Vec<bool>, b: Vec<bool>) -> PyResult<BTreeMap<String, f64>> {
    Ok(outcome_map(eval::ar_test_exact(&a, &b).map_err(py_err)?))
}

#[pymodule]
fn causal_augment_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyCopaItem>()?;
    m.add_class::<PyStubModel>()?;
    m.add_function(wrap_pyfunction!(conv, m)?)?;
    m.add_function(wrap_pyfunction!(import_xml, m)?)?;
    m.add_function(wrap_pyfunction!(read_items, m)?)?;
    m.add_function(wrap_pyfunction!(write_items, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_stats, m)?)?;
    m.add_function(wrap_pyfunction!(match_connectives, m)?)?;
    m.add_function(wrap_pyfunction!(filter_sentence, m)?)?;
    m.add_function(wrap_pyfunction!(extract_text, m)?)?;
    m.add_function(wrap_pyfunction!(augment_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_seeds, m)?)?;
    m.add_function(wrap_pyfunction!(ar_test, m)?)?;
    m.add_function(wrap_pyfunction!(ar_test_exact, m)?)?;
    Ok(())
}
