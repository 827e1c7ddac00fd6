//! COPA item model, dataset I/O and the premise/choice sequence builder.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::corpus_filter::ConnectiveSet;
use crate::error::{Error, Result};
use crate::text::{is_sentence_terminator, lowercase_first, word_count};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Cause,
    Effect,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Cause => "cause",
            Relation::Effect => "effect",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cause" => Ok(Relation::Cause),
            "effect" => Ok(Relation::Effect),
            other => Err(Error::Argument(format!("unknown relation {other:?}"))),
        }
    }
}

/// Which of the two alternatives is meant. Serialized as the integer 1 or 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    One,
    Two,
}

impl Label {
    pub fn other(self) -> Label {
        match self {
            Label::One => Label::Two,
            Label::Two => Label::One,
        }
    }

    pub fn index(self) -> u8 {
        self.into()
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Label::One),
            2 => Ok(Label::Two),
            other => Err(format!("label must be 1 or 2, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::One => 1,
            Label::Two => 2,
        }
    }
}

/// One premise with two alternatives, the asked relation and the gold label.
///
/// Keys that are not part of the item model are kept in `extra` and written
/// back unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopaItem {
    pub id: u64,
    pub premise: String,
    pub choice1: String,
    pub choice2: String,
    pub question: Relation,
    pub label: Label,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl CopaItem {
    pub fn new(
        id: u64,
        premise: impl Into<String>,
        choice1: impl Into<String>,
        choice2: impl Into<String>,
        question: Relation,
        label: Label,
    ) -> Self {
        CopaItem {
            id,
            premise: premise.into(),
            choice1: choice1.into(),
            choice2: choice2.into(),
            question,
            label,
            extra: Map::new(),
        }
    }

    pub fn choice(&self, which: Label) -> &str {
        match which {
            Label::One => &self.choice1,
            Label::Two => &self.choice2,
        }
    }

    pub fn gold_choice(&self) -> &str {
        self.choice(self.label)
    }

    pub fn wrong_choice(&self) -> &str {
        self.choice(self.label.other())
    }

    /// Check the item invariants: non-empty texts that hold no causal connective.
    pub fn validate(&self, connectives: &ConnectiveSet) -> Result<()> {
        for (field, text) in [
            ("premise", &self.premise),
            ("choice1", &self.choice1),
            ("choice2", &self.choice2),
        ] {
            if text.trim().is_empty() {
                return Err(Error::Field {
                    item: self.id.to_string(),
                    field: field.to_string(),
                });
            }
            if let Some(m) = connectives.find_all(text).first() {
                return Err(Error::Argument(format!(
                    "item {}: {field} contains connective {:?}",
                    self.id, m.spec.surface
                )));
            }
        }
        Ok(())
    }
}

/// Build the classifier input for a premise/choice pair.
///
/// For `Cause` the premise comes first, for `Effect` the choice does, joined
/// by `" because "`. The first clause loses one terminal punctuation mark, the
/// second loses all of its terminal punctuation and has its first letter
/// lowercased, and the result ends with a single period.
pub fn conv(premise: &str, choice: &str, relation: Relation) -> Result<String> {
    conv_with_case(premise, choice, relation, false)
}

/// Like [`conv`], but `keep_second_case` leaves the second clause's first
/// letter untouched (e.g. when it starts with an annotated proper noun).
pub fn conv_with_case(
    premise: &str,
    choice: &str,
    relation: Relation,
    keep_second_case: bool,
) -> Result<String> {
    let premise = premise.trim();
    let choice = choice.trim();
    if premise.is_empty() || choice.is_empty() {
        return Err(Error::Argument("conv requires non-empty premise and choice".into()));
    }
    let (first, second) = match relation {
        Relation::Cause => (premise, choice),
        Relation::Effect => (choice, premise),
    };
    let first = strip_one_terminal(first);
    let second = second
        .trim_end_matches(|c: char| is_sentence_terminator(c) || c.is_whitespace());
    let second = if keep_second_case || starts_with_cased_token(second) {
        second.to_string()
    } else {
        lowercase_first(second)
    };
    Ok(format!("{first} because {second}."))
}

fn strip_one_terminal(text: &str) -> &str {
    let mut chars = text.chars();
    match chars.next_back() {
        Some(c) if is_sentence_terminator(c) => chars.as_str().trim_end(),
        _ => text,
    }
}

/// Tokens that keep their case when moved mid-sentence: the pronoun "I" and
/// its contractions, and acronyms of two or more uppercase letters.
fn starts_with_cased_token(text: &str) -> bool {
    let Some(token) = text.split_whitespace().next() else {
        return false;
    };
    let core = crate::text::token_core(token);
    if core == "I" || core.starts_with("I'") || core.starts_with("I\u{2019}") {
        return true;
    }
    let letters: Vec<char> = core.chars().filter(|c| c.is_alphabetic()).collect();
    letters.len() >= 2 && letters.iter().all(|c| c.is_uppercase())
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl FieldStats {
    /// Summary over a non-empty sample; `std` uses the n-1 denominator and is
    /// 0 for a single value.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("statistics over an empty sample".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let std = if n > 1 {
            let ss: f64 = sorted.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(FieldStats {
            min: sorted[0],
            max: sorted[n - 1],
            mean,
            median,
            std,
        })
    }
}

/// Word-count statistics in the layout of the usual COPA summary table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub items: usize,
    pub premise: FieldStats,
    pub choice1: FieldStats,
    pub choice2: FieldStats,
    /// Premise plus choice length, over every premise/choice pair.
    pub total: FieldStats,
    /// 100 * premise / total, over every premise/choice pair.
    pub premise_ratio: FieldStats,
}

pub fn dataset_stats(items: &[CopaItem]) -> Result<DatasetStats> {
    if items.is_empty() {
        return Err(Error::Argument("dataset_stats needs at least one item".into()));
    }
    let premise: Vec<f64> = items.iter().map(|i| word_count(&i.premise) as f64).collect();
    let choice1: Vec<f64> = items.iter().map(|i| word_count(&i.choice1) as f64).collect();
    let choice2: Vec<f64> = items.iter().map(|i| word_count(&i.choice2) as f64).collect();
    let mut total = Vec::with_capacity(items.len() * 2);
    let mut ratio = Vec::with_capacity(items.len() * 2);
    for (p, choices) in premise.iter().zip(choice1.iter().zip(&choice2)) {
        for c in [choices.0, choices.1] {
            let t = p + c;
            total.push(t);
            ratio.push(if t > 0.0 { 100.0 * p / t } else { 0.0 });
        }
    }
    Ok(DatasetStats {
        items: items.len(),
        premise: FieldStats::from_values(&premise)?,
        choice1: FieldStats::from_values(&choice1)?,
        choice2: FieldStats::from_values(&choice2)?,
        total: FieldStats::from_values(&total)?,
        premise_ratio: FieldStats::from_values(&ratio)?,
    })
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<15}{:>8}{:>8}{:>8}{:>8}{:>8}",
            "", "Min", "Max", "Mean", "Median", "Std"
        )?;
        for (name, s) in [
            ("Premise", &self.premise),
            ("Choice 1", &self.choice1),
            ("Choice 2", &self.choice2),
            ("Total Length", &self.total),
            ("Premise/Total", &self.premise_ratio),
        ] {
            writeln!(
                f,
                "{:<15}{:>8.1}{:>8.1}{:>8.1}{:>8.1}{:>8.1}",
                name, s.min, s.max, s.mean, s.median, s.std
            )?;
        }
        write!(f, "({} items)", self.items)
    }
}

// ---------------------------------------------------------------------------
// Native line-delimited storage
// ---------------------------------------------------------------------------

pub fn parse_items<R: BufRead>(reader: R) -> Result<Vec<CopaItem>> {
    let mut items = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let item: CopaItem = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

pub fn read_items(path: &Path) -> Result<Vec<CopaItem>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_items(BufReader::new(file)).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

pub fn write_records<T: Serialize, W: Write>(mut writer: W, records: &[T]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_items(path: &Path, items: &[CopaItem]) -> Result<()> {
    write_jsonl(path, items)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(BufWriter::new(file), records).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// XML import
// ---------------------------------------------------------------------------

/// Parse the original COPA XML distribution (`<item id asks-for
/// most-plausible-alternative>` with `<p>`, `<a1>`, `<a2>` children).
pub fn import_xml(xml: &str) -> Result<Vec<CopaItem>> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| {
        let pos = e.pos();
        Error::Xml {
            item: item_id_before(xml, pos.row, pos.col).unwrap_or_else(|| "<none>".into()),
            message: e.to_string(),
        }
    })?;

    let mut items = Vec::new();
    for node in doc.descendants().filter(|n| n.has_tag_name("item")) {
        let raw_id = node.attribute("id").unwrap_or("<missing id>");
        let field_err = |field: &str| Error::Field {
            item: raw_id.to_string(),
            field: field.to_string(),
        };
        let id: u64 = node
            .attribute("id")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| field_err("id"))?;
        let question = match node.attribute("asks-for") {
            Some("cause") => Relation::Cause,
            Some("effect") => Relation::Effect,
            _ => return Err(field_err("asks-for")),
        };
        let label = match node.attribute("most-plausible-alternative") {
            Some("1") => Label::One,
            Some("2") => Label::Two,
            _ => return Err(field_err("most-plausible-alternative")),
        };
        let child_text = |tag: &str| -> Result<String> {
            node.children()
                .find(|c| c.has_tag_name(tag))
                .map(|c| {
                    c.descendants()
                        .filter(|d| d.is_text())
                        .filter_map(|d| d.text())
                        .collect::<String>()
                        .trim()
                        .to_string()
                })
                .filter(|t| !t.is_empty())
                .ok_or_else(|| field_err(tag))
        };
        items.push(CopaItem::new(
            id,
            child_text("p")?,
            child_text("a1")?,
            child_text("a2")?,
            question,
            label,
        ));
    }
    Ok(items)
}

/// Best-effort id of the last `<item` opened before a 1-based (row, col) position.
fn item_id_before(xml: &str, row: u32, col: u32) -> Option<String> {
    let mut offset = 0usize;
    for (i, line) in xml.split_inclusive('\n').enumerate() {
        if i + 1 == row as usize {
            offset += line
                .char_indices()
                .nth(col.saturating_sub(1) as usize)
                .map_or(line.len(), |(b, _)| b);
            break;
        }
        offset += line.len();
    }
    let head = &xml[..offset.min(xml.len())];
    let start = head.rfind("<item")?;
    let tag = &head[start..];
    let id_at = tag.find("id=")? + 3;
    let quote = tag[id_at..].chars().next()?;
    let rest = &tag[id_at + quote.len_utf8()..];
    let end = rest.find(quote)?;
    Some(rest[..end].to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn item(id: u64, p: &str, c1: &str, c2: &str) -> CopaItem {
        CopaItem::new(id, p, c1, c2, Relation::Cause, Label::One)
    }

    #[test]
    fn conv_effect_example() {
        let s = conv(
            "The woman's date wanted to look like a gentleman.",
            "He opened the door for her.",
            Relation::Effect,
        )
        .unwrap();
        assert_eq!(
            s,
            "He opened the door for her because the woman's date wanted to look like a gentleman."
        );
    }

    #[test]
    fn conv_minimal_and_cause_examples() {
        assert_eq!(conv("A.", "B.", Relation::Cause).unwrap(), "A because b.");
        assert_eq!(
            conv(
                "The man craved a cigarette.",
                "He was addicted to nicotine.",
                Relation::Cause
            )
            .unwrap(),
            "The man craved a cigarette because he was addicted to nicotine."
        );
    }

    #[test]
    fn conv_keeps_pronoun_i_and_acronyms() {
        assert_eq!(
            conv("The phone rang.", "I called.", Relation::Cause).unwrap(),
            "The phone rang because I called."
        );
        assert_eq!(
            conv("The rocket launched.", "NASA approved it.", Relation::Cause).unwrap(),
            "The rocket launched because NASA approved it."
        );
        assert_eq!(
            conv_with_case("He smiled.", "Anna waved.", Relation::Cause, true).unwrap(),
            "He smiled because Anna waved."
        );
    }

    #[test]
    fn conv_rejects_empty() {
        assert!(matches!(conv("", "x", Relation::Cause), Err(Error::Argument(_))));
        assert!(matches!(conv("x", "  ", Relation::Effect), Err(Error::Argument(_))));
    }

    #[test]
    fn import_banana_item() {
        let xml = r#"<?xml version="1.0" encoding="UTF-8"?>
<copa-corpus version="1.0">
  <item id="1" asks-for="effect" most-plausible-alternative="2">
    <p>The bananas ripened.</p>
    <a1>We squeezed them.</a1>
    <a2>We ate them.</a2>
  </item>
</copa-corpus>"#;
        let items = import_xml(xml).unwrap();
        assert_eq!(items.len(), 1);
        let it = &items[0];
        assert_eq!(it.question, Relation::Effect);
        assert_eq!(it.label, Label::Two);
        assert_eq!(it.premise, "The bananas ripened.");
        assert_eq!(it.choice1, "We squeezed them.");
        assert_eq!(it.choice2, "We ate them.");
    }

    #[test]
    fn import_empty_corpus() {
        assert!(import_xml("<copa-corpus/>").unwrap().is_empty());
    }

    #[test]
    fn import_missing_asks_for_names_item() {
        let xml = r#"<copa-corpus>
  <item id="1" asks-for="cause" most-plausible-alternative="1"><p>a b.</p><a1>c d.</a1><a2>e f.</a2></item>
  <item id="7" most-plausible-alternative="1"><p>a b.</p><a1>c d.</a1><a2>e f.</a2></item>
</copa-corpus>"#;
        match import_xml(xml) {
            Err(Error::Field { item, field }) => {
                assert_eq!(item, "7");
                assert_eq!(field, "asks-for");
            }
            other => panic!("expected field error, got {other:?}"),
        }
    }

    #[test]
    fn import_malformed_names_offending_item() {
        let xml = "<copa-corpus>\n<item id=\"1\" asks-for=\"cause\" most-plausible-alternative=\"1\"><p>ok.</p><a1>x y.</a1><a2>z w.</a2></item>\n<item id=\"12\" asks-for=\"cause\" most-plausible-alternative=\"1\"><p>broken</a1></item>\n</copa-corpus>";
        match import_xml(xml) {
            Err(Error::Xml { item, .. }) => assert_eq!(item, "12"),
            other => panic!("expected xml error, got {other:?}"),
        }
    }

    #[test]
    fn stats_single_item() {
        let items = vec![item(1, "one two three four", "a b c", "d e f")];
        let s = dataset_stats(&items).unwrap();
        assert_eq!(s.premise.min, 4.0);
        assert_eq!(s.premise.max, 4.0);
        assert_eq!(s.premise.mean, 4.0);
        assert_eq!(s.premise.std, 0.0);
        assert_eq!(s.total.mean, 7.0);
    }

    #[test]
    fn stats_two_items_by_hand() {
        // premise lengths 2 and 4; choice1 3 and 1; choice2 2 and 2.
        // pairs: (2,3) (2,2) (4,1) (4,2) -> totals 5 4 5 6
        // ratios 40, 50, 80, 66.666..
        let items = vec![
            item(1, "a b", "c d e", "f g"),
            item(2, "a b c d", "e", "f g"),
        ];
        let s = dataset_stats(&items).unwrap();
        assert_abs_diff_eq!(s.premise.mean, 3.0);
        assert_abs_diff_eq!(s.premise.std, 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.premise.median, 3.0);
        assert_abs_diff_eq!(s.total.mean, 5.0);
        assert_abs_diff_eq!(s.total.median, 5.0);
        assert_abs_diff_eq!(s.total.min, 4.0);
        assert_abs_diff_eq!(s.total.max, 6.0);
        // sample variance of 5,4,5,6 = (0+1+0+1)/3
        assert_abs_diff_eq!(s.total.std, (2.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        let ratio_mean = (40.0 + 50.0 + 80.0 + 200.0 / 3.0) / 4.0;
        assert_abs_diff_eq!(s.premise_ratio.mean, ratio_mean, epsilon = 1e-9);
        assert_abs_diff_eq!(s.premise_ratio.median, (50.0 + 200.0 / 3.0) / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn stats_empty_is_error() {
        assert!(matches!(dataset_stats(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn native_round_trip_preserves_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("items.jsonl");
        let mut a = item(1, "It rained.", "We got wet.", "We sang.");
        a.extra.insert("source".into(), Value::from("unit"));
        let items = vec![
            a,
            CopaItem::new(2, "x y.", "z w.", "q r.", Relation::Effect, Label::Two),
            item(3, "The bananas ripened.", "We ate them.", "We squeezed them."),
        ];
        write_items(&path, &items).unwrap();
        assert_eq!(read_items(&path).unwrap(), items);
    }

    #[test]
    fn missing_label_reports_line() {
        let data = concat!(
            r#"{"id":1,"premise":"a b.","choice1":"c.","choice2":"d.","question":"cause","label":1}"#,
            "\n",
            r#"{"id":2,"premise":"a b.","choice1":"c.","choice2":"d.","question":"cause"}"#,
            "\n"
        );
        match parse_items(data.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("label"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_label_value_rejected() {
        let data = r#"{"id":1,"premise":"a.","choice1":"c.","choice2":"d.","question":"cause","label":3}"#;
        assert!(matches!(parse_items(data.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_file_reads_empty() {
        assert!(parse_items("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn validate_rejects_connective_inside_clause() {
        let set = ConnectiveSet::default();
        let ok = item(1, "The bananas ripened.", "We ate them.", "We squeezed them.");
        assert!(ok.validate(&set).is_ok());
        let bad = item(2, "He left because it rained.", "x y.", "z w.");
        assert!(bad.validate(&set).is_err());
    }
}
