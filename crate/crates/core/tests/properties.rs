mod common;

use causal_augment::adversarial::{
    aco_search, brute_force_search, AcoParams, GraphPosition, Pos, PheromoneTable, Segment,
    SubstitutionGraph, TokenAnnotation,
};
use causal_augment::copa_data::{conv, parse_items, write_records, CopaItem, Label, Relation};
use causal_augment::corpus_filter::{Extractor, Segmenter};
use causal_augment::eval::{aggregate_seeds, ar_test_exact};
use causal_augment::model_backend::StubModel;
use proptest::prelude::*;
use serde_json::{Map, Value};

fn clause() -> impl Strategy<Value = String> {
    (
        "[A-Z][a-z]{1,8}",
        prop::collection::vec("[a-z]{1,8}", 1..8),
        prop::sample::select(vec![".", "!", "?", ""]),
    )
        .prop_map(|(head, rest, end)| format!("{head} {}{end}", rest.join(" ")))
}

fn item() -> impl Strategy<Value = CopaItem> {
    (
        any::<u32>(),
        clause(),
        clause(),
        clause(),
        any::<bool>(),
        any::<bool>(),
        prop::option::of("[a-z]{1,6}"),
    )
        .prop_map(|(id, p, c1, c2, cause, one, extra)| {
            let mut item = CopaItem::new(
                id as u64,
                p,
                c1,
                c2,
                if cause { Relation::Cause } else { Relation::Effect },
                if one { Label::One } else { Label::Two },
            );
            if let Some(v) = extra {
                let mut m = Map::new();
                m.insert("source".into(), Value::from(v));
                item.extra = m;
            }
            item
        })
}

proptest! {
    #[test]
    fn conv_reversal(p in clause(), c in clause()) {
        prop_assert_eq!(
            conv(&p, &c, Relation::Effect).unwrap(),
            conv(&c, &p, Relation::Cause).unwrap()
        );
        let s = conv(&p, &c, Relation::Cause).unwrap();
        prop_assert!(s.ends_with('.') && !s.ends_with(".."));
        prop_assert_eq!(s.matches(" because ").count(), 1);
    }

    #[test]
    fn items_round_trip(items in prop::collection::vec(item(), 0..6)) {
        let mut buf = Vec::new();
        write_records(&mut buf, &items).unwrap();
        prop_assert_eq!(parse_items(buf.as_slice()).unwrap(), items);
    }

    #[test]
    fn segmentation_keeps_every_character(seed in 0u64..1000, size in 50usize..2000) {
        let text = common::synthetic_corpus(seed, size);
        let sentences = Segmenter::default().segment_str(&text, "t");
        let joined: String = sentences.iter().flat_map(|s| s.text.split_whitespace()).collect();
        let original: String = text.split_whitespace().collect();
        prop_assert_eq!(joined, original);
    }

    #[test]
    fn histogram_partitions_connective_sentences(seed in 0u64..1000) {
        let text = common::synthetic_corpus(seed, 3000);
        let ex = Extractor::default().extract_reader(text.as_bytes(), "t").unwrap();
        prop_assert_eq!(ex.stats.accepted + ex.stats.total_rejected(), ex.stats.with_connective);
        prop_assert_eq!(ex.stats.accepted, ex.pairs.len());
    }

    #[test]
    fn pheromone_stays_positive(
        rho in 0.01f64..0.99,
        tau0 in 1e-3f64..10.0,
        steps in prop::collection::vec((any::<bool>(), 0usize..3, -5.0f64..5.0), 0..300),
    ) {
        let graph = random_graph(&[2, 2]);
        let mut table = PheromoneTable::new(&graph, tau0);
        for (evaporate, k, amount) in steps {
            if evaporate {
                table.evaporate(rho);
            } else {
                table.deposit(&[k, 2 - k], amount);
            }
            prop_assert!(table.min() > 0.0);
        }
    }

    #[test]
    fn substitution_budget_holds(
        sizes in prop::collection::vec(1usize..4, 1..7),
        frac in 0.05f64..1.0,
        seed in any::<u64>(),
    ) {
        let graph = random_graph(&sizes);
        let item = budget_item(&graph);
        let params = AcoParams {
            ants: 5,
            iterations: 4,
            max_substitution_fraction: frac,
            seed,
            ..AcoParams::default()
        };
        let r = aco_search(&item, &graph, &StubModel::default(), &params).unwrap();
        prop_assert!(r.substitutions.len() <= params.budget(graph.positions.len()));
    }

    #[test]
    fn exact_ar_is_symmetric(a in prop::collection::vec(any::<bool>(), 1..12), flips in any::<u16>()) {
        let b: Vec<bool> = a.iter().enumerate().map(|(i, &x)| x ^ (flips >> i & 1 == 1)).collect();
        let ab = ar_test_exact(&a, &b).unwrap();
        let ba = ar_test_exact(&b, &a).unwrap();
        prop_assert_eq!(ab.p_value, ba.p_value);
        prop_assert!(ab.p_value > 0.0 && ab.p_value <= 1.0);
    }

    #[test]
    fn aggregate_is_ordered(values in prop::collection::vec(0.0f64..1.0, 5..30)) {
        let a = aggregate_seeds(&values).unwrap();
        prop_assert!(a.min <= a.mean + 1e-12 && a.mean <= a.max + 1e-12);
        prop_assert!(a.std >= 0.0);
    }
}

fn letter(i: usize) -> char {
    (b'a' + i as u8) as char
}

/// Graph over a premise of nouns `nouna nounb ...`; position i has `sizes[i]`
/// candidates named `alt<i><j>` in letters.
fn random_graph(sizes: &[usize]) -> SubstitutionGraph {
    let tokens: Vec<String> = (0..sizes.len()).map(|i| format!("noun{}", letter(i))).collect();
    let positions = sizes
        .iter()
        .enumerate()
        .map(|(i, &k)| GraphPosition {
            token_index: i,
            original: TokenAnnotation::new(tokens[i].clone(), tokens[i].clone(), Pos::Noun, "s")
                .unwrap(),
            candidates: (0..k).map(|j| format!("alt{}{}", letter(i), letter(j))).collect(),
        })
        .collect();
    SubstitutionGraph {
        segment: Segment::Premise,
        tokens,
        positions,
    }
}

/// An item the stub gets right: the gold choice repeats the premise nouns.
fn budget_item(graph: &SubstitutionGraph) -> CopaItem {
    let premise = graph.tokens.join(" ");
    CopaItem::new(
        1,
        premise.clone(),
        premise,
        "Zebras grazed.",
        Relation::Cause,
        Label::One,
    )
}

#[test]
fn brute_force_prefers_fewest_then_leftmost() {
    // Swapping nouna->altab or nounb->altba each moves the overlap to the
    // wrong choice; the left position wins the tie.
    let graph = random_graph(&[2, 2]);
    let item = CopaItem::new(
        1,
        "nouna nounb",
        "nouna nounb stuff.",
        "altab altba.",
        Relation::Cause,
        Label::One,
    );
    let stub = StubModel::default();
    let r = brute_force_search(&item, &graph, &stub, 9).unwrap();
    assert!(r.success);
    assert_eq!(r.perturbed_item.premise, "altab nounb");
    assert_eq!(r.substitutions.len(), 1);
    assert!(r.verify(&stub).unwrap());
}
