"""Smoke test for the Python bindings.

Build first, then run from the repository root:

    cargo build -p causal-augment-py --features extension-module
    python3 crates/python/python/smoke_test.py
"""

import os
import shutil
import sys
import tempfile

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", ".."))


def load():
    lib = os.path.join(ROOT, "target", "debug", "libcausal_augment_py.so")
    if not os.path.exists(lib):
        sys.exit("build the extension first: cargo build -p causal-augment-py --features extension-module")
    tmp = tempfile.mkdtemp()
    shutil.copy(lib, os.path.join(tmp, "causal_augment_py.so"))
    sys.path.insert(0, tmp)
    import causal_augment_py

    return causal_augment_py


def main():
    ca = load()

    assert ca.conv("The man lost his balance", "He fell.", "effect") == ca.conv(
        "He fell.", "The man lost his balance", "cause"
    )

    xml = (
        '<copa-corpus version="1.0">'
        '<item id="1" asks-for="cause" most-plausible-alternative="1">'
        "<p>My body cast a shadow over the grass.</p>"
        "<a1>The sun was rising.</a1><a2>The grass was cut.</a2></item>"
        "</copa-corpus>"
    )
    items = ca.import_xml(xml)
    assert len(items) == 1 and items[0].label == 1 and items[0].question == "cause"
    print(items[0])

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "items.jsonl")
        ca.write_items(path, items)
        assert ca.read_items(path) == items

    stats = ca.dataset_stats(items)
    assert stats["premise"]["min"] == 8

    hits = ca.match_connectives("He stayed home because it rained.")
    assert hits == [("because", "backward", 3)], hits

    out = ca.filter_sentence("The teacher praised the boy because he was honest.")
    assert out is not None and out["status"] == "accepted", out
    assert ca.filter_sentence("No connective here.") is None

    text = "Anna blamed the driver because he was late again. The boy saw the cat in the morning. " * 3
    pairs, counts = ca.extract_text(text)
    assert counts["accepted"] == len(pairs) == 3, counts

    pairs = [
        ("The meeting was cancelled", "The manager was sick", "a:0"),
        ("Everyone went home early", "The power went out", "a:1"),
        ("The cat hid under the bed", "Thunder shook the house", "a:2"),
    ]
    made = ca.augment_pairs(pairs, "random", 7)
    assert len(made) == 3 and all(i.question == "cause" for i in made)
    assert [i.label for i in made] == [i.label for i in ca.augment_pairs(pairs, "random", 7)]

    stub = ca.StubModel()
    stub.add_canned("The meeting was cancelled. And", " the staff left early.")
    lm = ca.augment_pairs(pairs[:1], "lm", 1, stub)
    assert "The staff left early." in (lm[0].choice1, lm[0].choice2), lm

    p0, p1 = stub.score(["Dogs barked because of dogs."])[0]
    assert abs(p1 - 0.7310585786300049) < 1e-12 and abs(p0 + p1 - 1) < 1e-12
    acc, correct = stub.accuracy(made)
    assert len(correct) == 3 and 0.0 <= acc <= 1.0
    assert stub.predict(made[0]) in (1, 2)

    agg = ca.aggregate_seeds([0.6, 0.7, 0.8, 0.65, 0.75])
    assert agg["min"] <= agg["mean"] <= agg["max"]
    exact = ca.ar_test_exact([True, True, False], [False, True, False])
    mc = ca.ar_test([True, True, False], [False, True, False], 5000, 3)
    assert abs(exact["p_value"] - mc["p_value"]) < 0.05, (exact, mc)

    try:
        ca.CopaItem(1, "a", "b", "c", "cause", 3)
    except ValueError:
        pass
    else:
        raise AssertionError("label 3 accepted")

    print("smoke test ok")


if __name__ == "__main__":
    main()
