import math

import numpy as np
import pytest

from mtsimplify import metrics as mx
from mtsimplify.trainer import selection_score

import oracles
from oracles import TRIPLES


@pytest.mark.parametrize("src,out,refs", TRIPLES)
def test_sari_matches_brute_force(src, out, refs):
    rep = mx.sari(src, out, refs)
    total, add, keep, dele = oracles.sari(src, out, refs)
    assert rep.total == pytest.approx(total, abs=1e-9)
    assert rep.f_add == pytest.approx(add, abs=1e-9)
    assert rep.f_keep == pytest.approx(keep, abs=1e-9)
    assert rep.p_del == pytest.approx(dele, abs=1e-9)


@pytest.mark.parametrize("src,out,refs", TRIPLES)
def test_rouge_matches_brute_force(src, out, refs):
    assert mx.rouge_l(out, refs[0]) == pytest.approx(oracles.rouge_l(out, refs[0]), abs=1e-9)


def test_corpus_metrics_match_brute_force():
    outs = [t[1] for t in TRIPLES]
    refs = [t[2] for t in TRIPLES]
    assert mx.bleu(outs, refs) == pytest.approx(oracles.bleu(outs, refs), abs=1e-9)
    assert mx.fkgl(outs) == pytest.approx(oracles.fkgl(outs), abs=1e-9)
    corpus = mx.corpus_sari([t[0] for t in TRIPLES], outs, refs)
    assert corpus.total == pytest.approx(np.mean([oracles.sari(*t)[0] for t in TRIPLES]), abs=1e-9)


def test_sari_identity_case():
    rep = mx.sari("a b c d e", "a b c d e", ["a b c d e"])
    assert rep.f_keep == 100.0 and rep.f_add == 0.0 and rep.p_del == 0.0
    assert rep.total == pytest.approx(100 / 3)


def test_sari_perfect_deletion_unigrams():
    rep = mx.sari("a b c d e", "a c e", ["a c e"])
    assert rep.per_order[0][2] == 100.0


def test_sari_second_reference_changes_keep_counts():
    one = mx.sari("a b c d", "a b c", ["a b"])
    two = mx.sari("a b c d", "a b c", ["a b", "a b c"])
    assert one.f_keep != two.f_keep


def test_sari_needs_references():
    with pytest.raises(mx.MetricError):
        mx.sari("a", "a", [])
    with pytest.raises(mx.MetricError, match="2 sources, 1 outputs"):
        mx.corpus_sari(["a", "b"], ["a"], [["a"], ["b"]])


def test_fkgl_hand_cases():
    assert mx.fkgl([" ".join(["cat"] * 10)]) == pytest.approx(0.11, abs=1e-12)
    assert mx.fkgl(["cat"]) == pytest.approx(-3.40, abs=1e-12)


@pytest.mark.parametrize(
    "word,n", [("cat", 1), ("table", 2), ("make", 1), ("yes", 1), ("happy", 2), ("the", 1), ("beautiful", 3), ("queue", 1)]
)
def test_syllable_heuristic(word, n):
    assert mx.syllables(word) == n == oracles.count_syllables(word)


def test_fkgl_ignores_punctuation_and_rejects_empty():
    assert mx.fkgl(["cat sat ."]) == mx.fkgl(["cat sat"])
    with pytest.raises(mx.MetricError):
        mx.fkgl([". ,"])


def test_bleu_hand_case():
    outs = ["a b c d e", "x y z w"]
    refs = [["a b c d f"], ["x y z w"]]
    expect = 100 * (8 / 9 * 6 / 7 * 4 / 5 * 2 / 3) ** 0.25
    assert mx.bleu(outs, refs) == pytest.approx(expect, abs=1e-9)


def test_bleu_brevity_penalty_and_zero_matches():
    assert mx.bleu(["a b c d"], [["a b c d e f g h"]]) == pytest.approx(100 * math.exp(1 - 8 / 4))
    assert mx.bleu(["p q r s"], [["a b c d"]]) == 0.0
    assert mx.bleu(["a b c d"], [["a b c d"]]) == pytest.approx(100.0)


def test_rouge_hand_case():
    assert mx.rouge_l("a b c d", "a c d") == pytest.approx(85.714285714, abs=1e-6)
    with pytest.warns(RuntimeWarning):
        assert mx.rouge_l("", "a") == 0.0


def test_match_with_input():
    same = mx.match_with_input(["a b c d", "e f g h"], ["a b c d", "e f g h"])
    assert same.exact_match == 100.0 and same.bleu == pytest.approx(100.0) and same.rouge_l == 100.0
    # references that rewrite the source stay far from it
    srcs = [t[0] for t in TRIPLES]
    refs = [t[2][0] for t in TRIPLES]
    far = mx.match_with_input(srcs, refs)
    assert far.bleu < same.bleu and far.exact_match < 100.0


def test_report_keys_are_stable():
    rep = mx.evaluate(["a b c d"], ["a b c d"], [["a b c d"]]).to_dict()
    expected = ["sari", "sari.add", "sari.keep", "sari.del"]
    for n in range(1, 5):
        expected += [f"sari.{n}gram.add", f"sari.{n}gram.keep", f"sari.{n}gram.del"]
    expected += ["bleu", "fkgl", "rouge_l", "exact_match", "input.exact_match", "input.bleu", "input.rouge_l"]
    assert list(rep) == expected
    assert rep["sari"] == pytest.approx(100 / 3) and rep["exact_match"] == 1.0


def test_selection_score():
    assert selection_score(30, 20, 2) == pytest.approx(50.5 / 3)
    assert selection_score(0, 0, 0.05) == pytest.approx(10 / 3)
    assert selection_score(31, 20, 2) > selection_score(30, 20, 2)
