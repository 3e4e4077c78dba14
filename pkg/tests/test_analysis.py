import math
import random
import warnings

import pytest

from robustdr.analysis import (bin_by_frequency, bin_by_importance, frequency_table, importance_keys,
                               quartile_edges, read_removal, removal_baseline, removal_questions, train_frequency,
                               trend_report, write_removal, write_trend)
from robustdr.corpus import Question, QuestionSet
from robustdr.evaluation import paired_t_test
from robustdr.textproc import IdfTable, split_words
from robustdr.typogen import Edit, TypoedQuestion, TypoKind


def typoed(qid, text, edits):
    words = split_words(text)
    es = tuple(Edit(i, words[i], words[i] + "x", TypoKind.RandomInsert) for i in edits)
    out = [w + "x" if i in edits else w for i, w in enumerate(words)]
    return TypoedQuestion(qid, " ".join(out), es, flagged=not edits)


def test_train_frequency_counts_tokens():
    table = frequency_table([Question("a", "red fox"), Question("b", "red dog"), Question("c", "red red")])
    assert train_frequency("red", table) == 4
    assert train_frequency("fox", table) == 1
    assert train_frequency("Fox", table) == 1
    assert train_frequency("cat", table) == 0


def test_frequency_key_is_min_and_flagged_excluded():
    table = frequency_table([Question(str(i), "common") for i in range(100)] +
                            [Question(f"r{i}", "rare") for i in range(5)])
    items = [typoed("q1", "rare common", [0, 1]), typoed("q2", "common", [0]), typoed("q3", "plain", [])]
    scores = {"A": {"q1": 1.0, "q2": 0.0, "q3": 0.5}}
    rep = bin_by_frequency(items, scores, table, edges=[0, 1, 11, 101])
    assert rep.assignment == {"q1": 1, "q2": 2}
    assert rep.excluded == ["q3"]
    assert sum(rep.counts) == 2


def test_single_bin_equals_overall_mean():
    table = frequency_table([Question("t", "a b c")])
    rng = random.Random(0)
    items = [typoed(f"q{i}", "a b c d", rng.sample(range(4), rng.randint(1, 4))) for i in range(30)]
    scores = {"A": {t.base_question_id: rng.random() for t in items}}
    rep = bin_by_frequency(items, scores, table, edges=[0])
    assert rep.means["A"][0] == pytest.approx(sum(scores["A"].values()) / 30)


def test_bins_partition_edited_questions():
    rng = random.Random(1)
    table = frequency_table([Question(f"t{i}", " ".join(rng.choice("abcdef") for _ in range(4))) for i in range(50)])
    items = [typoed(f"q{i}", "a b c d e f", rng.sample(range(6), rng.randint(0, 3))) for i in range(80)]
    scores = {"A": {t.base_question_id: 1.0 for t in items}}
    rep = bin_by_frequency(items, scores, table)
    edited = {t.base_question_id for t in items if t.edits}
    assert set(rep.assignment) == edited
    assert sum(rep.counts) == len(edited)
    assert set(rep.excluded) == {t.base_question_id for t in items} - edited


def test_importance_single_word_is_top_bin():
    idf = IdfTable.from_texts(["the lincoln", "the", "the war", "the"])
    originals = QuestionSet([Question("q1", "lincoln"), Question("q2", "the lincoln"), Question("q3", "the war")])
    items = [typoed("q1", "lincoln", [0]), typoed("q2", "the lincoln", [0]), typoed("q3", "the war", [1])]
    keys = importance_keys(items, originals, idf)
    assert keys["q1"] == pytest.approx(1.0)
    assert keys["q2"] < 0.1
    scores = {"A": {"q1": 1.0, "q2": 0.0, "q3": 0.5}, "B": {"q1": 1.0, "q2": 0.0, "q3": 0.5}}
    rep = bin_by_importance(items, scores, originals, idf, edges=[0, 0.5])
    assert rep.assignment["q1"] == 1 and rep.assignment["q2"] == 0
    assert rep.means["A"] == rep.means["B"]


def test_quartile_edges():
    assert quartile_edges([]) == [0.0]
    edges = quartile_edges([0.1 * i for i in range(1, 101)])
    assert edges[0] == 0.0 and len(edges) == 4 and edges == sorted(edges)
    assert quartile_edges([0.5] * 10) == [0.0, 0.5]


def test_bad_edges_rejected():
    with pytest.raises(ValueError):
        bin_by_frequency([], {}, frequency_table([]), edges=[5, 1])


def test_removal_examples():
    originals = QuestionSet([Question("q1", "where was president Lincoln born", ("Kentucky",)),
                             Question("q2", "who won"), Question("q3", "why so")])
    items = [typoed("q1", "where was president Lincoln born", [3]), typoed("q2", "who won", []),
             typoed("q3", "why so", [0, 1])]
    out = removal_baseline(items, originals)
    assert out[0].text == "where was president born" and out[0].removed == ("lincoln",)
    assert out[1].text == "who won" and not out[1].flagged
    assert out[2].text == "" and out[2].flagged
    qs = removal_questions(out, originals)
    assert qs[0].answers == ("Kentucky",)


def test_removal_contains_no_typoed_form():
    rng = random.Random(2)
    words = ["alpha", "beta", "gamma", "delta", "eps"]
    originals = QuestionSet([Question(f"q{i}", " ".join(rng.sample(words, 4))) for i in range(40)])
    items = [typoed(q.id, q.text, rng.sample(range(4), rng.randint(0, 4))) for q in originals]
    for t, v in zip(items, removal_baseline(items, originals)):
        remaining = split_words(v.text)
        for e in t.edits:
            assert e.typoed not in remaining
        assert len(remaining) == 4 - len(t.edits)


def test_removal_file_round_trip(tmp_path):
    originals = QuestionSet([Question("q1", "a b"), Question("q2", "c")])
    out = removal_baseline([typoed("q1", "a b", [0]), typoed("q2", "c", [0])], originals)
    write_removal(out, tmp_path / "r.tsv")
    assert read_removal(tmp_path / "r.tsv") == out


def test_trend_deltas_and_significance():
    rng = random.Random(3)
    qids = [f"q{i}" for i in range(30)]
    orig = {q: rng.random() for q in qids}
    matrix = {"A": {s: dict(orig) for s in ("Original", "RandomWords")},
              "B": {"Original": dict(orig), "RandomWords": {q: v * 0.5 for q, v in orig.items()}}}
    rows = {(r.system, r.setting): r for r in trend_report(matrix, ("Original", "RandomWords"))}
    assert rows["A", "RandomWords"].delta == 0.0
    mean_b = sum(v * 0.5 for v in orig.values()) / 30
    assert rows["B", "RandomWords"].delta == pytest.approx(mean_b - sum(orig.values()) / 30, abs=1e-15)
    t, p = paired_t_test(matrix["A"]["RandomWords"], matrix["B"]["RandomWords"])
    assert ("B" in rows["A", "RandomWords"].better_than) == (p < 0.05 and t > 0)
    assert rows["B", "RandomWords"].better_than == ()


def test_trend_missing_setting_warns(tmp_path):
    matrix = {"A": {"Original": {"q": 1.0, "r": 0.0}}}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rows = trend_report(matrix)
    assert [r.setting for r in rows] == ["Original"]
    assert any("RandomWords" in str(w.message) for w in caught)
    write_trend(rows, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().startswith("system,setting,mean")


def test_empty_bin_mean_is_nan():
    table = frequency_table([])
    rep = bin_by_frequency([typoed("q", "a", [0])], {"A": {"q": 1.0}}, table, edges=[0, 5])
    assert rep.counts == [1, 0] and math.isnan(rep.means["A"][1])
