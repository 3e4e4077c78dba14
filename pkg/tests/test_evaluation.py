import math
import random
import statistics

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

import oracles
from robustdr.corpus import Passage, PassageCollection, Question, QuestionSet, RelevanceJudgments
from robustdr.evaluation import (answer_recall_at_k, contains_answer, evaluate_run, mrr_at_k, normalize_answer_text,
                                 paired_t_test, read_per_query, recall_at_k, regularized_incomplete_beta,
                                 significance_rows, write_per_query, write_report, write_significance)

WILSON = ("Woodrow Wilson, a leader of the Progressive Movement, was the 28th President of the United States "
          "(1913-1921). After a policy of neutrality at the outbreak of World War I, he led America into war.")


def qrels_of(pairs):
    q = RelevanceJudgments()
    for qid, pid in pairs:
        q.add(qid, pid)
    return q


def ranked(*pids):
    return [(p, 1.0 / (i + 1)) for i, p in enumerate(pids)]


def test_mrr_examples():
    qrels = qrels_of([("q", "x")])
    assert mrr_at_k({"q": ranked("x", "a")}, qrels).mean == 1.0
    assert mrr_at_k({"q": ranked("a", "b", "c", "x")}, qrels).mean == 0.25
    eleven = ranked(*[f"n{i}" for i in range(10)], "x")
    assert mrr_at_k({"q": eleven}, qrels, 10).mean == 0.0


def test_recall_examples():
    qrels = qrels_of([("q", "x"), ("q", "y")])
    assert recall_at_k({"q": ranked("y", "x")}, qrels, 2).mean == 1.0
    assert recall_at_k({"q": ranked("y", "a")}, qrels, 2).mean == 0.5
    assert recall_at_k({"q": ranked("a", "b")}, qrels, 2).mean == 0.0
    assert recall_at_k({}, qrels, 2).mean == 0.0


def test_recall_needs_relevant():
    with pytest.raises(ValueError):
        recall_at_k({}, RelevanceJudgments(), 5, qids=["q"])


def test_metrics_match_brute_force():
    rng = random.Random(0)
    for _ in range(100):
        pids = [f"p{i}" for i in range(rng.randint(1, 20))]
        qrels, run = RelevanceJudgments(), {}
        for qi in range(rng.randint(1, 6)):
            qid = f"q{qi}"
            for pid in rng.sample(pids, rng.randint(1, min(3, len(pids)))):
                qrels.add(qid, pid)
            run[qid] = ranked(*rng.sample(pids, rng.randint(0, len(pids))))
        k = rng.randint(1, 20)
        qids = sorted(qrels.relevant)
        mrr = sum(oracles.brute_mrr([p for p, _ in run[q]], qrels[q], k) for q in qids) / len(qids)
        rec = sum(oracles.brute_recall([p for p, _ in run[q]], qrels[q], k) for q in qids) / len(qids)
        assert abs(mrr_at_k(run, qrels, k).mean - mrr) <= 1e-12
        assert abs(recall_at_k(run, qrels, k).mean - rec) <= 1e-12


def test_recall_monotone_in_k():
    rng = random.Random(1)
    pids = [f"p{i}" for i in range(15)]
    qrels = qrels_of([("q", p) for p in rng.sample(pids, 4)])
    run = {"q": ranked(*rng.sample(pids, 15))}
    values = [recall_at_k(run, qrels, k).mean for k in range(1, 16)]
    assert values == sorted(values)


def test_answer_recall():
    passages = PassageCollection([Passage("w", WILSON), Passage("o", "Nothing relevant here.")])
    qs = QuestionSet([Question("q1", "who was president during wwi", ("Woodrow Wilson",)),
                      Question("q2", "who", ("woodrow wilson",)),
                      Question("q3", "who", ("Calvin Coolidge",))])
    run = {"q1": ranked("w", "o"), "q2": ranked("o", "w"), "q3": ranked("w", "o")}
    rep = answer_recall_at_k(run, qs, passages, 1)
    assert rep.per_query == {"q1": 1.0, "q2": 0.0, "q3": 0.0}
    assert answer_recall_at_k(run, qs, passages, 2).per_query["q2"] == 1.0
    with pytest.raises(ValueError):
        answer_recall_at_k(run, QuestionSet([Question("q", "x")]), passages, 1)


def test_answer_normalisation():
    assert normalize_answer_text("  Hello,   WORLD! ") == "hello world"
    assert contains_answer(WILSON, "woodrow wilson")
    assert contains_answer(WILSON, "President of the United States")
    assert not contains_answer("Wilsonian era", "Wilson")
    assert not contains_answer(WILSON, "!!!")


def test_t_test_reference_values():
    a = {str(i): float(i) for i in range(1, 6)}
    b = {str(i): 0.0 for i in range(1, 6)}
    t, p = paired_t_test(a, b)
    assert abs(t - 4.242640687119285) < 1e-4
    assert abs(p - 0.013236) < 1e-4
    assert abs(t - oracles.paired_t(list(a.values()), list(b.values()))) < 1e-12


def test_t_test_matches_scipy():
    stats = pytest.importorskip("scipy.stats")
    rng = random.Random(2)
    for _ in range(50):
        n = rng.randint(2, 40)
        a = {str(i): rng.random() for i in range(n)}
        b = {str(i): rng.random() for i in range(n)}
        t, p = paired_t_test(a, b)
        ref = stats.ttest_rel([a[k] for k in sorted(a)], [b[k] for k in sorted(b)])
        assert t == pytest.approx(ref.statistic, rel=1e-10)
        assert p == pytest.approx(ref.pvalue, rel=1e-8, abs=1e-14)


def test_t_test_edge_cases():
    same = {"a": 0.3, "b": 0.7}
    assert paired_t_test(same, same) == (0.0, 1.0)
    t, p = paired_t_test({"a": 1.0, "b": 2.0}, {"a": 0.0, "b": 1.0})
    assert t == math.inf and p == 0.0
    with pytest.raises(ValueError):
        paired_t_test({"a": 1.0}, {"a": 0.0})
    with pytest.raises(ValueError):
        paired_t_test({"a": 1.0, "b": 1.0}, {"a": 0.0, "c": 1.0})


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=20), st.floats(0.1, 10))
def test_t_test_antisymmetric_and_scale_free(diffs, c):
    assume(statistics.stdev(diffs) > 1e-6)
    a = {str(i): d for i, d in enumerate(diffs)}
    zero = {str(i): 0.0 for i in range(len(diffs))}
    t, p = paired_t_test(a, zero)
    t2, p2 = paired_t_test(zero, a)
    assert t2 == pytest.approx(-t) and p2 == pytest.approx(p)
    if math.isfinite(t) and t != 0:
        tc, _ = paired_t_test({k: c * v for k, v in a.items()}, zero)
        assert tc == pytest.approx(t, rel=1e-6)


def test_incomplete_beta_limits():
    assert regularized_incomplete_beta(0.0, 2, 3) == 0.0
    assert regularized_incomplete_beta(1.0, 2, 3) == 1.0
    assert regularized_incomplete_beta(0.5, 1, 1) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        regularized_incomplete_beta(1.5, 1, 1)


def test_reports_round_trip(tmp_path):
    qrels = qrels_of([("q1", "x"), ("q2", "y")])
    run = {"q1": ranked("x"), "q2": ranked("a", "y")}
    reports = evaluate_run(run, qrels, ks=(1, 2), mrr_k=10)
    assert [r.name for r in reports] == ["MRR", "Recall", "Recall"]
    write_report(reports, tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "metric,k,mean,n"
    write_per_query(reports, tmp_path / "pq.csv")
    back = read_per_query(tmp_path / "pq.csv")
    assert back["MRR@10"] == {"q1": 1.0, "q2": 0.5}
    assert back["Recall@1"] == {"q1": 1.0, "q2": 0.0}
    rows = list(significance_rows({"A": back["Recall@2"], "B": back["Recall@1"]}, "Recall@k"))
    assert rows[0][:3] == ("A", "B", "Recall@k")
    write_significance(rows, tmp_path / "s.csv")
    assert "significant@0.05" in (tmp_path / "s.csv").read_text()
