"""Ranking metrics and the paired t-test used to compare systems."""

from __future__ import annotations

import csv
import math
import re
import string
from dataclasses import dataclass
from typing import Mapping, Optional

from .corpus import PassageCollection, QuestionSet, RelevanceJudgments

PerQueryScores = dict  # qid -> float in [0, 1]


@dataclass
class MetricReport:
    name: str
    k: int
    per_query: PerQueryScores

    @property
    def mean(self) -> float:
        return sum(self.per_query.values()) / len(self.per_query) if self.per_query else 0.0

    @property
    def n(self) -> int:
        return len(self.per_query)


def _top(run, qid, k):
    return [pid for pid, _ in run.get(qid, [])[:k]]


def mrr_at_k(run, qrels: RelevanceJudgments, k: int = 10, qids=None) -> MetricReport:
    scores = {}
    for qid in qids if qids is not None else sorted(qrels.relevant):
        rel = qrels[qid]
        rr = 0.0
        for rank, pid in enumerate(_top(run, qid, k), 1):
            if pid in rel:
                rr = 1.0 / rank
                break
        scores[qid] = rr
    return MetricReport("MRR", k, scores)


def recall_at_k(run, qrels: RelevanceJudgments, k: int, qids=None) -> MetricReport:
    scores = {}
    for qid in qids if qids is not None else sorted(qrels.relevant):
        rel = qrels[qid]
        if not rel:
            raise ValueError(f"question {qid!r} has no relevant passages")
        scores[qid] = len(rel.intersection(_top(run, qid, k))) / len(rel)
    return MetricReport("Recall", k, scores)


_PUNCT = string.punctuation


def normalize_answer_text(text: str) -> str:
    """Lowercase, split on whitespace, strip punctuation from token ends, rejoin with one space."""
    tokens = (t.strip(_PUNCT) for t in text.lower().split())
    return " ".join(t for t in tokens if t)


def contains_answer(passage_text: str, answer: str) -> bool:
    ans = normalize_answer_text(answer)
    if not ans:
        return False
    return f" {ans} " in f" {normalize_answer_text(passage_text)} "


def answer_recall_at_k(run, questions: QuestionSet, passages: PassageCollection, k: int) -> MetricReport:
    scores = {}
    for q in questions:
        if not q.answers:
            raise ValueError(f"question {q.id!r} has no gold answers")
        hit = any(contains_answer(passages.get(pid).text, a)
                  for pid in _top(run, q.id, k) for a in q.answers)
        scores[q.id] = 1.0 if hit else 0.0
    return MetricReport("AnswerRecall", k, scores)


# ---------------------------------------------------------------- statistics

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 500):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x in (0.0, 1.0):
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(df / (df + t * t), df / 2.0, 0.5)


def paired_t_test(scores_a: Mapping[str, float], scores_b: Mapping[str, float]) -> tuple[float, float]:
    """Two-sided paired t-test on per-query scores; returns ``(t, p)``."""
    if set(scores_a) != set(scores_b):
        raise ValueError("paired t-test needs identical question sets")
    n = len(scores_a)
    if n < 2:
        raise ValueError("paired t-test needs at least two questions")
    diffs = [scores_a[q] - scores_b[q] for q in sorted(scores_a)]
    mean = sum(diffs) / n
    var = sum((x - mean) ** 2 for x in diffs) / (n - 1)
    if var == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / math.sqrt(var / n)
    return t, student_t_two_sided_p(t, n - 1)


# ---------------------------------------------------------------- reports

def evaluate_run(run, qrels: RelevanceJudgments, ks=(10, 50), mrr_k: int = 10,
                 questions: Optional[QuestionSet] = None,
                 passages: Optional[PassageCollection] = None,
                 answer_ks=()) -> list[MetricReport]:
    qids = [q.id for q in questions] if questions is not None else None
    reports = [mrr_at_k(run, qrels, mrr_k, qids)]
    reports += [recall_at_k(run, qrels, k, qids) for k in ks]
    if answer_ks:
        reports += [answer_recall_at_k(run, questions, passages, k) for k in answer_ks]
    return reports


def write_report(reports, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "k", "mean", "n"])
        for r in reports:
            w.writerow([r.name, r.k, repr(r.mean), r.n])


def write_per_query(reports, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["qid"] + [f"{r.name}@{r.k}" for r in reports])
        qids = sorted(reports[0].per_query) if reports else []
        for qid in qids:
            w.writerow([qid] + [repr(r.per_query[qid]) for r in reports])


def read_per_query(path) -> dict[str, PerQueryScores]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {col: {r[0]: float(r[i]) for r in body} for i, col in enumerate(header) if i}


def significance_rows(systems: Mapping[str, PerQueryScores], metric: str, alpha: float = 0.05):
    names = list(systems)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            t, p = paired_t_test(systems[a], systems[b])
            yield a, b, metric, t, p, p < alpha


def write_significance(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["system_a", "system_b", "metric", "t", "p", "significant@0.05"])
        for a, b, m, t, p, sig in rows:
            w.writerow([a, b, m, repr(t), repr(p), int(sig)])


_SAFE = re.compile(r"[^A-Za-z0-9_.@-]+")


def metric_key(report: MetricReport) -> str:
    return _SAFE.sub("_", f"{report.name}@{report.k}")
