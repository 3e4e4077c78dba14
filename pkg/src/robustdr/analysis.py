"""Robustness analyses over typoed test sets.

* frequency binning: questions keyed by how often their typoed word occurred in
  training questions (the rarest typoed word decides);
* importance binning: questions keyed by the IDF share of their typoed word
  (the most important typoed word decides);
* removal baseline: typoed words dropped from the question instead of fed in;
* trend table: systems x settings with deltas against clean questions.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .corpus import Question, QuestionSet
from .evaluation import paired_t_test
from .textproc import IdfTable, importances, split_words
from .typogen import TypoedQuestion

DEFAULT_FREQ_EDGES = (0, 1, 11, 101, 1001)
SETTING_ORDER = ("Original", "RandomWords", "NonStopwords", "DiscriminativeUtterances")


def frequency_table(train_questions: Iterable[Question]) -> Counter:
    """Token counts of words over training questions."""
    counts: Counter = Counter()
    for q in train_questions:
        counts.update(split_words(q.text))
    return counts


def train_frequency(word: str, table: Counter) -> int:
    return table.get(word.lower(), 0)


@dataclass
class BinnedReport:
    key: str
    edges: list[float]            # lower bounds; bin i is [edges[i], edges[i+1])
    counts: list[int]
    means: dict[str, list[float]]  # system -> per-bin mean (nan for empty bins)
    excluded: list[str] = field(default_factory=list)
    assignment: dict[str, int] = field(default_factory=dict)

    def labels(self) -> list[str]:
        out = []
        for i, lo in enumerate(self.edges):
            hi = self.edges[i + 1] if i + 1 < len(self.edges) else math.inf
            out.append(f"[{lo:g}, {hi:g})")
        return out

    def write_csv(self, path) -> None:
        systems = list(self.means)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin", "lower", "count"] + systems)
            for i, label in enumerate(self.labels()):
                w.writerow([label, repr(float(self.edges[i])), self.counts[i]]
                           + [repr(self.means[s][i]) for s in systems])
            w.writerow(["excluded", "", len(self.excluded)] + [""] * len(systems))


def _bin_of(key: float, edges: Sequence[float]) -> int:
    idx = 0
    for i, lo in enumerate(edges):
        if key >= lo:
            idx = i
    return idx


def _binned(keyname: str, keys: dict[str, float], scores: Mapping[str, Mapping[str, float]],
            edges: Sequence[float], excluded: list[str]) -> BinnedReport:
    edges = [float(e) for e in edges]
    if sorted(edges) != edges or len(set(edges)) != len(edges):
        raise ValueError(f"bin edges must be strictly increasing: {edges}")
    assignment = {qid: _bin_of(k, edges) for qid, k in keys.items()}
    counts = [0] * len(edges)
    for b in assignment.values():
        counts[b] += 1
    means = {}
    for system, per_query in scores.items():
        sums = [0.0] * len(edges)
        for qid, b in assignment.items():
            sums[b] += per_query[qid]
        means[system] = [s / c if c else math.nan for s, c in zip(sums, counts)]
    return BinnedReport(keyname, edges, counts, means, excluded, assignment)


def _edited(typoed: Iterable[TypoedQuestion]):
    kept, excluded = [], []
    for t in typoed:
        (kept if t.edits else excluded).append(t)
    return kept, [t.base_question_id for t in excluded]


def bin_by_frequency(typoed: Iterable[TypoedQuestion], scores: Mapping[str, Mapping[str, float]],
                     freq: Counter, edges: Sequence[float] = DEFAULT_FREQ_EDGES) -> BinnedReport:
    kept, excluded = _edited(typoed)
    keys = {t.base_question_id: min(train_frequency(e.original, freq) for e in t.edits) for t in kept}
    return _binned("train_frequency", keys, scores, edges, excluded)


def importance_keys(typoed: Iterable[TypoedQuestion], originals: QuestionSet, idf: IdfTable) -> dict[str, float]:
    keys = {}
    for t in typoed:
        if not t.edits:
            continue
        imp = importances(split_words(originals.get(t.base_question_id).text), idf)
        keys[t.base_question_id] = max(imp[e.index] for e in t.edits)
    return keys


def quartile_edges(values: Iterable[float]) -> list[float]:
    vals = np.asarray(list(values), dtype=float)
    if vals.size == 0:
        return [0.0]
    qs = np.quantile(vals, [0.25, 0.5, 0.75])
    edges = [0.0]
    for q in qs:
        if q > edges[-1]:
            edges.append(float(q))
    return edges


def bin_by_importance(typoed: Iterable[TypoedQuestion], scores: Mapping[str, Mapping[str, float]],
                      originals: QuestionSet, idf: IdfTable,
                      edges: Optional[Sequence[float]] = None) -> BinnedReport:
    typoed = list(typoed)
    _, excluded = _edited(typoed)
    keys = importance_keys(typoed, originals, idf)
    if edges is None:
        edges = quartile_edges(keys.values())
    return _binned("relative_importance", keys, scores, edges, excluded)


@dataclass(frozen=True)
class RemovalVariant:
    base_question_id: str
    text: str
    removed: tuple[str, ...]
    flagged: bool = False  # every word removed; encoded as a lone [UNK]


def removal_baseline(typoed: Iterable[TypoedQuestion], originals: QuestionSet) -> list[RemovalVariant]:
    out = []
    for t in typoed:
        words = split_words(originals.get(t.base_question_id).text)
        drop = t.edited_indices
        kept = [w for i, w in enumerate(words) if i not in drop]
        removed = tuple(words[i] for i in sorted(drop))
        out.append(RemovalVariant(t.base_question_id, " ".join(kept), removed, flagged=not kept))
    return out


def write_removal(variants: Iterable[RemovalVariant], path) -> None:
    """``qid, remaining text, removed words (JSON)`` plus ``flagged`` when nothing is left."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for v in variants:
            row = [v.base_question_id, v.text, json.dumps(list(v.removed))]
            if v.flagged:
                row.append("flagged")
            fh.write("\t".join(row) + "\n")


def read_removal(path) -> list[RemovalVariant]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise ValueError(f"{path}:{lineno}: expected 3 or 4 fields")
            out.append(RemovalVariant(parts[0], parts[1], tuple(json.loads(parts[2])),
                                      flagged=len(parts) == 4 and parts[3] == "flagged"))
    return out


def removal_questions(variants: Iterable[RemovalVariant], originals: QuestionSet) -> list[Question]:
    """Queries for retrieval; an empty text encodes to ``[UNK]`` downstream."""
    return [Question(v.base_question_id, v.text, originals.get(v.base_question_id).answers) for v in variants]


@dataclass
class TrendRow:
    system: str
    setting: str
    mean: float
    delta: Optional[float]
    better_than: tuple[str, ...]


def trend_report(matrix: Mapping[str, Mapping[str, Mapping[str, float]]],
                 settings: Sequence[str] = SETTING_ORDER, alpha: float = 0.05) -> list[TrendRow]:
    """``matrix[system][setting]`` holds per-query scores for one metric.

    Each row carries the delta against the system's ``Original`` mean and the
    systems it beats with a paired t-test at ``alpha`` in that setting.
    """
    systems = list(matrix)
    present = [s for s in settings if all(s in matrix[sys] for sys in systems)]
    missing = [s for s in settings if s not in present]
    if missing:
        warnings.warn(f"trend report omits settings without results: {', '.join(missing)}", stacklevel=2)
    rows = []
    for sys in systems:
        base = matrix[sys].get("Original")
        base_mean = float(np.mean(list(base.values()))) if base else None
        for setting in present:
            vals = matrix[sys][setting]
            mean = float(np.mean(list(vals.values())))
            better = []
            for other in systems:
                if other == sys:
                    continue
                t, p = paired_t_test(vals, matrix[other][setting])
                if p < alpha and t > 0:
                    better.append(other)
            delta = None if base_mean is None else mean - base_mean
            rows.append(TrendRow(sys, setting, mean, delta, tuple(better)))
    return rows


def write_trend(rows: Iterable[TrendRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["system", "setting", "mean", "delta_vs_original", "significantly_better_than"])
        for r in rows:
            w.writerow([r.system, r.setting, repr(r.mean), "" if r.delta is None else repr(r.delta),
                        ";".join(r.better_than)])
