"""Passage collections, question sets and relevance judgments.

All three live in tab-separated, headerless UTF-8 files:

* ``passages.tsv``  -- ``id<TAB>text``
* ``questions.tsv`` -- ``id<TAB>text[<TAB>answers as a JSON array]``
* ``qrels.tsv``     -- ``qid<TAB>pid``
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path


class CorpusError(ValueError):
    """Malformed or inconsistent corpus data."""


@dataclass(frozen=True)
class Passage:
    id: str
    text: str


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    answers: tuple[str, ...] = ()


class _Collection:
    """Ordered, id-addressable, immutable sequence of records."""

    _kind = "record"

    def __init__(self, items: Iterable = ()):
        self._items = tuple(items)
        self._index: dict[str, int] = {}
        for i, item in enumerate(self._items):
            if not item.id:
                raise CorpusError(f"{self._kind} at position {i} has an empty id")
            if not item.text:
                raise CorpusError(f"{self._kind} {item.id!r} has empty text")
            if item.id in self._index:
                raise CorpusError(f"duplicate {self._kind} id {item.id!r}")
            self._index[item.id] = i

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator:
        return iter(self._items)

    def __getitem__(self, i: int):
        return self._items[i]

    def __contains__(self, id_: str) -> bool:
        return id_ in self._index

    def get(self, id_: str):
        return self._items[self._index[id_]]

    def index_of(self, id_: str) -> int:
        return self._index[id_]

    @property
    def ids(self) -> list[str]:
        return [item.id for item in self._items]


class PassageCollection(_Collection):
    _kind = "passage"


class QuestionSet(_Collection):
    _kind = "question"


@dataclass
class RelevanceJudgments:
    """Binary relevance: question id -> set of relevant passage ids."""

    relevant: dict[str, set[str]] = field(default_factory=dict)

    def __getitem__(self, qid: str) -> set[str]:
        return self.relevant.get(qid, set())

    def __contains__(self, qid: str) -> bool:
        return qid in self.relevant

    def __len__(self) -> int:
        return len(self.relevant)

    def add(self, qid: str, pid: str) -> None:
        self.relevant.setdefault(qid, set()).add(pid)

    def problems(self, passages: PassageCollection, questions: QuestionSet,
                 require_positive: bool = False) -> list[str]:
        """Every dangling reference (and, optionally, unjudged question)."""
        out = []
        for qid in sorted(self.relevant):
            if qid not in questions:
                out.append(f"unknown question id {qid!r}")
            for pid in sorted(self.relevant[qid]):
                if pid not in passages:
                    out.append(f"question {qid!r} references unknown passage {pid!r}")
        if require_positive:
            for q in questions:
                if not self.relevant.get(q.id):
                    out.append(f"question {q.id!r} has no relevant passage")
        return out

    def validate(self, passages: PassageCollection, questions: QuestionSet,
                 require_positive: bool = False) -> None:
        problems = self.problems(passages, questions, require_positive)
        if problems:
            raise CorpusError("invalid relevance judgments:\n  " + "\n  ".join(problems))


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    questions: QuestionSet

    def __post_init__(self):
        if self.name not in ("train", "dev", "test"):
            raise CorpusError(f"unknown split name {self.name!r}")


def check_disjoint(*splits: DatasetSplit) -> None:
    seen: dict[str, str] = {}
    for split in splits:
        for q in split.questions:
            if q.id in seen:
                raise CorpusError(f"question {q.id!r} appears in both {seen[q.id]} and {split.name}")
            seen[q.id] = split.name


def _lines(path):
    with open(path, encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if line:
                yield lineno, line


def load_passages(path) -> PassageCollection:
    items, seen = [], {}
    for lineno, line in _lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise CorpusError(f"{path}:{lineno}: expected 2 tab-separated fields, got {len(parts)}")
        pid, text = parts
        if not pid or not text:
            raise CorpusError(f"{path}:{lineno}: empty id or text")
        if pid in seen:
            raise CorpusError(f"{path}:{lineno}: duplicate passage id {pid!r} (first on line {seen[pid]})")
        seen[pid] = lineno
        items.append(Passage(pid, text))
    return PassageCollection(items)


def load_questions(path) -> QuestionSet:
    items, seen = [], {}
    for lineno, line in _lines(path):
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise CorpusError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields, got {len(parts)}")
        qid, text = parts[0], parts[1]
        if not qid or not text:
            raise CorpusError(f"{path}:{lineno}: empty id or text")
        answers: tuple[str, ...] = ()
        if len(parts) == 3 and parts[2]:
            try:
                parsed = json.loads(parts[2])
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: answers field is not JSON: {exc}") from None
            if not isinstance(parsed, list) or not all(isinstance(a, str) for a in parsed):
                raise CorpusError(f"{path}:{lineno}: answers must be a JSON array of strings")
            answers = tuple(parsed)
        if qid in seen:
            raise CorpusError(f"{path}:{lineno}: duplicate question id {qid!r} (first on line {seen[qid]})")
        seen[qid] = lineno
        items.append(Question(qid, text, answers))
    return QuestionSet(items)


def load_qrels(path) -> RelevanceJudgments:
    qrels = RelevanceJudgments()
    for lineno, line in _lines(path):
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise CorpusError(f"{path}:{lineno}: expected 'qid<TAB>pid'")
        qrels.add(parts[0], parts[1])
    return qrels


def _check_field(value: str, what: str) -> str:
    if "\t" in value or "\n" in value or "\r" in value:
        raise CorpusError(f"{what} contains a tab or newline: {value!r}")
    return value


def write_passages(passages: Iterable[Passage], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in passages:
            fh.write(f"{_check_field(p.id, 'id')}\t{_check_field(p.text, 'text')}\n")


def write_questions(questions: Iterable[Question], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for q in questions:
            row = f"{_check_field(q.id, 'id')}\t{_check_field(q.text, 'text')}"
            if q.answers:
                row += "\t" + json.dumps(list(q.answers), ensure_ascii=False)
            fh.write(row + "\n")


def write_qrels(qrels: RelevanceJudgments, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid in sorted(qrels.relevant):
            for pid in sorted(qrels.relevant[qid]):
                fh.write(f"{qid}\t{pid}\n")


def load_split(name: str, questions_path, qrels_path=None):
    """Convenience: a named split plus its judgments (if given)."""
    split = DatasetSplit(name, load_questions(questions_path))
    qrels = load_qrels(qrels_path) if qrels_path else None
    return split, qrels


def ensure_path(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise CorpusError(f"no such file: {p}")
    return p
