"""Synthetic typos: random character edits, keyboard slips, common misspellings.

Randomness is organised so that a typo test set is a pure function of
``(seed, question id, setting, p)``: every question gets its own stream, and
inside a question every word position gets its own sub-stream for the coin
and the edit.  Changing the setting therefore changes which positions are
eligible, never the coins drawn at a position.
"""

from __future__ import annotations

import enum
import json
import random
import string
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Optional

from .corpus import PassageCollection, Question, QuestionSet, RelevanceJudgments
from .textproc import is_stopword, split_words, word_spans

LETTERS = string.ascii_lowercase
MIN_DESTRUCTIVE_LEN = 2


class TypoKind(str, enum.Enum):
    RandomInsert = "RandomInsert"
    RandomDelete = "RandomDelete"
    RandomSwap = "RandomSwap"
    RandomSubstitute = "RandomSubstitute"
    Keyboard = "Keyboard"
    Misspelling = "Misspelling"


FAMILIES: tuple[tuple[TypoKind, ...], ...] = (
    (TypoKind.RandomInsert, TypoKind.RandomDelete, TypoKind.RandomSwap, TypoKind.RandomSubstitute),
    (TypoKind.Keyboard,),
    (TypoKind.Misspelling,),
)


class TypoSetting(str, enum.Enum):
    RandomWords = "RandomWords"
    NonStopwords = "NonStopwords"
    DiscriminativeUtterances = "DiscriminativeUtterances"

    @classmethod
    def parse(cls, name: str) -> "TypoSetting":
        aliases = {
            "random": cls.RandomWords, "randomwords": cls.RandomWords,
            "nonstopwords": cls.NonStopwords, "non-stopwords": cls.NonStopwords,
            "discriminative": cls.DiscriminativeUtterances,
            "discriminativeutterances": cls.DiscriminativeUtterances,
        }
        try:
            return aliases[name.replace("_", "").lower()]
        except KeyError:
            raise ValueError(f"unknown typo setting {name!r}") from None


class InapplicableTypo(ValueError):
    """The requested transformation cannot be applied to this word."""


@lru_cache(maxsize=None)
def keyboard_adjacency() -> dict[str, tuple[str, ...]]:
    text = resources.files("robustdr").joinpath("data/keyboard_adjacency.tsv").read_text(encoding="utf-8")
    adj = {}
    for line in text.splitlines():
        if line.strip():
            key, nbrs = line.split("\t")
            adj[key] = tuple(nbrs.split(","))
    return adj


class MisspellingDictionary:
    def __init__(self, entries: dict[str, Iterable[str]]):
        self.entries: dict[str, tuple[str, ...]] = {}
        for key, variants in entries.items():
            if key != key.lower():
                raise ValueError(f"misspelling key must be lowercase: {key!r}")
            vs = tuple(v for v in variants if v and v != key)
            if vs:
                self.entries[key] = vs

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __getitem__(self, word: str) -> tuple[str, ...]:
        return self.entries[word]

    @classmethod
    def load(cls, path=None) -> "MisspellingDictionary":
        if path is None:
            text = resources.files("robustdr").joinpath("data/misspellings.tsv").read_text(encoding="utf-8")
        else:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        entries = {}
        for line in text.splitlines():
            if line.strip():
                key, variants = line.split("\t")
                entries[key.strip()] = [v.strip() for v in variants.split(",")]
        return cls(entries)


@lru_cache(maxsize=1)
def default_dictionary() -> MisspellingDictionary:
    return MisspellingDictionary.load()


def _alpha_positions(word: str) -> list[int]:
    return [i for i, c in enumerate(word) if c in LETTERS]


def applicable(word: str, kind: TypoKind, dictionary: Optional[MisspellingDictionary] = None) -> bool:
    alpha = _alpha_positions(word)
    if kind is TypoKind.Misspelling:
        return word in (dictionary or default_dictionary())
    if not alpha:
        return False
    if kind is TypoKind.RandomInsert:
        return True
    if len(word) < MIN_DESTRUCTIVE_LEN:
        return False
    if kind is TypoKind.RandomSwap:
        return any(word[i + 1] in LETTERS and word[i] != word[i + 1] for i in alpha if i + 1 < len(word))
    if kind is TypoKind.Keyboard:
        adj = keyboard_adjacency()
        return any(word[i] in adj for i in alpha)
    return True


def perturb_word(word: str, kind: TypoKind, rng: random.Random,
                 dictionary: Optional[MisspellingDictionary] = None) -> str:
    """Apply exactly one edit of ``kind``; raise :class:`InapplicableTypo` if impossible."""
    kind = TypoKind(kind)
    if not applicable(word, kind, dictionary):
        raise InapplicableTypo(f"{kind.value} cannot be applied to {word!r}")
    if kind is TypoKind.Misspelling:
        return rng.choice((dictionary or default_dictionary())[word])
    alpha = _alpha_positions(word)
    if kind is TypoKind.RandomInsert:
        pos = rng.randrange(len(word) + 1)
        return word[:pos] + rng.choice(LETTERS) + word[pos:]
    if kind is TypoKind.RandomDelete:
        pos = rng.choice(alpha)
        return word[:pos] + word[pos + 1:]
    if kind is TypoKind.RandomSwap:
        cands = [i for i in alpha if i + 1 < len(word) and word[i + 1] in LETTERS and word[i] != word[i + 1]]
        i = rng.choice(cands)
        return word[:i] + word[i + 1] + word[i] + word[i + 2:]
    if kind is TypoKind.RandomSubstitute:
        pos = rng.choice(alpha)
        new = rng.choice([c for c in LETTERS if c != word[pos]])
        return word[:pos] + new + word[pos + 1:]
    adj = keyboard_adjacency()
    pos = rng.choice([i for i in alpha if word[i] in adj])
    return word[:pos] + rng.choice(adj[word[pos]]) + word[pos + 1:]


def choose_and_apply(word: str, rng: random.Random,
                     dictionary: Optional[MisspellingDictionary] = None) -> Optional[tuple[str, TypoKind]]:
    """Uniform family, then uniform kind within it, skipping inapplicable kinds."""
    families = [[k for k in fam if applicable(word, k, dictionary)] for fam in FAMILIES]
    families = [fam for fam in families if fam]
    if not families:
        return None
    kind = rng.choice(rng.choice(families))
    return perturb_word(word, kind, rng, dictionary), kind


@dataclass(frozen=True)
class Edit:
    index: int
    original: str
    typoed: str
    kind: TypoKind

    def to_json(self) -> dict:
        return {"index": self.index, "original": self.original, "typoed": self.typoed, "kind": self.kind.value}

    @classmethod
    def from_json(cls, obj: dict) -> "Edit":
        return cls(int(obj["index"]), obj["original"], obj["typoed"], TypoKind(obj["kind"]))


@dataclass(frozen=True)
class TypoedQuestion:
    base_question_id: str
    text: str
    edits: tuple[Edit, ...] = ()
    flagged: bool = False  # no eligible word

    @property
    def edited_indices(self) -> set[int]:
        return {e.index for e in self.edits}


# ---------------------------------------------------------------- eligibility

def _common_span(q: list[str], p: list[str], used: list[bool]) -> tuple[int, int]:
    """Longest run shared by ``q`` (avoiding used positions) and ``p``; leftmost in ``q``."""
    best_len, best_start = 0, 0
    prev = [0] * (len(p) + 1)
    for i in range(1, len(q) + 1):
        cur = [0] * (len(p) + 1)
        if not used[i - 1]:
            qi = q[i - 1]
            for j in range(1, len(p) + 1):
                if qi == p[j - 1]:
                    cur[j] = prev[j - 1] + 1
                    n = cur[j]
                    start = i - n
                    if n > best_len or (n == best_len and start < best_start):
                        best_len, best_start = n, start
        prev = cur
    return best_start, best_len


def discriminative_utterances(question: str, passage: str, min_len: int = 2) -> list[tuple[int, int]]:
    """Maximal shared word runs (``[start, end)`` word indices in the question).

    Extraction is longest-first with leftmost tie-break, spans never overlap in
    the question, and runs made only of stopwords are dropped.
    """
    q, p = split_words(question), split_words(passage)
    if not q or not p:
        return []
    used = [False] * len(q)
    spans = []
    while True:
        start, n = _common_span(q, p, used)
        if n < min_len:
            break
        for i in range(start, start + n):
            used[i] = True
        if not all(is_stopword(w) for w in q[start:start + n]):
            spans.append((start, start + n))
    return sorted(spans)


def eligible_indices(question: str, setting, passages: Optional[Iterable[str]] = None) -> set[int]:
    setting = TypoSetting(setting)
    words = split_words(question)
    if setting is TypoSetting.RandomWords:
        return set(range(len(words)))
    if setting is TypoSetting.NonStopwords:
        return {i for i, w in enumerate(words) if not is_stopword(w)}
    if passages is None:
        raise ValueError("DiscriminativeUtterances needs the relevant passage text")
    if isinstance(passages, str):
        passages = [passages]
    out: set[int] = set()
    for text in passages:
        for a, b in discriminative_utterances(question, text):
            out.update(range(a, b))
    return out


# ------------------------------------------------------------------ questions

def _word_rng(base: int, i: int) -> random.Random:
    return random.Random(f"{base}:w{i}")


def perturb_question(question: Question, setting, p: float, rng: random.Random,
                     passages: Optional[Iterable[str]] = None,
                     dictionary: Optional[MisspellingDictionary] = None,
                     keep_budget: bool = True,
                     eligible: Optional[set[int]] = None) -> TypoedQuestion:
    """Typo each eligible word independently with probability ``p``.

    Coins are tossed for every word position.  With ``keep_budget`` (the
    default) heads that fall on ineligible words are moved to randomly chosen
    eligible words, so restricted settings inject as many typos as the
    unrestricted one rather than fewer.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"typo probability must lie in [0, 1], got {p}")
    spans = word_spans(question.text)
    words = [w for w, _, _ in spans]
    if eligible is None:
        eligible = eligible_indices(question.text, setting, passages)
    base = rng.getrandbits(64)
    streams = [_word_rng(base, i) for i in range(len(words))]
    heads = [s.random() < p for s in streams]

    targets = [i for i in range(len(words)) if heads[i] and i in eligible]
    if keep_budget:
        spill = sum(1 for i in range(len(words)) if heads[i] and i not in eligible)
        spare = [i for i in sorted(eligible) if not heads[i]]
        if spill and spare:
            relocate = random.Random(f"{base}:relocate")
            targets += relocate.sample(spare, min(spill, len(spare)))

    edits = []
    for i in sorted(targets):
        res = choose_and_apply(words[i], streams[i], dictionary)
        if res is not None:
            edits.append(Edit(i, words[i], res[0], res[1]))

    text = question.text
    for e in sorted(edits, key=lambda e: -e.index):
        _, a, b = spans[e.index]
        text = text[:a] + e.typoed + text[b:]
    return TypoedQuestion(question.id, text, tuple(edits), flagged=not eligible)


def question_rng(seed: int, qid: str) -> random.Random:
    return random.Random(f"{seed}:{qid}")


def build_typo_testset(questions: QuestionSet, setting, p: float, seed: int,
                       qrels: Optional[RelevanceJudgments] = None,
                       passages: Optional[PassageCollection] = None,
                       dictionary: Optional[MisspellingDictionary] = None,
                       keep_budget: bool = True) -> list[TypoedQuestion]:
    setting = TypoSetting(setting)
    if setting is TypoSetting.DiscriminativeUtterances and (qrels is None or passages is None):
        raise ValueError("DiscriminativeUtterances needs qrels and passages")
    out = []
    for q in questions:
        rel_texts = None
        if setting is TypoSetting.DiscriminativeUtterances:
            rel_texts = [passages.get(pid).text for pid in sorted(qrels[q.id]) if pid in passages]
        out.append(perturb_question(q, setting, p, question_rng(seed, q.id), rel_texts, dictionary, keep_budget))
    return out


def write_typo_questions(items: Iterable[TypoedQuestion], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in items:
            row = [t.base_question_id, t.text, json.dumps([e.to_json() for e in t.edits], sort_keys=True)]
            if t.flagged:
                row.append("flagged")
            fh.write("\t".join(row) + "\n")


def read_typo_questions(path) -> list[TypoedQuestion]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise ValueError(f"{path}:{lineno}: expected 3 or 4 fields")
            edits = tuple(Edit.from_json(o) for o in json.loads(parts[2]))
            out.append(TypoedQuestion(parts[0], parts[1], edits, flagged=len(parts) == 4 and parts[3] == "flagged"))
    return out


def as_questions(items: Iterable[TypoedQuestion], originals: QuestionSet) -> QuestionSet:
    """Typoed texts as a :class:`QuestionSet` (answers carried over)."""
    return QuestionSet(Question(t.base_question_id, t.text, originals.get(t.base_question_id).answers)
                       for t in items)
