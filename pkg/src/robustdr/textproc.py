"""Word splitting, subword vocabulary and tokenizer, IDF, stopwords."""

from __future__ import annotations

import heapq
import math
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable

PAD = "[PAD]"
UNK = "[UNK]"
RESERVED = (PAD, UNK)
CONT = "##"
VISIBLE_ASCII = [chr(c) for c in range(33, 127)]

_WORD_RE = re.compile(r"[^\W_]+")


def word_spans(text: str) -> list[tuple[str, int, int]]:
    """``(lowercased word, start, end)`` for every alphanumeric run in ``text``."""
    return [(m.group().lower(), m.start(), m.end()) for m in _WORD_RE.finditer(text)]


def split_words(text: str) -> list[str]:
    return [w for w, _, _ in word_spans(text)]


class Vocabulary:
    """Subword inventory. Continuation pieces carry a ``##`` prefix."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens = list(tokens)
        self.token_to_id = {}
        for i, t in enumerate(self.tokens):
            if t in self.token_to_id:
                raise ValueError(f"duplicate vocabulary entry {t!r}")
            self.token_to_id[t] = i
        for r in RESERVED:
            if r not in self.token_to_id:
                raise ValueError(f"vocabulary lacks reserved token {r}")
        missing = [c for c in VISIBLE_ASCII if c not in self.token_to_id or CONT + c not in self.token_to_id]
        if missing:
            raise ValueError(f"vocabulary lacks base characters {''.join(missing)!r}")
        self._max_len = max(len(t) for t in self.tokens)
        self._cache: dict[str, tuple[int, ...]] = {}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh if line.rstrip("\n"))

    def word_ids(self, word: str) -> tuple[int, ...]:
        cached = self._cache.get(word)
        if cached is None:
            cached = self._cache[word] = tuple(self.token_to_id[p] for p in _greedy(word, self))
        return cached


def _greedy(word: str, vocab: Vocabulary) -> list[str]:
    pieces, start = [], 0
    while start < len(word):
        end = min(len(word), start + vocab._max_len)
        piece = None
        while end > start:
            cand = word[start:end] if start == 0 else CONT + word[start:end]
            if cand in vocab.token_to_id:
                piece = cand
                break
            end -= 1
        if piece is None:
            return [UNK]
        pieces.append(piece)
        start = end
    return pieces


def tokenize(word: str, vocab: Vocabulary) -> list[str]:
    """Greedy longest-prefix WordPiece split of a single word."""
    if not word:
        raise ValueError("cannot tokenize an empty word")
    return _greedy(word, vocab)


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    word_spans: tuple[tuple[int, int], ...]  # [start, end) token positions per word


def tokenize_words(words: Iterable[str], vocab: Vocabulary) -> TokenSequence:
    ids: list[int] = []
    spans = []
    for w in words:
        piece_ids = vocab.word_ids(w)
        spans.append((len(ids), len(ids) + len(piece_ids)))
        ids.extend(piece_ids)
    return TokenSequence(tuple(ids), tuple(spans))


def tokenize_text(text: str, vocab: Vocabulary) -> TokenSequence:
    return tokenize_words(split_words(text), vocab)


def encode_ids(text: str, vocab: Vocabulary) -> tuple[int, ...]:
    """Token ids for ``text``; a text without words becomes a lone ``[UNK]``."""
    ids = tokenize_text(text, vocab).ids
    return ids if ids else (vocab.unk_id,)


def base_alphabet(words: Iterable[str] = ()) -> list[str]:
    chars = list(VISIBLE_ASCII)
    extra = sorted({c for w in words for c in w} - set(chars))
    chars += extra
    return list(RESERVED) + chars + [CONT + c for c in chars]


def build_vocab(texts: Iterable[str], target_size: int) -> Vocabulary:
    """Grow a vocabulary from single characters by merging frequent adjacent pairs.

    Pair counts are taken over word types weighted by frequency; ties go to the
    lexicographically smaller ``(left, right)`` pair.
    """
    counts = Counter()
    for text in texts:
        counts.update(split_words(text))
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    tokens = base_alphabet(counts)
    if target_size < len(tokens):
        raise ValueError(f"target_size {target_size} below base alphabet size {len(tokens)}")
    known = set(tokens)

    words = [[w[0]] + [CONT + c for c in w[1:]] for w in counts]
    freqs = list(counts.values())
    pair_count: Counter = Counter()
    where: dict[tuple[str, str], set[int]] = {}
    for wi, pieces in enumerate(words):
        for pair in zip(pieces, pieces[1:]):
            pair_count[pair] += freqs[wi]
            where.setdefault(pair, set()).add(wi)
    heap = [(-c, pair) for pair, c in pair_count.items()]
    heapq.heapify(heap)

    while len(tokens) < target_size and heap:
        negc, pair = heapq.heappop(heap)
        if pair_count.get(pair, 0) != -negc or negc == 0:
            continue  # stale entry
        left, right = pair
        merged = left + right[len(CONT):]
        if merged not in known:
            known.add(merged)
            tokens.append(merged)
        touched = Counter()
        for wi in sorted(where.pop(pair, ())):
            pieces = words[wi]
            f = freqs[wi]
            for p in zip(pieces, pieces[1:]):
                pair_count[p] -= f
                touched[p] += 0
            out, i = [], 0
            while i < len(pieces):
                if i + 1 < len(pieces) and pieces[i] == left and pieces[i + 1] == right:
                    out.append(merged)
                    i += 2
                else:
                    out.append(pieces[i])
                    i += 1
            words[wi] = out
            for p in zip(out, out[1:]):
                pair_count[p] += f
                touched[p] += 0
                where.setdefault(p, set()).add(wi)
        for p in touched:
            c = pair_count.get(p, 0)
            if c <= 0:
                pair_count.pop(p, None)
            elif p != pair:
                heapq.heappush(heap, (-c, p))
        pair_count.pop(pair, None)
    return Vocabulary(tokens)


def detokenize(pieces: Iterable[str]) -> str:
    return "".join(p[len(CONT):] if p.startswith(CONT) else p for p in pieces)


class IdfTable:
    """Document frequencies of words over a passage collection."""

    def __init__(self, df: dict[str, int], n_docs: int):
        self.df = dict(df)
        self.n_docs = n_docs
        for term, f in self.df.items():
            if not 1 <= f <= n_docs:
                raise ValueError(f"document frequency of {term!r} out of range: {f}")

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "IdfTable":
        df: Counter = Counter()
        n = 0
        for text in texts:
            n += 1
            df.update(set(split_words(text)))
        return cls(df, n)

    def idf(self, term: str) -> float:
        return math.log((1 + self.n_docs) / (1 + self.df.get(term, 0)))


def idf(term: str, table: IdfTable) -> float:
    """Smoothed ``ln((1 + N) / (1 + df))``."""
    return table.idf(term)


def relative_importance(word: str, question_words: list[str], table: IdfTable) -> float:
    """Share of the question's summed IDF carried by ``word``."""
    if not question_words:
        raise ValueError("question has no words")
    total = sum(table.idf(w) for w in question_words)
    if total == 0.0:
        return 1.0 / len(question_words)
    return table.idf(word) / total


def importances(question_words: list[str], table: IdfTable) -> list[float]:
    vals = [table.idf(w) for w in question_words]
    total = sum(vals)
    if total == 0.0:
        return [1.0 / len(vals)] * len(vals)
    return [v / total for v in vals]


@lru_cache(maxsize=None)
def stopwords() -> frozenset[str]:
    text = resources.files("robustdr").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


def is_stopword(word: str) -> bool:
    return word.lower() in stopwords()
