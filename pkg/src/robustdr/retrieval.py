"""Dense passage index with exact top-k inner-product search."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .corpus import PassageCollection, QuestionSet
from .encoder import ModelParams, encode_batch
from .textproc import Vocabulary, encode_ids

_MAGIC = b"RDRINDX1"
_HEADER = struct.Struct("<8sQQ64s")  # magic, |P|, d, model hash (hex)


@dataclass
class DenseIndex:
    matrix: np.ndarray
    ids: list[str]
    model_hash: str = ""

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.ids):
            raise ValueError("index matrix rows must align with passage ids")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("index contains non-finite values")

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(_MAGIC, len(self.ids), self.d, self.model_hash.encode().ljust(64, b"\0")))
            fh.write(np.ascontiguousarray(self.matrix, dtype="<f8").tobytes())
            fh.write("\n".join(self.ids).encode("utf-8"))

    @classmethod
    def load(cls, path) -> "DenseIndex":
        with open(path, "rb") as fh:
            raw = fh.read()
        magic, n, d, mhash = _HEADER.unpack_from(raw)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not an index file")
        pos = _HEADER.size
        matrix = np.frombuffer(raw, dtype="<f8", count=n * d, offset=pos).reshape(n, d).astype(np.float64)
        ids = raw[pos + 8 * n * d:].decode("utf-8").split("\n") if n else []
        return cls(matrix, ids, mhash.rstrip(b"\0").decode())


def build_index(passages: PassageCollection, params: ModelParams, vocab: Vocabulary,
                chunk: int = 512) -> DenseIndex:
    if len(passages) == 0:
        raise ValueError("cannot index an empty passage collection")
    seqs = [encode_ids(p.text, vocab) for p in passages]
    rows = [encode_batch(params.passage, seqs[i:i + chunk]) for i in range(0, len(seqs), chunk)]
    return DenseIndex(np.vstack(rows), passages.ids, params.content_hash())


def search(index: DenseIndex, q_emb: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Exact top-``k`` by inner product; equal scores rank by passage position."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q_emb = np.asarray(q_emb, dtype=np.float64)
    if q_emb.shape != (index.d,):
        raise ValueError(f"query dimension {q_emb.shape} does not match index dimension {index.d}")
    rows, scores = kernels.topk_scan(index.matrix, q_emb, k)
    return [(index.ids[r], float(s)) for r, s in zip(rows, scores)]


# qid -> ranked [(pid, score)]
RunResult = dict


def encode_questions(texts: Sequence[str], params: ModelParams, vocab: Vocabulary) -> np.ndarray:
    return encode_batch(params.question, [encode_ids(t, vocab) for t in texts])


def run_queries(index: DenseIndex, questions: QuestionSet | Iterable, params: ModelParams,
                vocab: Vocabulary, k: int) -> RunResult:
    qs = list(questions)
    embs = encode_questions([q.text for q in qs], params, vocab)
    return {q.id: search(index, e, k) for q, e in zip(qs, embs)}


def write_run(run: RunResult, path, tag: str = "robustdr") -> None:
    """One line per hit: ``qid pid rank score tag``, tab-separated."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid, ranked in run.items():
            for rank, (pid, score) in enumerate(ranked, 1):
                fh.write(f"{qid}\t{pid}\t{rank}\t{score!r}\t{tag}\n")


def read_run(path) -> RunResult:
    run: RunResult = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 run fields")
            qid, pid, rank, score, _ = parts
            run.setdefault(qid, []).append((int(rank), pid, float(score)))
    return {q: [(pid, s) for _, pid, s in sorted(rows)] for q, rows in run.items()}
