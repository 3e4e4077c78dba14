"""Two-tower bag-of-subwords encoder scored by raw inner product.

Each tower is ``project(mean(embedding[ids]))`` with ``project(x) = W x + b``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels

TOWER_FIELDS = ("embedding", "weight", "bias")
_MAGIC = b"RDRCKPT1"
_HEADER = struct.Struct("<8sQQQ32s")  # magic, d, |V|, seed, config hash


@dataclass
class TowerParams:
    embedding: np.ndarray  # (|V|, d)
    weight: np.ndarray     # (d, d)
    bias: np.ndarray       # (d,)

    def arrays(self):
        return [self.embedding, self.weight, self.bias]

    def copy(self) -> "TowerParams":
        return TowerParams(*(a.copy() for a in self.arrays()))


@dataclass
class ModelParams:
    question: TowerParams
    passage: TowerParams
    seed: int = 0
    config_hash: str = ""

    @property
    def d(self) -> int:
        return self.question.embedding.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.question.embedding.shape[0]

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for side in ("question", "passage"):
            tower = getattr(self, side)
            out += [(f"{side}.{f}", getattr(tower, f)) for f in TOWER_FIELDS]
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(self.question.copy(), self.passage.copy(), self.seed, self.config_hash)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for name, a in self.named_arrays():
            h.update(name.encode())
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()


def init_tower(rng: np.random.Generator, vocab_size: int, d: int, noise: float) -> TowerParams:
    bound = 1.0 / np.sqrt(d)
    emb = rng.uniform(-bound, bound, size=(vocab_size, d))
    weight = np.eye(d)
    if noise:
        weight = weight + rng.uniform(-noise, noise, size=(d, d))
    return TowerParams(emb, weight, np.zeros(d))


def init_params(vocab_size: int, d: int, seed: int, noise: float = 0.01, config_hash: str = "") -> ModelParams:
    if d < 1:
        raise ValueError("embedding dimension must be >= 1")
    if vocab_size < 2:
        raise ValueError("vocabulary must hold at least the reserved tokens")
    rng = np.random.default_rng(seed)
    q = init_tower(rng, vocab_size, d, noise)
    p = init_tower(rng, vocab_size, d, noise)
    return ModelParams(q, p, seed, config_hash)


def pack(seqs, pad_id: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Flatten token-id sequences into ``(ids, offsets)``, dropping padding."""
    flat, offsets = [], [0]
    for seq in seqs:
        kept = [t for t in seq if t != pad_id] if pad_id is not None else list(seq)
        if not kept:
            raise ValueError("cannot encode an empty token sequence")
        flat.extend(kept)
        offsets.append(len(flat))
    return np.asarray(flat, dtype=np.int64), np.asarray(offsets, dtype=np.int64)


def pooled(tower: TowerParams, ids: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    if len(ids) and (ids.min() < 0 or ids.max() >= tower.embedding.shape[0]):
        raise ValueError("token id out of vocabulary range")
    return kernels.bag_mean(tower.embedding, ids, offsets)


def project(tower: TowerParams, pooled_: np.ndarray) -> np.ndarray:
    return pooled_ @ tower.weight.T + tower.bias


def encode_batch(tower: TowerParams, seqs, pad_id: int | None = None) -> np.ndarray:
    ids, offsets = pack(seqs, pad_id)
    return project(tower, pooled(tower, ids, offsets))


def encode(tower: TowerParams, ids, pad_id: int | None = None) -> np.ndarray:
    return encode_batch(tower, [ids], pad_id)[0]


def sim(q_emb, p_emb) -> float:
    q_emb, p_emb = np.asarray(q_emb, dtype=float), np.asarray(p_emb, dtype=float)
    if q_emb.shape != p_emb.shape:
        raise ValueError(f"dimension mismatch: {q_emb.shape} vs {p_emb.shape}")
    return float(q_emb @ p_emb)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(params: ModelParams, path) -> None:
    digest = bytes.fromhex(params.config_hash) if params.config_hash else b""
    header = _HEADER.pack(_MAGIC, params.d, params.vocab_size, params.seed, digest.ljust(32, b"\0")[:32])
    with open(path, "wb") as fh:
        fh.write(header)
        for _, a in params.named_arrays():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, d, v, seed, digest = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    shapes = [(v, d), (d, d), (d,)] * 2
    expected = _HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(raw) != expected:
        raise ValueError(f"{path}: truncated or corrupt checkpoint ({len(raw)} bytes, expected {expected})")
    arrays, pos = [], _HEADER.size
    for s in shapes:
        n = int(np.prod(s))
        arrays.append(np.frombuffer(raw, dtype="<f8", count=n, offset=pos).reshape(s).astype(np.float64))
        pos += 8 * n
    digest = digest.rstrip(b"\0")
    return ModelParams(TowerParams(*arrays[:3]), TowerParams(*arrays[3:]), seed, digest.hex())


def export_text(params: ModelParams, path) -> None:
    """Human-readable dump for debugging; not meant to be loaded back."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"d={params.d} vocab={params.vocab_size} seed={params.seed} config={params.config_hash}\n")
        for name, a in params.named_arrays():
            fh.write(f"# {name} {a.shape}\n")
            for row in np.atleast_2d(a):
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")
