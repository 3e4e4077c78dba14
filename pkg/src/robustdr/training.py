"""Softmax objectives with in-batch negatives, their gradients, and the trainer.

Four training modes share one forward/backward routine:

``DR``         L1 on (question, passage) with the other passages of the batch as negatives.
``DR_Aug``     L1 where each question is swapped for a typoed variant on a fair coin flip.
``DR_CL``      w1*L1 + w2*L2; L2 pulls a question toward its typoed variant and away
               from the other questions of the batch.
``DR_Aug_CL``  w1*L1 + w2*L2 + w3*L3; L3 is L1 computed for the typoed variant.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .corpus import PassageCollection, QuestionSet, RelevanceJudgments
from .encoder import ModelParams, TowerParams, init_params, pack
from .textproc import Vocabulary, encode_ids, word_spans
from .typogen import MisspellingDictionary, TypoSetting, choose_and_apply, perturb_question

log = logging.getLogger(__name__)


class TrainMode(str, enum.Enum):
    DR = "DR"
    DR_Aug = "DR_Aug"
    DR_CL = "DR_CL"
    DR_Aug_CL = "DR_Aug_CL"

    @property
    def needs_typos(self) -> bool:
        return self is not TrainMode.DR

    @property
    def n_losses(self) -> int:
        return {"DR": 1, "DR_Aug": 1, "DR_CL": 2, "DR_Aug_CL": 3}[self.value]


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------- scalar losses

def _logsumexp(x: np.ndarray) -> float:
    m = float(np.max(x))
    return m + math.log(float(np.sum(np.exp(x - m))))


def loss_l1(pos_score: float, neg_scores: Sequence[float]) -> float:
    """Negative log-likelihood of the positive among ``[pos] + negs``."""
    scores = np.concatenate([[pos_score], np.asarray(neg_scores, dtype=float)])
    return max(0.0, _logsumexp(scores) - float(pos_score))


def loss_l2(q_emb, typo_emb, other_q_embs) -> float:
    q = np.asarray(q_emb, dtype=float)
    others = np.atleast_2d(np.asarray(other_q_embs, dtype=float))
    if others.size == 0:
        raise ValueError("contrastive loss needs at least one other question")
    return loss_l1(float(q @ np.asarray(typo_emb, dtype=float)), others @ q)


def loss_l3(typo_q_emb, pos_passage_emb, in_batch_passage_embs) -> float:
    """L1 for the typoed question; ``in_batch_passage_embs`` are the negatives."""
    t = np.asarray(typo_q_emb, dtype=float)
    negs = np.asarray(in_batch_passage_embs, dtype=float).reshape(-1, t.shape[0])
    return loss_l1(float(t @ np.asarray(pos_passage_emb, dtype=float)), negs @ t)


# ---------------------------------------------------------------- batch losses

@dataclass
class LossWeights:
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0

    def __post_init__(self):
        ws = (self.w1, self.w2, self.w3)
        if any(w < 0 for w in ws) or not any(w > 0 for w in ws):
            raise ValueError(f"loss weights must be nonnegative with one positive: {ws}")

    @classmethod
    def equal(cls, mode: TrainMode) -> "LossWeights":
        k = TrainMode(mode).n_losses
        return cls(1.0 / k, 1.0 / k, 1.0 / k)


@dataclass
class TrainBatch:
    questions: list[Sequence[int]]
    passages: list[Sequence[int]]
    typoed: Optional[list[Sequence[int]]] = None

    def __post_init__(self):
        if len(self.questions) != len(self.passages):
            raise ValueError("questions and passages must be aligned")
        if len(self.questions) < 2:
            raise ValueError("in-batch negatives need a batch of at least 2")
        if self.typoed is not None and len(self.typoed) != len(self.questions):
            raise ValueError("typoed questions must be aligned with questions")

    def __len__(self):
        return len(self.questions)


def _xent_rows(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row loss with the diagonal as target, and dloss/dS."""
    m = S.max(axis=1, keepdims=True)
    e = np.exp(S - m)
    z = e.sum(axis=1, keepdims=True)
    losses = (m[:, 0] + np.log(z[:, 0])) - np.diag(S)
    grad = e / z
    grad[np.diag_indices_from(grad)] -= 1.0
    return np.maximum(losses, 0.0), grad


class _Side:
    """Forward cache for one group of sequences encoded by one tower."""

    def __init__(self, tower: TowerParams, seqs):
        self.tower = tower
        self.ids, self.offsets = pack(seqs)
        self.pooled = kernels.bag_mean(tower.embedding, self.ids, self.offsets)
        self.emb = self.pooled @ tower.weight.T + tower.bias
        self.grad = np.zeros_like(self.emb)

    def backward(self, g: "TowerGrads") -> None:
        if not self.grad.any():
            return
        g.weight += self.grad.T @ self.pooled
        g.bias += self.grad.sum(axis=0)
        kernels.bag_mean_backward(self.grad @ self.tower.weight, self.ids, self.offsets, g.embedding)


@dataclass
class TowerGrads:
    embedding: np.ndarray
    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def zeros_like(cls, t: TowerParams) -> "TowerGrads":
        return cls(np.zeros_like(t.embedding), np.zeros_like(t.weight), np.zeros_like(t.bias))

    def arrays(self):
        return [self.embedding, self.weight, self.bias]


@dataclass
class Gradients:
    question: TowerGrads
    passage: TowerGrads

    def arrays(self):
        return self.question.arrays() + self.passage.arrays()


@dataclass
class LossParts:
    total: float
    l1: Optional[float] = None
    l2: Optional[float] = None
    l3: Optional[float] = None


def augmentation_coins(rng: np.random.Generator, n: int) -> np.ndarray:
    """True (tails) where the typoed variant replaces the original question."""
    return rng.random(n) >= 0.5


def combined_loss(mode, batch: TrainBatch, params: ModelParams, weights: Optional[LossWeights] = None,
                  rng: Optional[np.random.Generator] = None, need_grad: bool = True,
                  coins: Optional[np.ndarray] = None):
    """Batch-mean objective for ``mode`` and (optionally) its full gradient.

    Returns ``(LossParts, Gradients | None)``.  ``DR`` and ``DR_Aug`` use L1
    alone and ignore ``weights``.  For ``DR_Aug`` the coin flips come from
    ``coins`` if given, else from ``rng``.
    """
    mode = TrainMode(mode)
    B = len(batch)
    if mode.needs_typos and batch.typoed is None:
        raise ValueError(f"mode {mode.value} needs typoed question variants")
    if weights is None:
        weights = LossWeights.equal(mode)
    if mode in (TrainMode.DR, TrainMode.DR_Aug):
        w1, w2, w3 = 1.0, 0.0, 0.0
    elif mode is TrainMode.DR_CL:
        w1, w2, w3 = weights.w1, weights.w2, 0.0
    else:
        w1, w2, w3 = weights.w1, weights.w2, weights.w3

    qseqs = list(batch.questions)
    if mode is TrainMode.DR_Aug:
        if coins is None:
            if rng is None:
                raise ValueError("DR_Aug needs an rng or explicit coins")
            coins = augmentation_coins(rng, B)
        qseqs = [t if c else q for q, t, c in zip(batch.questions, batch.typoed, coins)]

    q = _Side(params.question, qseqs)
    p = _Side(params.passage, batch.passages)
    t = _Side(params.question, batch.typoed) if (w2 > 0 or w3 > 0) else None

    parts = LossParts(0.0)
    total = 0.0
    if w1 > 0:
        S = q.emb @ p.emb.T
        losses, dS = _xent_rows(S)
        parts.l1 = float(losses.mean())
        total += w1 * parts.l1
        if need_grad:
            dS *= w1 / B
            q.grad += dS @ p.emb
            p.grad += dS.T @ q.emb
    if w2 > 0:
        M = q.emb @ q.emb.T
        pos = np.einsum("ij,ij->i", q.emb, t.emb)
        M[np.diag_indices(B)] = pos
        losses, dM = _xent_rows(M)
        parts.l2 = float(losses.mean())
        total += w2 * parts.l2
        if need_grad:
            dM *= w2 / B
            diag = np.diag(dM).copy()
            off = dM.copy()
            off[np.diag_indices(B)] = 0.0
            q.grad += off @ q.emb + off.T @ q.emb + diag[:, None] * t.emb
            t.grad += diag[:, None] * q.emb
    if w3 > 0:
        S = t.emb @ p.emb.T
        losses, dS = _xent_rows(S)
        parts.l3 = float(losses.mean())
        total += w3 * parts.l3
        if need_grad:
            dS *= w3 / B
            t.grad += dS @ p.emb
            p.grad += dS.T @ t.emb
    parts.total = total
    if not need_grad:
        return parts, None

    grads = Gradients(TowerGrads.zeros_like(params.question), TowerGrads.zeros_like(params.passage))
    q.backward(grads.question)
    if t is not None:
        t.backward(grads.question)
    p.backward(grads.passage)
    return parts, grads


# ---------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    lr: float
    total_steps: int
    warmup_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: ModelParams, lr: float, total_steps: int, warmup_fraction: float = 0.1,
                   **kw) -> "OptimizerState":
        arrays = [a for _, a in params.named_arrays()]
        return cls(lr, total_steps, warmup_fraction, m=[np.zeros_like(a) for a in arrays],
                   v=[np.zeros_like(a) for a in arrays], **kw)

    def lr_at(self, step: int) -> float:
        """Linear warm-up from 0, then linear decay to 0 at ``total_steps``."""
        warm = int(round(self.warmup_fraction * self.total_steps))
        if step < warm:
            return self.lr * step / warm
        if self.total_steps <= warm:
            return self.lr
        return self.lr * max(0.0, (self.total_steps - step) / (self.total_steps - warm))


def adam_step(params: ModelParams, grads: Gradients, state: OptimizerState) -> float:
    """In-place Adam update; returns the learning rate used."""
    arrays = [a for _, a in params.named_arrays()]
    garrays = grads.arrays()
    if len(arrays) != len(garrays) or any(a.shape != g.shape for a, g in zip(arrays, garrays)):
        raise ValueError("gradient shapes do not match parameters")
    lr = state.lr_at(state.step)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for a, g, m, v in zip(arrays, garrays, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if lr:
            a -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return lr


# ---------------------------------------------------------------- trainer

@dataclass
class TrainConfig:
    mode: str = "DR"
    batch_size: int = 16
    steps: int = 2000
    lr: float = 1e-3
    warmup: float = 0.1
    weights: Optional[tuple[float, float, float]] = None
    typo_p: float = 0.2
    typo_min_edits: int = 1
    d: int = 128
    init_noise: float = 0.01
    seed: int = 0
    eval_every: int = 0

    def __post_init__(self):
        self.mode = TrainMode(self.mode).value
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.steps < 0 or self.lr < 0 or not 0 <= self.warmup <= 1:
            raise ValueError("invalid steps / lr / warmup")
        if not 0 <= self.typo_p <= 1:
            raise ValueError("typo_p must lie in [0, 1]")

    def loss_weights(self) -> LossWeights:
        if self.weights is None:
            return LossWeights.equal(TrainMode(self.mode))
        return LossWeights(*self.weights)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class TrainingData:
    questions: QuestionSet
    passages: PassageCollection
    qrels: RelevanceJudgments
    vocab: Vocabulary
    dictionary: Optional[MisspellingDictionary] = None

    def __post_init__(self):
        self.qrels.validate(self.passages, self.questions, require_positive=True)
        self._q_ids = {q.id: encode_ids(q.text, self.vocab) for q in self.questions}
        self._p_ids: dict[str, tuple[int, ...]] = {}

    def positive(self, qid: str) -> str:
        return sorted(self.qrels[qid])[0]

    def question_ids(self, qid: str):
        return self._q_ids[qid]

    def passage_ids(self, pid: str):
        got = self._p_ids.get(pid)
        if got is None:
            got = self._p_ids[pid] = encode_ids(self.passages.get(pid).text, self.vocab)
        return got


@dataclass
class StepRecord:
    step: int
    loss: float
    lr: float
    dev_metric: Optional[float] = None


def typoed_variant(q, rng: random.Random, p: float, min_edits: int,
                   dictionary: Optional[MisspellingDictionary]) -> str:
    """A fresh typoed text for training; forces ``min_edits`` edits if the coins gave none."""
    tq = perturb_question(q, TypoSetting.RandomWords, p, rng, dictionary=dictionary)
    if tq.edits or min_edits <= 0:
        return tq.text
    spans = word_spans(q.text)
    order = list(range(len(spans)))
    rng.shuffle(order)
    for i in order:
        res = choose_and_apply(spans[i][0], rng, dictionary)
        if res is not None:
            _, a, b = spans[i]
            return q.text[:a] + res[0] + q.text[b:]
    return q.text


def train(data: TrainingData, config: TrainConfig,
          dev_eval: Optional[Callable[[ModelParams], float]] = None,
          init: Optional[ModelParams] = None) -> tuple[ModelParams, list[StepRecord]]:
    mode = TrainMode(config.mode)
    params = init.copy() if init is not None else init_params(
        len(data.vocab), config.d, config.seed, config.init_noise, config.digest())
    state = OptimizerState.for_params(params, config.lr, config.steps, config.warmup)
    weights = config.loss_weights()
    coin_rng = np.random.default_rng([config.seed, 7])
    qids = list(data.questions.ids)
    if len(qids) < config.batch_size:
        raise ValueError(f"need at least batch_size={config.batch_size} training questions, have {len(qids)}")
    B = config.batch_size

    history: list[StepRecord] = []
    epoch, order, cursor = 0, [], 0
    for step in range(config.steps):
        if cursor + B > len(order):
            order = list(np.random.default_rng([config.seed, epoch]).permutation(len(qids)))
            epoch += 1
            cursor = 0
        chosen = [qids[i] for i in order[cursor:cursor + B]]
        cursor += B
        typoed = None
        if mode.needs_typos:
            typoed = []
            for qid in chosen:
                rng = random.Random(f"{config.seed}:train:{step}:{qid}")
                text = typoed_variant(data.questions.get(qid), rng, config.typo_p,
                                      config.typo_min_edits, data.dictionary)
                typoed.append(encode_ids(text, data.vocab))
        batch = TrainBatch([data.question_ids(q) for q in chosen],
                           [data.passage_ids(data.positive(q)) for q in chosen], typoed)
        parts, grads = combined_loss(mode, batch, params, weights, coin_rng)
        if not math.isfinite(parts.total):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        lr = adam_step(params, grads, state)
        rec = StepRecord(step, parts.total, lr)
        if dev_eval is not None and config.eval_every and ((step + 1) % config.eval_every == 0 or step + 1 == config.steps):
            rec.dev_metric = dev_eval(params)
            log.info("step %d loss %.4f dev %.4f", step + 1, parts.total, rec.dev_metric)
        history.append(rec)
    return params, history


def write_log(history: Sequence[StepRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,loss,lr,dev_metric\n")
        for r in history:
            dev = "" if r.dev_metric is None else repr(r.dev_metric)
            fh.write(f"{r.step},{r.loss!r},{r.lr!r},{dev}\n")
