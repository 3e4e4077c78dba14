import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from robustdr.corpus import Passage, PassageCollection, Question, QuestionSet, RelevanceJudgments
from robustdr.encoder import init_params
from robustdr.textproc import build_vocab
from robustdr.training import (LossWeights, OptimizerState, TrainBatch, TrainConfig, TrainingData,
                               TrainingDiverged, TrainMode, adam_step, augmentation_coins, combined_loss,
                               loss_l1, loss_l2, loss_l3, train, typoed_variant)


def random_case(seed, d=8, V=32, B=4):
    rng = np.random.default_rng(seed)
    params = init_params(V, d, seed, noise=0.3)
    for _, a in params.named_arrays():
        a += rng.normal(0, 0.5, a.shape)

    def seq():
        return [int(t) for t in rng.integers(0, V, rng.integers(1, 6))]
    batch = TrainBatch([seq() for _ in range(B)], [seq() for _ in range(B)], [seq() for _ in range(B)])
    coins = rng.random(B) >= 0.5
    return params, batch, coins


def gradient_error(mode, seed):
    params, batch, coins = random_case(seed)
    mode = TrainMode(mode)
    _, grads = combined_loss(mode, batch, params, coins=coins)
    analytic = {name: g for (name, _), g in zip(params.named_arrays(), grads.arrays())}
    qseqs = batch.questions
    if mode is TrainMode.DR_Aug:
        qseqs = [t if c else q for q, t, c in zip(batch.questions, batch.typoed, coins)]
    V = params.vocab_size
    bags = (oracles.bag_matrix(qseqs, V), oracles.bag_matrix(batch.passages, V), oracles.bag_matrix(batch.typoed, V))
    w = LossWeights.equal(mode)
    numeric = oracles.central_differences(mode.value, params.named_arrays(), bags, (w.w1, w.w2, w.w3))
    return oracles.max_relative_error(analytic, numeric)


# ------------------------------------------------------------------ scalar losses

@pytest.mark.parametrize("n", [1, 3, 47])
def test_l1_equal_negatives(n):
    assert abs(loss_l1(0.7, [0.7] * n) - math.log(n + 1)) < 1e-9


@given(st.floats(-20, 20), st.lists(st.floats(-20, 20), min_size=1, max_size=10), st.floats(-50, 50))
def test_l1_shift_invariant_and_nonnegative(pos, negs, c):
    base = loss_l1(pos, negs)
    assert base >= 0
    assert abs(loss_l1(pos + c, [x + c for x in negs]) - base) < 1e-12 * max(1.0, abs(c) + 40)


def test_l1_extreme_scores_stay_finite():
    assert loss_l1(1e4, [-1e4]) == 0.0
    assert math.isfinite(loss_l1(-1e4, [1e4]))


def test_l2_prefers_typo_close_to_question():
    q = np.array([1.0, 0.0])
    others = np.array([[0.0, 1.0], [-1.0, 0.0]])
    assert loss_l2(q, q, others) < loss_l2(q, np.array([0.0, 1.0]), others)
    with pytest.raises(ValueError):
        loss_l2(q, q, np.empty((0, 2)))


def test_l3_is_l1_on_typoed_question():
    t = np.array([0.5, -1.0, 2.0])
    pos = np.array([1.0, 1.0, 1.0])
    negs = np.array([[0.0, 1.0, 0.0], [2.0, 0.0, 0.0]])
    assert loss_l3(t, pos, negs) == pytest.approx(loss_l1(t @ pos, negs @ t), abs=1e-15)


def test_batch_losses_match_scalar_definitions():
    params, batch, _ = random_case(3)
    from robustdr.encoder import encode_batch
    q = encode_batch(params.question, batch.questions)
    p = encode_batch(params.passage, batch.passages)
    t = encode_batch(params.question, batch.typoed)
    B = len(batch)
    l1 = np.mean([loss_l1(q[i] @ p[i], [q[i] @ p[j] for j in range(B) if j != i]) for i in range(B)])
    l2 = np.mean([loss_l2(q[i], t[i], [q[j] for j in range(B) if j != i]) for i in range(B)])
    l3 = np.mean([loss_l3(t[i], p[i], [p[j] for j in range(B) if j != i]) for i in range(B)])
    parts, _ = combined_loss("DR_Aug_CL", batch, params, need_grad=False)
    assert parts.l1 == pytest.approx(l1, abs=1e-12)
    assert parts.l2 == pytest.approx(l2, abs=1e-12)
    assert parts.l3 == pytest.approx(l3, abs=1e-12)
    assert parts.total == pytest.approx((l1 + l2 + l3) / 3, abs=1e-12)


# ------------------------------------------------------------------ gradients

@pytest.mark.parametrize("mode", [m.value for m in TrainMode])
def test_gradients_match_finite_differences(mode):
    for seed in range(5):
        assert gradient_error(mode, seed) < 1e-4


def test_weights_validation_and_equal():
    assert LossWeights.equal("DR_CL").w1 == 0.5
    assert LossWeights.equal("DR_Aug_CL").w3 == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        LossWeights(0, 0, 0)
    with pytest.raises(ValueError):
        LossWeights(-1, 1, 1)


def test_unit_l1_weight_reduces_to_dr():
    params, batch, _ = random_case(11)
    a, ga = combined_loss("DR", batch, params)
    b, gb = combined_loss("DR_Aug_CL", batch, params, weights=LossWeights(1, 0, 0))
    assert a.total == b.total
    for x, y in zip(ga.arrays(), gb.arrays()):
        assert np.array_equal(x, y)


def test_dr_aug_coins_all_heads_equal_dr():
    params, batch, _ = random_case(5)
    a, ga = combined_loss("DR", batch, params)
    b, gb = combined_loss("DR_Aug", batch, params, coins=np.zeros(len(batch), dtype=bool))
    assert a.total == b.total


def test_typo_modes_need_variants():
    params, batch, _ = random_case(0)
    batch.typoed = None
    with pytest.raises(ValueError, match="typoed"):
        combined_loss("DR_CL", batch, params)


def test_batch_of_one_rejected():
    with pytest.raises(ValueError):
        TrainBatch([[1]], [[2]])


def test_coin_frequency():
    coins = augmentation_coins(np.random.default_rng(0), 20000)
    assert abs(coins.mean() - 0.5) < 0.02


# ------------------------------------------------------------------ optimizer

def test_lr_schedule():
    st_ = OptimizerState(lr=1.0, total_steps=100, warmup_fraction=0.1)
    assert st_.lr_at(0) == 0.0
    assert st_.lr_at(5) == pytest.approx(0.5)
    assert st_.lr_at(10) == pytest.approx(1.0)
    assert st_.lr_at(55) == pytest.approx(0.5)
    assert st_.lr_at(100) == 0.0


def test_adam_first_step_moves_by_lr_sign():
    params = init_params(4, 2, 0)
    before = params.copy()
    grads = combined_loss("DR", TrainBatch([[2, 3], [1]], [[1], [2, 3]]), params)[1]
    state = OptimizerState.for_params(params, lr=0.1, total_steps=10, warmup_fraction=0.0)
    lr = adam_step(params, grads, state)
    assert lr == 0.1
    for (_, a), (_, b), g in zip(params.named_arrays(), before.named_arrays(), grads.arrays()):
        # bias-corrected first step is lr * g / (|g| + eps)
        expected = b - 0.1 * g / (np.abs(g) + 1e-8)
        assert np.allclose(a, expected, atol=1e-12)


# ------------------------------------------------------------------ trainer

@pytest.fixture(scope="module")
def tiny_data():
    names = ["alder", "birch", "cedar", "dogwood", "elm", "fir", "ginkgo", "hazel", "ivy", "juniper"]
    passages = PassageCollection(Passage(f"p{i}", f"the {n} tree grows tall in the {n} grove")
                                 for i, n in enumerate(names))
    questions = QuestionSet(Question(f"q{i}", f"where does the {n} tree grow") for i, n in enumerate(names))
    qrels = RelevanceJudgments()
    for i in range(len(names)):
        qrels.add(f"q{i}", f"p{i}")
    vocab = build_vocab([p.text for p in passages] + [q.text for q in questions], 300)
    return TrainingData(questions, passages, qrels, vocab)


@pytest.mark.parametrize("mode", [m.value for m in TrainMode])
def test_training_is_deterministic_and_lowers_loss(tiny_data, mode):
    cfg = TrainConfig(mode=mode, batch_size=4, steps=60, lr=5e-2, d=16)
    a, hist = train(tiny_data, cfg)
    b, _ = train(tiny_data, cfg)
    assert a.content_hash() == b.content_hash()
    assert np.mean([r.loss for r in hist[-10:]]) < np.mean([r.loss for r in hist[:10]])


def test_training_needs_enough_questions(tiny_data):
    with pytest.raises(ValueError, match="batch_size"):
        train(tiny_data, TrainConfig(batch_size=64, steps=1, d=4))


def test_divergence_is_reported(tiny_data):
    init = init_params(len(tiny_data.vocab), 4, 0)
    init.question.embedding[:] = np.nan
    with pytest.raises(TrainingDiverged):
        train(tiny_data, TrainConfig(batch_size=4, steps=3, d=4), init=init)


def test_dev_eval_hook(tiny_data):
    calls = []
    cfg = TrainConfig(batch_size=4, steps=10, d=4, eval_every=5)
    _, hist = train(tiny_data, cfg, dev_eval=lambda p: calls.append(1) or 0.5)
    assert len(calls) == 2 and hist[4].dev_metric == 0.5


def test_typoed_variant_forces_an_edit():
    q = Question("q", "where does the hazel tree grow")
    for s in range(20):
        assert typoed_variant(q, random.Random(s), 0.0, 1, None) != q.text
    assert typoed_variant(q, random.Random(0), 0.0, 0, None) == q.text


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(mode="BERT")
    with pytest.raises(ValueError):
        TrainConfig(typo_p=2.0)
    assert TrainConfig().digest() == TrainConfig().digest()
    assert TrainConfig(seed=1).digest() != TrainConfig().digest()
