import math

import numpy as np
import pytest

from langlab.errors import ConfigError, ContextError, FitError, TrainingDivergedError
from langlab.lm import (
    AdamW,
    NGramModel,
    TrainConfig,
    TransformerConfig,
    TransformerModel,
    generate_greedy,
    grad_check,
    load_checkpoint,
    lr_at,
    make_batch_arrays,
    ngram_fit,
    save_checkpoint,
    train,
)

TINY = TransformerConfig(
    vocab_size=11, layers=1, model_dim=8, heads=2, ff_hidden=10, context=8, dtype="float64"
)


# -- n-gram ------------------------------------------------------------------


def test_ngram_count_ratio():
    model = ngram_fit([[0, 1, 0, 1]], order=2, smoothing_k=0.0, vocab_size=3)
    scores = model.next_token_scores([[0]])
    assert math.exp(scores[0, 1]) == pytest.approx(1.0)


def test_ngram_backoff_to_unigram():
    model = ngram_fit([[0, 0, 1]], order=3, smoothing_k=0.5, vocab_size=4)
    unseen = model.next_token_scores([[3, 3]])[0]
    unigram = model.next_token_scores([[]])[0]
    assert np.allclose(unseen, unigram)


def test_ngram_hand_counted_table():
    lines = [[0, 1], [0, 1], [0, 2], [1, 2], [2, 2]]
    k = 1.0
    v = 3
    model = ngram_fit(lines, order=2, smoothing_k=k, vocab_size=v)
    # after context 0: counts {1: 2, 2: 1}, total 3
    probs = np.exp(model.next_token_scores([[0]])[0])
    assert probs[1] == pytest.approx((2 + k) / (3 + k * v))
    assert probs[2] == pytest.approx((1 + k) / (3 + k * v))
    assert probs[0] == pytest.approx(k / (3 + k * v))


def test_ngram_scores_are_distribution():
    model = ngram_fit([[0, 1, 2]], order=2, smoothing_k=0.0, vocab_size=5)
    scores = model.next_token_scores([[0], [4]])
    assert np.isfinite(scores).all()
    sm = np.exp(scores) / np.exp(scores).sum(axis=-1, keepdims=True)
    assert np.allclose(sm.sum(axis=-1), 1.0, atol=1e-6)


def test_ngram_empty_corpus_rejected():
    with pytest.raises(FitError):
        ngram_fit([], order=2)
    with pytest.raises(ConfigError):
        NGramModel(order=0, vocab_size=5)


# -- transformer mechanics ------------------------------------------------------


def test_output_shape_and_normalization(rng):
    cfg = TransformerConfig(vocab_size=29, layers=2, model_dim=16, heads=2, context=12)
    model = TransformerModel(cfg, seed=0)
    ids = rng.integers(0, 29, size=(3, 7))
    logits = model.forward(ids)
    assert logits.shape == (3, 7, 29)
    probs = np.exp(logits - logits.max(-1, keepdims=True))
    probs /= probs.sum(-1, keepdims=True)
    assert np.allclose(probs.sum(-1), 1.0, atol=1e-6)


def test_causality(rng):
    cfg = TransformerConfig(vocab_size=31, layers=2, model_dim=16, heads=2, context=16)
    model = TransformerModel(cfg, seed=1)
    ids = rng.integers(0, 31, size=(1, 9))
    base = model.forward(ids.copy())
    pert = ids.copy()
    pert[0, 5] = (pert[0, 5] + 1) % 31
    out = model.forward(pert)
    assert np.allclose(base[0, :5], out[0, :5])
    assert not np.allclose(base[0, 5:], out[0, 5:])


def test_init_determinism():
    cfg = TransformerConfig(vocab_size=17, layers=1, model_dim=8, heads=2, context=8)
    a = TransformerModel(cfg, seed=5)
    b = TransformerModel(cfg, seed=5)
    for key in a.params:
        assert np.array_equal(a.params[key], b.params[key])
    c = TransformerModel(cfg, seed=6)
    assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params)


def test_config_validation():
    with pytest.raises(ConfigError):
        TransformerConfig(model_dim=10, heads=4)
    with pytest.raises(ConfigError):
        TrainConfig(steps=100, warmup=100)


def test_context_overflow(rng):
    cfg = TransformerConfig(vocab_size=7, layers=1, model_dim=8, heads=2, context=4)
    model = TransformerModel(cfg, seed=0)
    with pytest.raises(ContextError):
        model.forward(rng.integers(0, 7, size=(1, 9)))
    with pytest.raises(ContextError):
        model.next_token_scores([[1] * 9])


# -- schedule and optimizer -------------------------------------------------------


def test_lr_schedule_endpoints():
    tc = TrainConfig(steps=10_000, warmup=256, lr=1e-4)
    assert lr_at(0, tc) == 0.0
    assert lr_at(256, tc) == pytest.approx(1e-4)
    assert abs(lr_at(10_000, tc)) < 1e-12
    assert lr_at(128, tc) == pytest.approx(5e-5)


def test_adamw_decays_matrices_only():
    params = {"w": np.ones((2, 2), dtype=np.float32), "g": np.ones(2, dtype=np.float32)}
    tc = TrainConfig(steps=10, warmup=1, lr=0.1, weight_decay=0.5)
    opt = AdamW(params, tc)
    zero_grads = {k: np.zeros_like(v) for k, v in params.items()}
    opt.step(params, zero_grads, lr=0.1)
    assert np.all(params["w"] < 1.0)  # decay pulled matrices down
    assert np.all(params["g"] == 1.0)  # gains untouched by decay at zero grad


# -- training loop -------------------------------------------------------------


def test_zero_step_train_returns_init():
    cfg = TransformerConfig(vocab_size=13, layers=1, model_dim=8, heads=2, context=8)
    model = TransformerModel(cfg, seed=2)
    before = {k: v.copy() for k, v in model.params.items()}
    tc = TrainConfig(steps=0, warmup=0, batch=2, seed=0)
    model, trajectory = train(model, [[1, 2, 3]], tc, pad_id=0)
    assert trajectory == []
    for key in before:
        assert np.array_equal(before[key], model.params[key])


def test_toy_corpus_loss_halves(rng):
    lines = []
    for _ in range(50):
        base = list(rng.integers(2, 28, size=int(rng.integers(3, 9))))
        lines.append(base + base)
    cfg = TransformerConfig(vocab_size=28, layers=2, model_dim=32, heads=2, ff_hidden=64, context=64)
    model = TransformerModel(cfg, seed=0)
    tc = TrainConfig(batch=16, steps=500, warmup=50, lr=1e-3, seed=0, log_every=100)
    model, trajectory = train(model, lines, tc, pad_id=0)
    assert trajectory[-1]["loss"] <= 0.5 * trajectory[0]["loss"]


def test_train_determinism():
    lines = [[1, 2, 3, 4], [2, 3, 4, 5], [1, 3, 5, 2]]
    cfg = TransformerConfig(vocab_size=8, layers=1, model_dim=8, heads=2, context=8)
    tc = TrainConfig(batch=2, steps=20, warmup=4, lr=1e-3, seed=3, log_every=5)
    _, t1 = train(TransformerModel(cfg, seed=1), lines, tc, pad_id=0)
    _, t2 = train(TransformerModel(cfg, seed=1), lines, tc, pad_id=0)
    assert [r["loss"] for r in t1] == [r["loss"] for r in t2]


def test_divergence_detected():
    cfg = TransformerConfig(vocab_size=8, layers=1, model_dim=8, heads=2, context=8)
    model = TransformerModel(cfg, seed=0)
    model.params["tok_emb"][:] = np.nan
    tc = TrainConfig(batch=2, steps=5, warmup=1, seed=0)
    with pytest.raises(TrainingDivergedError) as err:
        train(model, [[1, 2, 3]], tc, pad_id=0)
    assert err.value.step == 0


def test_train_rejects_overlong_lines():
    cfg = TransformerConfig(vocab_size=8, layers=1, model_dim=8, heads=2, context=4)
    model = TransformerModel(cfg, seed=0)
    tc = TrainConfig(batch=1, steps=1, warmup=0, seed=0)
    with pytest.raises(ContextError):
        train(model, [[1] * 10], tc, pad_id=0)


def test_batch_arrays_padding_and_answer_span():
    lines = [[5, 6, 7], [5, 9, 2, 6, 7, 3]]
    inputs, targets, mask = make_batch_arrays(lines, pad_id=0, sep_id=9, restrict_answer=True)
    assert inputs.shape == targets.shape == mask.shape == (2, 5)
    # first line has no separator: all real targets count
    assert mask[0].tolist() == [1, 1, 0, 0, 0]
    # second line: separator at position 1; only targets after it count
    assert mask[1].tolist() == [0, 1, 1, 1, 1]
    inputs, targets, mask = make_batch_arrays(lines, pad_id=0, sep_id=9, restrict_answer=False)
    assert mask[1].tolist() == [1, 1, 1, 1, 1]


# -- gradient check ---------------------------------------------------------------


def test_grad_check_small_model(rng):
    model = TransformerModel(TINY, seed=1)
    assert model.n_params() <= 1000
    ids = rng.integers(0, 11, size=(2, 5))
    targets = rng.integers(0, 11, size=(2, 5))
    mask = np.ones((2, 5))
    mask[1, 3:] = 0.0
    err = grad_check(model, ids, targets, mask)
    assert err < 1e-4
    bad = grad_check(model, ids, targets, mask, corrupt="L0.wv")
    assert bad > 1e-4


def test_grad_check_requires_float64(rng):
    cfg = TransformerConfig(vocab_size=7, layers=1, model_dim=8, heads=2, context=4)
    model = TransformerModel(cfg, seed=0)
    with pytest.raises(ConfigError):
        grad_check(model, np.zeros((1, 2), dtype=int), np.zeros((1, 2), dtype=int), np.ones((1, 2)))


# -- inference helpers --------------------------------------------------------------


def test_next_token_scores_gathers_last_position(rng):
    cfg = TransformerConfig(vocab_size=9, layers=1, model_dim=8, heads=2, context=8)
    model = TransformerModel(cfg, seed=0)
    ctxs = [[1, 2, 3], [4]]
    scores = model.next_token_scores(ctxs)
    single = model.forward(np.array([[1, 2, 3]]))
    assert np.allclose(scores[0], single[0, 2])


def test_generate_greedy_stops_at_eos():
    class Fixed:
        vocab_size = 5
        max_context = 100

        def next_token_scores(self, ctxs):
            out = np.zeros((len(ctxs), 5))
            for i, c in enumerate(ctxs):
                out[i, 3] = 1.0 if len(c) < 4 else 0.0
                out[i, 4] = 0.5 if len(c) < 4 else 1.0  # switch to eos at length 4
            return out

    gens = generate_greedy(Fixed(), [[0], [0, 1]], max_new_tokens=10, eos_id=4, pad_id=0)
    assert gens[0] == [3, 3, 3, 4]
    assert gens[1] == [3, 3, 4]


# -- checkpoints ---------------------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path, rng):
    cfg = TransformerConfig(vocab_size=19, layers=2, model_dim=16, heads=2, context=10)
    model = TransformerModel(cfg, seed=4)
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    again = load_checkpoint(path)
    assert again.cfg == model.cfg
    for key in model.params:
        assert np.array_equal(model.params[key], again.params[key])
    ids = rng.integers(0, 19, size=(2, 6))
    assert np.array_equal(model.forward(ids), again.forward(ids))
