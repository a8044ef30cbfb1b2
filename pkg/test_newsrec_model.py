#!/usr/bin/env python3
"""
Tests for the news/user encoders, scoring, ranking loss and parameter containers
"""

import math
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from src.core.errors import CheckpointError, ConfigError, DataError, ProtocolError, ShapeError
from src.core.models import HyperParams
from src.model.checkpoint import checkpoint_hyperparams, load_checkpoint, save_checkpoint
from src.model.newsrec import (
    TrainingSample,
    encode_news,
    encode_user,
    loss_and_gradient,
    ranking_loss,
    sample_loss,
    score,
    user_gradient,
    user_loss,
)
from src.model.params import EMBEDDING, GradientSet, ModelParams, build_layout, load_pretrained_embeddings, parameter_count
from src.nn.primitives import additive_attention_pool, conv1d, gru_step, multihead_self_attention
from src.nn.rng import root


def _params(hp, seed=0):
    return ModelParams.initialize(hp, root(seed))


def test_hyperparams_defaults_and_validation():
    hp = HyperParams()
    assert hp.cnn_filters == hp.num_heads * hp.head_dim == 400
    assert hp.title_len == 30 and hp.history_len == 50 and hp.negatives_H == 4
    with pytest.raises(ValueError):
        HyperParams(cnn_window=4)
    with pytest.raises(ValueError):
        HyperParams(gru_units=10)
    with pytest.raises(ValueError):
        HyperParams(client_fraction=0.0)
    with pytest.raises(ValueError):
        HyperParams(use_long_term=False, use_short_term=False)
    with pytest.raises(ConfigError):
        HyperParams().require_vocab()


def test_full_scale_parameter_count():
    counts = parameter_count(HyperParams(vocab_size=65_000))
    assert 2.4e6 < counts["dense"] < 2.8e6
    assert counts["embedding"] == 65_000 * 300


def test_zero_params_encode_to_zero(grad_hp):
    params = ModelParams.zeros(grad_hp)
    assert np.array_equal(encode_news(params, (1, 2, 3)), np.zeros(grad_hp.news_dim))


def test_encode_news_matches_composition_oracle(grad_hp):
    params = _params(grad_hp, 3)
    title = (4, 9, 9, 17, 2)
    words = params[EMBEDDING][list(title)]
    conv = conv1d(params["news_cnn_weight"], params["news_cnn_bias"], words)
    ctx = multihead_self_attention(params["news_attn_query"], params["news_attn_key"], params["news_attn_value"], conv)
    expected = additive_attention_pool(params["news_pool_proj"], params["news_pool_query"], ctx)
    out = encode_news(params, title)
    assert out.shape == (grad_hp.news_dim,)
    assert np.allclose(out, expected, atol=1e-12)


def test_encode_news_output_size_independent_of_length(grad_hp):
    params = _params(grad_hp)
    for length in range(1, grad_hp.title_len + 1):
        assert encode_news(params, tuple(range(length))).shape == (grad_hp.news_dim,)


def test_encode_news_rejects_bad_titles(grad_hp):
    params = _params(grad_hp)
    with pytest.raises(DataError) as exc:
        encode_news(params, (1, 50))
    assert "50" in str(exc.value)
    with pytest.raises(DataError):
        encode_news(params, ())
    with pytest.raises(DataError):
        encode_news(params, tuple(range(grad_hp.title_len + 1)))


def test_encode_user_matches_composition_oracle(grad_hp):
    params = _params(grad_hp, 4)
    history = np.random.default_rng(0).normal(size=(3, grad_hp.news_dim))
    ctx = multihead_self_attention(params["user_attn_query"], params["user_attn_key"], params["user_attn_value"], history)
    long_term = additive_attention_pool(params["user_pool_proj"], params["user_pool_query"], ctx)
    state = np.zeros(grad_hp.gru_units)
    for x in history:
        state = gru_step(params.gru(), state, x)
    expected = additive_attention_pool(params["combiner_proj"], params["combiner_query"], np.stack([long_term, state]))
    assert np.allclose(encode_user(params, history), expected, atol=1e-12)


def test_encode_user_zero_combiner_query_averages(grad_hp):
    params = _params(grad_hp, 5)
    params.tensors["combiner_query"][:] = 0.0
    history = np.random.default_rng(1).normal(size=(2, grad_hp.news_dim))
    long_only = encode_user(params.with_hp(grad_hp.model_copy(update={"use_short_term": False})), history)
    short_only = encode_user(params.with_hp(grad_hp.model_copy(update={"use_long_term": False})), history)
    assert np.allclose(encode_user(params, history), (long_only + short_only) / 2, atol=1e-12)


def test_encode_user_errors(grad_hp):
    params = _params(grad_hp)
    with pytest.raises(DataError):
        encode_user(params, np.zeros((0, grad_hp.news_dim)))
    with pytest.raises(ShapeError):
        encode_user(params, np.zeros((2, grad_hp.news_dim + 1)))


def test_score_cases():
    assert score(np.array([1.0, 0.0]), np.array([0.0, 3.0])) == 0.0
    assert score(np.array([0.0, 1.0]), np.array([0.0, 1.0])) == 1.0
    u, t = np.random.default_rng(2).normal(size=(2, 7))
    expected = 0.0
    for a, b in zip(u, t):
        expected += a * b
    assert score(u, t) == expected
    with pytest.raises(ShapeError):
        score(np.zeros(3), np.zeros(4))


def test_ranking_loss_cases():
    loss, d_scores = ranking_loss(np.zeros(5))
    assert loss == pytest.approx(math.log(5), abs=1e-12)
    assert d_scores[0] == pytest.approx(-0.8, abs=1e-12)
    assert ranking_loss(np.array([200.0, 0.0, 0.0]))[0] < 1e-80

    scores = np.random.default_rng(3).normal(size=5)
    direct = -math.log(math.exp(scores[0]) / sum(math.exp(s) for s in scores))
    assert ranking_loss(scores)[0] == pytest.approx(direct, abs=1e-12)
    assert ranking_loss(scores + 37.5)[0] == pytest.approx(ranking_loss(scores)[0], abs=1e-9)


def test_identical_titles_give_uniform_loss():
    hp = HyperParams.desk(vocab_size=30, dropout_rate=0.0)
    params = _params(hp)
    title = (1, 2, 3)
    sample = TrainingSample(history=(title, title), positive=title, negatives=(title,) * hp.negatives_H)
    assert sample_loss(params, sample) == pytest.approx(math.log(1 + hp.negatives_H), abs=1e-12)


def test_sample_loss_rejects_wrong_negative_count(grad_hp, make_samples):
    sample = make_samples(grad_hp, 0, 1)[0]
    bad = TrainingSample(history=sample.history, positive=sample.positive, negatives=sample.negatives[:1])
    with pytest.raises(DataError):
        sample_loss(_params(grad_hp), bad)


def test_user_loss_is_sum_of_sample_losses_with_dropout(grad_hp, make_samples):
    hp = grad_hp.model_copy(update={"dropout_rate": 0.3})
    params = _params(hp, 1)
    samples = make_samples(hp, 7, 3)
    rng = root(5)
    expected = 0.0
    for sample in samples:
        expected += sample_loss(params, sample, rng, training=True)
    assert user_loss(params, samples, rng, training=True) == expected
    assert user_loss(params, samples[:1]) == sample_loss(params, samples[0])
    assert user_loss(params, [samples[0]] * 3) == pytest.approx(3 * sample_loss(params, samples[0]), abs=1e-12)
    with pytest.raises(DataError):
        user_loss(params, [])


def test_user_gradient_sparse_rows_and_weight(grad_hp, make_samples):
    params = _params(grad_hp, 2)
    samples = make_samples(grad_hp, 8, 3)
    grad = user_gradient(params, samples)
    touched = sorted({t for s in samples for title in s.titles() for t in title})
    assert grad.embedding_rows.tolist() == touched
    assert grad.sample_weight == 3
    assert grad.layout() == params.layout()


def test_user_gradient_is_deterministic(grad_hp, make_samples):
    hp = grad_hp.model_copy(update={"dropout_rate": 0.2})
    params = _params(hp, 2)
    samples = make_samples(hp, 9, 2)
    loss_a, grad_a = loss_and_gradient(params, samples, root(1), training=True)
    loss_b, grad_b = loss_and_gradient(params, samples, root(1), training=True)
    assert loss_a == loss_b
    assert np.array_equal(grad_a.flat(), grad_b.flat())


def test_apply_gradient_leaves_receiver_untouched(grad_hp, make_samples):
    params = _params(grad_hp)
    before = params.copy()
    grad = user_gradient(params, make_samples(grad_hp, 1, 2))
    updated = params.apply_gradient(grad, 0.5)
    for name in params.tensors:
        assert np.array_equal(params[name], before[name])
    assert np.array_equal(params.apply_gradient(grad, 0.0)[EMBEDDING], params[EMBEDDING])
    assert not np.array_equal(updated["news_cnn_weight"], params["news_cnn_weight"])


def test_gradient_set_rows_must_increase():
    with pytest.raises(ShapeError):
        GradientSet(dense={}, embedding_rows=np.array([3, 1]), embedding_values=np.zeros((2, 4)), vocab_size=5)


def test_gradient_layout_mismatch(grad_hp, make_samples):
    params = _params(grad_hp)
    grad = user_gradient(params, make_samples(grad_hp, 1, 1))
    other = ModelParams.zeros(grad_hp.model_copy(update={"vocab_size": 60}))
    with pytest.raises(ProtocolError):
        other.apply_gradient(grad, 0.1)


def test_layout_order_starts_with_embedding(grad_hp):
    names = [name for name, _ in build_layout(grad_hp)]
    assert names[0] == EMBEDDING
    assert names[-2:] == ["combiner_proj", "combiner_query"]


def test_checkpoint_round_trip(tmp_path, grad_hp):
    params = _params(grad_hp, 6)
    path = str(tmp_path / "model.ckpt")
    save_checkpoint(params, path)
    loaded = load_checkpoint(path, grad_hp)
    for name in params.tensors:
        assert np.array_equal(loaded[name], params[name])
    assert checkpoint_hyperparams(path) == grad_hp


def test_checkpoint_rejects_mismatch_and_missing(tmp_path, grad_hp):
    path = str(tmp_path / "model.ckpt")
    save_checkpoint(_params(grad_hp), path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, grad_hp.model_copy(update={"vocab_size": 51}))
    missing = str(tmp_path / "nope.ckpt")
    with pytest.raises(CheckpointError) as exc:
        load_checkpoint(missing, grad_hp)
    assert missing in str(exc.value)


def test_pretrained_embeddings(tmp_path, grad_hp):
    params = _params(grad_hp)
    path = tmp_path / "vectors.txt"
    path.write_text("hello " + " ".join(["0.5"] * 8) + "\nunknown " + " ".join(["1"] * 8) + "\n")
    updated, matched = load_pretrained_embeddings(params, str(path), {"hello": 3, "world": 4})
    assert matched == 1
    assert np.array_equal(updated[EMBEDDING][3], np.full(8, 0.5))
    assert np.array_equal(updated[EMBEDDING][4], params[EMBEDDING][4])

    path.write_text("hello 1 2\n")
    with pytest.raises(DataError):
        load_pretrained_embeddings(params, str(path), {"hello": 3})
