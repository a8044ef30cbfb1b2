#!/usr/bin/env python3
"""
Tests for client selection, local updates, weighted aggregation, server
rounds and the centralized baseline
"""

import math
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from src.core.errors import ConfigError, DataError, ProtocolError
from src.core.models import PrivacyConfig
from src.federated.centralized import train_centralized
from src.federated.protocol import (
    ClientStore,
    FederatedState,
    aggregate,
    client_update,
    participant_count,
    select_clients,
    server_round,
    train_federated,
)
from src.model.newsrec import user_gradient
from src.model.params import GradientSet, ModelParams
from src.nn.rng import root
from src.privacy.ldp import clip

MECHANISM_OFF = PrivacyConfig(clip_scale=float("inf"), noise_scale=0.0)


def _store(user_id, samples, seed=0):
    return ClientStore(user_id=user_id, history=(), samples=tuple(samples), rng=root(seed).split("client").split(user_id))


def _stores(hp, make_samples, count, per_user=2):
    return [_store(f"U{i:03d}", make_samples(hp, i, per_user)) for i in range(count)]


def _gradient(values, weight, owner, rows=(), row_values=None, vocab=4):
    return GradientSet(
        dense={"w": np.asarray(values, dtype=np.float64)},
        embedding_rows=np.asarray(rows, dtype=np.int64),
        embedding_values=np.asarray(row_values if row_values is not None else np.zeros((0, 2))),
        vocab_size=vocab,
        sample_weight=weight,
        owner=owner,
    )


def _assert_params_equal(a, b):
    for name in a.tensors:
        assert np.array_equal(a[name], b[name]), name


# --------------------------------------------------------------------------- selection

def test_participant_count_rounding():
    assert participant_count(100, 1.0) == 100
    assert participant_count(100, 0.001) == 1
    assert participant_count(200, 0.02) == 4
    assert participant_count(10, 0.25) == 3  # 2.5 rounds half up


def test_select_clients_edge_cases(grad_hp, make_samples):
    stores = _stores(grad_hp, make_samples, 5, 1)
    assert [s.user_id for s in select_clients(stores, 1.0, root(0))] == [s.user_id for s in stores]
    assert len(select_clients(stores, 1e-9, root(0))) == 1
    with pytest.raises(ConfigError):
        select_clients([], 0.5, root(0))
    with pytest.raises(ConfigError):
        select_clients(stores, 0.0, root(0))


def test_select_clients_is_deterministic_and_sorted(grad_hp, make_samples):
    stores = _stores(grad_hp, make_samples, 20, 1)
    first = [s.user_id for s in select_clients(stores, 0.25, root(3))]
    again = [s.user_id for s in select_clients(list(reversed(stores)), 0.25, root(3))]
    assert first == again == sorted(first)
    assert len(first) == 5


def test_selection_frequency_is_uniform():
    stores = [ClientStore(f"U{i:03d}", (), (), root(0)) for i in range(200)]
    counts = {s.user_id: 0 for s in stores}
    rounds = 10_000
    base = root(11)
    for r in range(rounds):
        for store in select_clients(stores, 0.02, base.split(r)):
            counts[store.user_id] += 1
    p = 4 / 200
    sigma = math.sqrt(rounds * p * (1 - p))
    assert all(abs(c - rounds * p) <= 4.5 * sigma for c in counts.values())


# --------------------------------------------------------------------------- client update

def test_client_update_without_mechanism_is_raw_gradient(grad_hp, make_samples):
    params = ModelParams.initialize(grad_hp, root(1))
    samples = make_samples(grad_hp, 3, 3)
    store = _store("U1", samples)
    update = client_update(params, store, MECHANISM_OFF, round_index=1)
    raw = user_gradient(params, samples)
    assert np.array_equal(update.flat(), raw.flat())
    assert update.sample_weight == 3
    assert update.owner == "U1"


def test_client_update_single_sample_weight(grad_hp, make_samples):
    params = ModelParams.initialize(grad_hp, root(1))
    update = client_update(params, _store("U1", make_samples(grad_hp, 4, 1)), PrivacyConfig(), round_index=1)
    assert update.sample_weight == 1


def test_client_update_coordinates_are_bounded(grad_hp, make_samples):
    params = ModelParams.initialize(grad_hp, root(1))
    cfg = PrivacyConfig(clip_scale=0.005, noise_scale=0.015)
    update = client_update(params, _store("U1", make_samples(grad_hp, 5, 2)), cfg, round_index=2)
    bound = cfg.clip_scale + 20 * cfg.noise_scale
    for value in update.dense.values():
        assert np.all(np.abs(value) <= bound)
    assert update.embedding_rows.size == grad_hp.vocab_size


def test_client_update_does_not_modify_snapshot(grad_hp, make_samples):
    params = ModelParams.initialize(grad_hp, root(1))
    before = params.copy()
    client_update(params, _store("U1", make_samples(grad_hp, 5, 2)), PrivacyConfig(), round_index=2)
    _assert_params_equal(params, before)


def test_client_without_samples_is_skipped(grad_hp):
    params = ModelParams.initialize(grad_hp, root(1))
    assert client_update(params, _store("U1", []), PrivacyConfig()) is None


def test_client_update_caps_samples(grad_hp, make_samples):
    params = ModelParams.initialize(grad_hp, root(1))
    update = client_update(params, _store("U1", make_samples(grad_hp, 6, 5)), MECHANISM_OFF, 1, max_samples=2)
    assert update.sample_weight == 2


# --------------------------------------------------------------------------- aggregation

def test_aggregate_weighted_example():
    out = aggregate([_gradient([1.0, 1.0], 1, "a"), _gradient([-1.0, 1.0], 3, "b")])
    assert out.dense["w"].tolist() == [-0.5, 1.0]
    assert out.sample_weight == 4


def test_aggregate_single_update_is_identity():
    g = _gradient([0.1, 0.7], 5, "a", rows=[1], row_values=[[0.3, 0.4]])
    out = aggregate([g])
    assert np.array_equal(out.flat(), g.flat())


def test_aggregate_equal_weights_is_plain_mean():
    gen = np.random.default_rng(0)
    values = gen.normal(size=(3, 6))
    out = aggregate([_gradient(values[i], 4, f"u{i}") for i in range(3)])
    expected = (values[0] + values[1] + values[2]) / 3
    assert np.array_equal(out.dense["w"], expected)


def test_aggregate_merges_sparse_rows_by_union():
    a = _gradient([0.0], 1, "a", rows=[0, 2], row_values=[[1.0, 1.0], [2.0, 2.0]])
    b = _gradient([0.0], 1, "b", rows=[2, 3], row_values=[[4.0, 4.0], [6.0, 6.0]])
    out = aggregate([b, a])
    assert out.embedding_rows.tolist() == [0, 2, 3]
    assert out.embedding_values.tolist() == [[0.5, 0.5], [3.0, 3.0], [3.0, 3.0]]


def test_aggregate_is_independent_of_input_order():
    gen = np.random.default_rng(1)
    updates = [_gradient(gen.normal(size=5), int(gen.integers(1, 9)), f"u{i}") for i in range(4)]
    forward = aggregate(updates)
    backward = aggregate(list(reversed(updates)))
    assert np.array_equal(forward.flat(), backward.flat())


def test_aggregate_matches_weighted_mean_oracle():
    gen = np.random.default_rng(2)
    vocab, dim = 12, 3
    for _ in range(100):
        n = int(gen.integers(2, 7))
        updates = []
        for i in range(n):
            rows = np.sort(gen.choice(vocab, size=int(gen.integers(0, 5)), replace=False))
            updates.append(GradientSet(
                dense={"w": gen.normal(size=(3, 4))},
                embedding_rows=rows,
                embedding_values=gen.normal(size=(rows.size, dim)),
                vocab_size=vocab,
                sample_weight=int(gen.integers(1, 20)),
                owner=f"u{i}",
            ))
        weights = np.array([u.sample_weight for u in updates], dtype=np.float64)
        oracle = sum(w * u.flat() for w, u in zip(weights, updates)) / weights.sum()
        assert np.allclose(aggregate(updates).flat(), oracle, rtol=0, atol=1e-12)


def test_aggregate_rejects_mismatched_layouts():
    with pytest.raises(ProtocolError):
        aggregate([_gradient([1.0, 2.0], 1, "a"), _gradient([1.0, 2.0, 3.0], 1, "b")])
    with pytest.raises(ProtocolError):
        aggregate([])


# --------------------------------------------------------------------------- rounds

def _state(hp, params, clients, privacy, seed=0, workers=1):
    return FederatedState(params=params, clients=clients, hp=hp, privacy=privacy, rng=root(seed), workers=workers)


def test_zero_gradients_leave_model_unchanged(grad_hp, make_samples):
    hp = grad_hp.model_copy(update={"client_fraction": 1.0})
    params = ModelParams.zeros(hp)
    updated, report = server_round(_state(hp, params, _stores(hp, make_samples, 2), MECHANISM_OFF), 1)
    _assert_params_equal(updated, params)
    assert not report.skipped


def test_one_client_round_is_clipped_sgd(grad_hp, make_samples):
    hp = grad_hp.model_copy(update={"client_fraction": 1.0, "learning_rate": 0.5})
    params = ModelParams.initialize(hp, root(2))
    samples = make_samples(hp, 12, 3)
    cfg = PrivacyConfig(clip_scale=0.005, noise_scale=0.0)
    updated, report = server_round(_state(hp, params, [_store("U1", samples)], cfg), 1)
    expected = params.apply_gradient(clip(user_gradient(params, samples), 0.005), 0.5)
    _assert_params_equal(updated, expected)
    assert report.participants == ["U1"] and report.sample_weight == 3


def test_two_identical_clients_equal_one(grad_hp, make_samples):
    hp = grad_hp.model_copy(update={"client_fraction": 1.0})
    params = ModelParams.initialize(hp, root(2))
    samples = make_samples(hp, 13, 2)
    cfg = PrivacyConfig(clip_scale=0.005, noise_scale=0.0)
    one, _ = server_round(_state(hp, params, [_store("A", samples)], cfg), 1)
    two, _ = server_round(_state(hp, params, [_store("A", samples), _store("B", samples)], cfg), 1)
    _assert_params_equal(one, two)


def test_round_with_only_empty_clients_is_skipped(grad_hp):
    hp = grad_hp.model_copy(update={"client_fraction": 1.0})
    params = ModelParams.initialize(hp, root(2))
    updated, report = server_round(_state(hp, params, [_store("A", []), _store("B", [])], PrivacyConfig()), 4)
    assert report.skipped and report.round_index == 4
    _assert_params_equal(updated, params)


def test_round_rejects_non_finite_update(grad_hp, make_samples):
    hp = grad_hp.model_copy(update={"client_fraction": 1.0, "learning_rate": float("inf")})
    params = ModelParams.initialize(hp, root(2))
    with pytest.raises(ProtocolError, match="non-finite"):
        server_round(_state(hp, params, _stores(hp, make_samples, 2), MECHANISM_OFF), 3)


def test_post_update_loss_is_reported(grad_hp, make_samples):
    hp = grad_hp.model_copy(update={"client_fraction": 1.0, "learning_rate": 0.1})
    params = ModelParams.initialize(hp, root(2))
    state = _state(hp, params, _stores(hp, make_samples, 2), MECHANISM_OFF)
    state.track_post_loss = True
    _, report = server_round(state, 1)
    assert report.pre_loss is not None and report.post_loss is not None


# --------------------------------------------------------------------------- training loops

def test_train_federated_rejects_zero_rounds(grad_hp, make_samples):
    with pytest.raises(ConfigError):
        train_federated(_stores(grad_hp, make_samples, 2), grad_hp, PrivacyConfig(), 0, root(0))


def test_zero_learning_rate_keeps_initial_model(grad_hp, make_samples):
    hp = grad_hp.model_copy(update={"learning_rate": 0.0, "client_fraction": 0.5})
    init = ModelParams.initialize(hp, root(4))
    final, reports = train_federated(_stores(hp, make_samples, 4), hp, PrivacyConfig(), 3, root(0), params=init)
    _assert_params_equal(final, init)
    assert [r.round_index for r in reports] == [1, 2, 3]


def test_callbacks_fire_every_k_rounds_and_at_the_end(grad_hp, make_samples):
    hp = grad_hp.model_copy(update={"client_fraction": 0.5})
    seen = []
    train_federated(
        _stores(hp, make_samples, 4), hp, PrivacyConfig(), 5, root(0),
        callbacks=[lambda r, params, reports: seen.append((r, len(reports)))], eval_every=2,
    )
    assert seen == [(2, 2), (4, 4), (5, 5)]


def test_federated_training_is_independent_of_worker_count(grad_hp, make_samples):
    hp = grad_hp.model_copy(update={"client_fraction": 0.5, "dropout_rate": 0.2})
    stores = _stores(hp, make_samples, 6)
    cfg = PrivacyConfig(clip_scale=0.005, noise_scale=0.015)
    serial, serial_reports = train_federated(stores, hp, cfg, 3, root(8), workers=1)
    parallel, parallel_reports = train_federated(stores, hp, cfg, 3, root(8), workers=4)
    _assert_params_equal(serial, parallel)
    assert [r.to_csv_row() for r in serial_reports] == [r.to_csv_row() for r in parallel_reports]


def test_federated_round_equals_full_batch_central_step(grad_hp, make_samples):
    hp = grad_hp.model_copy(update={"client_fraction": 1.0, "learning_rate": 0.5})
    samples = make_samples(hp, 30, 4)
    init = ModelParams.initialize(hp, root(3))
    fed, _ = train_federated([_store("U1", samples)], hp, MECHANISM_OFF, 1, root(5), params=init)
    cen = train_centralized(samples, hp, root(5), epochs=1, batch_size=len(samples), params=init)
    for name in init.tensors:
        assert np.allclose(fed[name], cen[name], rtol=0, atol=1e-9), name


def test_centralized_zero_epochs_and_empty_pool(grad_hp, make_samples):
    init = ModelParams.initialize(grad_hp, root(3))
    out = train_centralized(make_samples(grad_hp, 1, 2), grad_hp, root(0), epochs=0, params=init)
    _assert_params_equal(out, init)
    with pytest.raises(DataError):
        train_centralized([], grad_hp, root(0))


def test_centralized_callback_per_epoch(grad_hp, make_samples):
    losses = []
    train_centralized(
        make_samples(grad_hp, 2, 5), grad_hp, root(0), epochs=2, batch_size=2,
        callbacks=[lambda epoch, params, loss: losses.append((epoch, loss))],
    )
    assert [e for e, _ in losses] == [1, 2]
    assert all(loss > 0 for _, loss in losses)
