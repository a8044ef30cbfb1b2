#!/usr/bin/env python3
"""
End-to-end training checks on the default synthetic dataset. Run them with
`pytest --runslow`.

Every distinct training run (federated at three noise scales and the
centralized baseline, each over five seeds, plus two extra client
fractions) is computed once, in parallel worker processes, and shared by
the tests. That is 22 runs of 300 rounds, about 5 CPU-minutes each: allow
roughly two hours on one core, proportionally less with more cores.
"""

import os
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from typing import Dict, List, NamedTuple, Tuple

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from src.core.models import HyperParams, RunConfig, SyntheticConfig
from src.data.synthetic import generate_synthetic
from src.federated.runner import mean_and_stderr, run_experiment

pytestmark = pytest.mark.slow

ROUNDS = 300
SEEDS = (1, 2, 3, 4, 5)
NOISE_SCALES = (0.0, 0.015, 0.05)
LOSS_FRACTIONS = (0.02, 0.05, 0.1)


class RunSummary(NamedTuple):
    initial_auc: float
    final_auc: float
    pre_losses: List[float]


RunKey = Tuple[str, int, HyperParams]


@lru_cache(maxsize=1)
def _dataset():
    return generate_synthetic(SyntheticConfig(seed=0))


def _key(mode: str, seed: int, **hp_updates) -> RunKey:
    return mode, seed, HyperParams.desk(**hp_updates)


def _train(key: RunKey) -> RunSummary:
    mode, seed, hp = key
    dataset = _dataset()
    run = RunConfig(mode=mode, rounds=ROUNDS, eval_every=ROUNDS, seed=seed)
    result = run_experiment(hp, run, dataset.catalog, dataset.train, dataset.test)
    return RunSummary(
        initial_auc=result.evaluations[0].report.auc,
        final_auc=result.final.report.auc,
        pre_losses=[r.pre_loss for r in result.rounds if r.pre_loss is not None],
    )


def _noise_key(seed: int, lam: float) -> RunKey:
    return _key("federated", seed, client_fraction=0.05, noise_scale=lam)


def _central_key(seed: int) -> RunKey:
    return _key("central", seed, noise_scale=0.0)


def _loss_key(fraction: float) -> RunKey:
    return _key("federated", 1, client_fraction=fraction)


@pytest.fixture(scope="module")
def runs() -> Dict[RunKey, RunSummary]:
    keys = [_noise_key(seed, lam) for lam in NOISE_SCALES for seed in SEEDS]
    keys += [_central_key(seed) for seed in SEEDS]
    keys += [_loss_key(fraction) for fraction in LOSS_FRACTIONS]
    keys = list(dict.fromkeys(keys))
    with ProcessPoolExecutor(max_workers=os.cpu_count() or 1) as pool:
        return dict(zip(keys, pool.map(_train, keys)))


def _noise_auc(runs, lam):
    return mean_and_stderr([runs[_noise_key(seed, lam)].final_auc for seed in SEEDS])


def test_federated_training_lifts_auc(runs):
    summary = runs[_noise_key(1, 0.0)]
    assert summary.final_auc - summary.initial_auc >= 0.10


def test_more_noise_does_not_help(runs):
    (none, none_err), (low, low_err), (high, high_err) = (_noise_auc(runs, lam) for lam in NOISE_SCALES)
    assert none + none_err >= low - low_err
    assert low + low_err >= high - high_err


def test_centralized_is_not_worse_than_private_federated(runs):
    central = [runs[_central_key(seed)].final_auc for seed in SEEDS]
    federated, _ = _noise_auc(runs, 0.015)
    assert np.mean(central) >= federated - 0.01


@pytest.mark.parametrize("fraction", LOSS_FRACTIONS)
def test_training_loss_decreases(runs, fraction):
    losses = runs[_loss_key(fraction)].pre_losses
    assert len(losses) >= 40
    assert np.mean(losses[-20:]) < np.mean(losses[:20])
