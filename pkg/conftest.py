"""
Shared fixtures: desk-scale hyperparameters and random training samples.
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.core.models import HyperParams
from src.model.newsrec import TrainingSample


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the multi-minute training checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end training runs on the synthetic dataset")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def grad_hp():
    """Smallest dimensions that still exercise every layer (two heads, window 3)."""
    return HyperParams(
        word_embed_dim=8,
        gru_units=8,
        num_heads=2,
        head_dim=4,
        attn_query_dim=8,
        cnn_window=3,
        title_len=6,
        history_len=4,
        negatives_H=2,
        vocab_size=50,
        dropout_rate=0.0,
    )


def random_title(gen: np.random.Generator, hp: HyperParams, min_len: int = 2):
    length = int(gen.integers(min_len, hp.title_len + 1))
    return tuple(int(t) for t in gen.integers(0, hp.vocab_size, size=length))


def random_sample(gen: np.random.Generator, hp: HyperParams, history_len: int = None) -> TrainingSample:
    length = history_len or int(gen.integers(1, hp.history_len + 1))
    return TrainingSample(
        history=tuple(random_title(gen, hp) for _ in range(length)),
        positive=random_title(gen, hp),
        negatives=tuple(random_title(gen, hp) for _ in range(hp.negatives_H)),
    )


@pytest.fixture
def make_samples():
    """make_samples(hp, seed, count) -> list of random TrainingSamples."""
    def factory(hp: HyperParams, seed: int, count: int = 3):
        gen = np.random.default_rng(seed)
        return [random_sample(gen, hp) for _ in range(count)]
    return factory
