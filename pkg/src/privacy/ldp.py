"""
Local differential privacy for uploaded gradients.

Each coordinate is clamped to [-δ, δ] and then receives independent
zero-mean Laplace noise of scale λ. Any two clamped values differ by at
most 2δ, so one upload is ε-LDP with ε = 2δ/λ.
"""

import numpy as np

from ..core.errors import ConfigError
from ..core.models import PrivacyConfig
from ..model.params import EMBEDDING, GradientSet
from ..nn.primitives import laplace_noise
from ..nn.rng import RngState
from ..utils.logger import setup_logger

logger = setup_logger(__name__)


def clip(g: GradientSet, clip_scale: float) -> GradientSet:
    """Clamp every stored coordinate to [-δ, δ]; layout and sample_weight are unchanged."""
    if not clip_scale >= 0.0:
        raise ConfigError(f"clip scale must be >= 0, got {clip_scale}")
    return g.map_values(lambda values: np.clip(values, -clip_scale, clip_scale))


def noise_field(g: GradientSet, cfg: PrivacyConfig, rng: RngState) -> GradientSet:
    """The Laplace field added by randomize; depends only on the layout, cfg and rng."""
    target = g if cfg.noise_sparse_only else g.densify_embedding()
    dense = {
        name: laplace_noise(rng.split(name), cfg.noise_scale, value.shape)
        for name, value in target.dense.items()
    }
    if cfg.noise_sparse_only:
        # draw the full table and keep the touched rows so a row's noise never depends on which others are present
        table = laplace_noise(rng.split(EMBEDDING), cfg.noise_scale, (target.vocab_size, target.embedding_dim))
        embedding = table[target.embedding_rows]
    else:
        embedding = laplace_noise(rng.split(EMBEDDING), cfg.noise_scale, target.embedding_values.shape)
    return target.replace(dense=dense, embedding_values=embedding)


def randomize(g: GradientSet, cfg: PrivacyConfig, rng: RngState) -> GradientSet:
    """clip(g, δ) plus Laplace(λ) noise on every coordinate of the full parameter layout.

    Embedding rows the client never touched are zeros that still get noise,
    so the sparsity pattern does not reveal which news were read; with
    `noise_sparse_only` only the touched rows are noised.
    """
    clipped = clip(g, cfg.clip_scale)
    if cfg.noise_scale == 0.0:
        return clipped
    if not cfg.noise_sparse_only:
        clipped = clipped.densify_embedding()

    noise = noise_field(clipped, cfg, rng)
    randomized = clipped.replace(
        dense={name: value + noise.dense[name] for name, value in clipped.dense.items()},
        embedding_values=clipped.embedding_values + noise.embedding_values,
    )
    logger.debug(
        "Gradient randomized",
        extra={
            "event_type": "privacy.randomized",
            "client_id": g.owner,
            "clip_scale": cfg.clip_scale,
            "noise_scale": cfg.noise_scale,
            "sparse_only": cfg.noise_sparse_only
        }
    )
    return randomized


def budget(cfg: PrivacyConfig) -> float:
    """ε = 2δ/λ for a single upload; raises UndefinedBudgetError when λ = 0."""
    return cfg.budget()


def privacy_report(cfg: PrivacyConfig) -> dict:
    """δ, λ, ε and noise standard deviation; ε is None when λ = 0."""
    epsilon = cfg.budget() if cfg.noise_scale > 0 else None
    return {
        "clip_scale": cfg.clip_scale,
        "noise_scale": cfg.noise_scale,
        "epsilon": epsilon,
        "noise_std": cfg.noise_std,
        "noise_variance": cfg.noise_variance,
    }
