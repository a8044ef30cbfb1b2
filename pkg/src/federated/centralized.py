"""
Centralized baseline trainer

Plain mini-batch SGD over the behaviors of all users pooled together, with
the same model code and no clipping or noise. The step uses the summed
batch loss, so one full-batch step equals one federated round of a single
client holding all data with the mechanism off.
"""

from typing import Callable, List, Optional, Sequence

from ..core.errors import ConfigError, DataError
from ..core.models import HyperParams
from ..model.newsrec import TrainingSample, loss_and_gradient
from ..model.params import ModelParams
from ..nn.rng import RngState
from ..utils.logger import setup_logger

logger = setup_logger(__name__)

EpochCallback = Callable[[int, ModelParams, float], None]


def train_centralized(
    samples: Sequence[TrainingSample],
    hp: HyperParams,
    rng: RngState,
    epochs: Optional[int] = None,
    batch_size: Optional[int] = None,
    params: Optional[ModelParams] = None,
    callbacks: Sequence[EpochCallback] = (),
) -> ModelParams:
    epochs = hp.epochs if epochs is None else epochs
    batch_size = hp.batch_size if batch_size is None else batch_size
    if not samples:
        raise DataError("centralized training needs at least one pooled sample")
    if epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {epochs}")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")

    params = params if params is not None else ModelParams.initialize(hp, rng.split("init"))
    logger.info(
        "Centralized training started",
        extra={
            "event_type": "training.started",
            "mode": "central",
            "samples": len(samples),
            "epochs": epochs,
            "batch_size": batch_size
        }
    )

    step = 0
    for epoch in range(1, epochs + 1):
        order = rng.split("shuffle").split(epoch).generator().permutation(len(samples))
        epoch_losses: List[float] = []
        for start in range(0, len(order), batch_size):
            batch = [samples[int(i)] for i in order[start:start + batch_size]]
            step += 1
            loss, grad = loss_and_gradient(params, batch, rng.split("dropout").split(step), training=True)
            params = params.apply_gradient(grad, hp.learning_rate)
            epoch_losses.append(loss)

        mean_loss = sum(epoch_losses) / len(samples)
        logger.info(
            f"Epoch {epoch} completed",
            extra={"event_type": "epoch.completed", "epoch": epoch, "steps": step, "loss": mean_loss}
        )
        for callback in callbacks:
            callback(epoch, params, mean_loss)

    return params
