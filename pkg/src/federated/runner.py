"""
Experiment runner shared by the train and sweep commands: builds client
stores from the training split, runs the selected trainer and evaluates on
the held-out split at the configured cadence.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from ..core.errors import ConfigError
from ..core.models import HyperParams, MetricsReport, RoundReport, RunConfig
from ..data.catalog import Catalog, Impression
from ..data.client_store import build_client_stores, pooled_samples, sample_training_users
from ..eval.metrics import evaluate
from ..model.params import ModelParams, load_pretrained_embeddings
from ..nn.rng import RngState, root
from ..utils.logger import setup_logger
from .centralized import train_centralized
from .protocol import train_federated

logger = setup_logger(__name__)


@dataclass
class EvalRow:
    round_index: int
    loss: Optional[float]
    report: MetricsReport

    def to_csv_row(self) -> str:
        return self.report.to_csv_row(self.round_index, self.loss)


@dataclass
class ExperimentResult:
    params: ModelParams
    evaluations: List[EvalRow] = field(default_factory=list)
    rounds: List[RoundReport] = field(default_factory=list)

    @property
    def final(self) -> Optional[EvalRow]:
        return self.evaluations[-1] if self.evaluations else None


def with_vocabulary(hp: HyperParams, catalog: Catalog) -> HyperParams:
    """Resolve vocab_size from the catalog; a configured size must agree with it."""
    if hp.vocab_size is not None and hp.vocab_size != catalog.vocab_size:
        raise ConfigError(f"vocab_size={hp.vocab_size} but the catalog vocabulary has {catalog.vocab_size} words")
    return hp.model_copy(update={"vocab_size": catalog.vocab_size})


def initial_params(hp: HyperParams, run: RunConfig, catalog: Catalog, rng: RngState) -> ModelParams:
    params = ModelParams.initialize(hp, rng.split("init"))
    if run.embedding_file:
        params, _ = load_pretrained_embeddings(params, run.embedding_file, catalog.vocabulary)
    return params


def _round_loss(reports: Sequence[RoundReport]) -> Optional[float]:
    for report in reversed(reports):
        if not report.skipped:
            return report.pre_loss
    return None


def run_experiment(
    hp: HyperParams,
    run: RunConfig,
    catalog: Catalog,
    train: Sequence[Impression],
    test: Sequence[Impression],
    seed: Optional[int] = None,
) -> ExperimentResult:
    """Train per `run.mode` and evaluate the initial model plus every eval_every rounds (or every epoch)."""
    hp = with_vocabulary(hp, catalog)
    rng = root(run.seed if seed is None else seed)
    train_rng = rng.split("train")

    stores = build_client_stores(train, catalog, hp, rng.split("data"))
    stores = sample_training_users(stores, run.train_user_fraction, rng.split("users"), run.max_train_users)
    if not stores:
        raise ConfigError("no training client has a usable sample")

    params = initial_params(hp, run, catalog, train_rng)
    result = ExperimentResult(params=params)
    result.evaluations.append(EvalRow(0, None, evaluate(params, test, catalog, hp)))

    if run.mode == "federated":
        def on_eval(round_index: int, current: ModelParams, reports: List[RoundReport]) -> None:
            result.evaluations.append(
                EvalRow(round_index, _round_loss(reports), evaluate(current, test, catalog, hp))
            )

        result.params, result.rounds = train_federated(
            stores,
            hp,
            hp.privacy(run.noise_sparse_only),
            run.rounds,
            train_rng,
            params=params,
            callbacks=[on_eval],
            eval_every=run.eval_every,
            workers=run.workers,
            max_samples_per_round=run.max_samples_per_round,
            track_post_loss=run.track_post_loss,
        )
    else:
        def on_epoch(epoch: int, current: ModelParams, loss: float) -> None:
            result.evaluations.append(EvalRow(epoch, loss, evaluate(current, test, catalog, hp)))

        result.params = train_centralized(
            pooled_samples(stores), hp, train_rng, params=params, callbacks=[on_epoch]
        )

    final = result.final
    logger.info(
        "Experiment completed",
        extra={
            "event_type": "experiment.completed",
            "mode": run.mode,
            "clients": len(stores),
            "final_auc": final.report.auc if final else None
        }
    )
    return result


def mean_and_stderr(values: Sequence[float]) -> Tuple[float, float]:
    """Sample mean and standard error; the error is 0 for a single value."""
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    variance = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(variance / n)
