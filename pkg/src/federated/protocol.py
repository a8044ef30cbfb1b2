"""
Federated training loop

Each round the server samples a fraction of the clients, every selected
client computes its gradient on the same model snapshot and randomizes it
locally, and the server applies the sample-weighted mean of the uploads.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import ConfigError, ProtocolError
from ..core.models import HyperParams, PrivacyConfig, RoundReport
from ..model.newsrec import TrainingSample, loss_and_gradient, user_loss
from ..model.params import GradientSet, ModelParams
from ..nn.rng import RngState
from ..privacy.ldp import randomize
from ..utils.logger import setup_logger

logger = setup_logger(__name__)

DROPOUT_STREAM = 0
NOISE_STREAM = 1
SUBSET_STREAM = 2

RoundCallback = Callable[[int, ModelParams, List[RoundReport]], None]


@dataclass(frozen=True)
class ClientStore:
    """One simulated device: the user's click log, training samples and private rng stream"""
    user_id: str
    history: Tuple[Tuple[str, int], ...]
    samples: Tuple[TrainingSample, ...]
    rng: RngState

    @property
    def sample_count(self) -> int:
        return len(self.samples)


def participant_count(num_clients: int, fraction: float) -> int:
    """round(r·N) with halves rounded up and a floor of one."""
    return max(1, min(num_clients, math.floor(fraction * num_clients + 0.5)))


def select_clients(clients: Sequence[ClientStore], fraction: float, rng: RngState) -> List[ClientStore]:
    """Uniform sample without replacement, returned in ascending user-id order."""
    if not clients:
        raise ConfigError("cannot select clients from an empty population")
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"client fraction must be in (0, 1], got {fraction}")
    population = sorted(clients, key=lambda store: store.user_id)
    k = participant_count(len(population), fraction)
    if k == len(population):
        return population
    chosen = rng.generator().choice(len(population), size=k, replace=False)
    return [population[i] for i in sorted(int(i) for i in chosen)]


def round_samples(store: ClientStore, round_index: int, max_samples: Optional[int] = None) -> Tuple[TrainingSample, ...]:
    """The samples a client trains on in a round; all of them unless capped."""
    if max_samples is None or len(store.samples) <= max_samples:
        return store.samples
    gen = store.rng.split(round_index).split(SUBSET_STREAM).generator()
    keep = np.sort(gen.choice(len(store.samples), size=max_samples, replace=False))
    return tuple(store.samples[int(i)] for i in keep)


def client_update(
    params: ModelParams,
    store: ClientStore,
    privacy: PrivacyConfig,
    round_index: int = 0,
    training: bool = True,
    max_samples: Optional[int] = None,
) -> Optional[GradientSet]:
    """Randomized local gradient g̃_u; None (logged) when the client holds no samples."""
    samples = round_samples(store, round_index, max_samples)
    if not samples:
        logger.warning(
            "Client has no training samples, skipping",
            extra={"event_type": "client.skipped", "client_id": store.user_id, "round_index": round_index}
        )
        return None

    stream = store.rng.split(round_index)
    _, grad = loss_and_gradient(params, samples, stream.split(DROPOUT_STREAM), training)
    grad = grad.replace(owner=store.user_id)
    return randomize(grad, privacy, stream.split(NOISE_STREAM))


def aggregate(updates: Sequence[GradientSet]) -> GradientSet:
    """Σ |B_u|·g̃_u / Σ |B_u|, summed in ascending owner order; sparse rows merged by union."""
    if not updates:
        raise ProtocolError("aggregate needs at least one update")
    layout = updates[0].layout()
    for update in updates[1:]:
        if update.layout() != layout:
            raise ProtocolError(f"update from '{update.owner}' has layout {update.layout()}, expected {layout}")
    ordered = sorted(updates, key=lambda u: u.owner)
    if len(ordered) == 1:
        return ordered[0]

    weights = [float(u.sample_weight) for u in ordered]
    if any(w <= 0 for w in weights):
        raise ProtocolError("every update needs a positive sample weight")
    total_weight = sum(u.sample_weight for u in ordered)
    uniform = all(w == weights[0] for w in weights)

    def combine(parts: List[np.ndarray]) -> np.ndarray:
        acc = np.zeros_like(parts[0])
        if uniform:
            for part in parts:
                acc = acc + part
            return acc / len(parts)
        for w, part in zip(weights, parts):
            acc = acc + w * part
        return acc / float(total_weight)

    dense = {name: combine([u.dense[name] for u in ordered]) for name in ordered[0].dense}

    rows = np.unique(np.concatenate([u.embedding_rows for u in ordered]))
    aligned = []
    for u in ordered:
        full = np.zeros((rows.size, u.embedding_dim))
        full[np.searchsorted(rows, u.embedding_rows)] = u.embedding_values
        aligned.append(full)
    embedding = combine(aligned) if rows.size else np.zeros((0, ordered[0].embedding_dim))

    losses = [u.loss for u in ordered]
    return GradientSet(
        dense=dense,
        embedding_rows=rows,
        embedding_values=embedding,
        vocab_size=ordered[0].vocab_size,
        sample_weight=total_weight,
        owner="",
        loss=math.fsum(losses) if all(l is not None for l in losses) else None,
    )


@dataclass
class FederatedState:
    params: ModelParams
    clients: Sequence[ClientStore]
    hp: HyperParams
    privacy: PrivacyConfig
    rng: RngState
    workers: int = 1
    max_samples_per_round: Optional[int] = None
    track_post_loss: bool = False


def _post_update_loss(
    params: ModelParams, selected: Sequence[ClientStore], round_index: int, max_samples: Optional[int]
) -> Optional[float]:
    losses, weight = [], 0
    for store in selected:
        samples = round_samples(store, round_index, max_samples)
        if samples:
            losses.append(user_loss(params, samples, training=False))
            weight += len(samples)
    return math.fsum(losses) / weight if weight else None


def server_round(state: FederatedState, round_index: int) -> Tuple[ModelParams, RoundReport]:
    """One synchronous round: select, local updates on one snapshot, aggregate, Θ′ = Θ − η·ḡ."""
    started = time.perf_counter()
    snapshot = state.params
    selected = select_clients(state.clients, state.hp.client_fraction, state.rng.split("select").split(round_index))

    def run(store: ClientStore) -> Optional[GradientSet]:
        return client_update(snapshot, store, state.privacy, round_index, True, state.max_samples_per_round)

    if state.workers > 1 and len(selected) > 1:
        with ThreadPoolExecutor(max_workers=state.workers) as pool:
            results = list(pool.map(run, selected))
    else:
        results = [run(store) for store in selected]

    updates = [u for u in results if u is not None]
    participants = [u.owner for u in updates]
    if not updates:
        report = RoundReport(round_index=round_index, wall_time_s=time.perf_counter() - started, skipped=True)
        logger.warning(
            "Round skipped: no selected client had training samples",
            extra={"event_type": "round.skipped", "round_index": round_index, "selected": len(selected)}
        )
        return snapshot, report

    mean_grad = aggregate(updates)
    updated = snapshot.apply_gradient(mean_grad, state.hp.learning_rate)
    if not updated.is_finite():
        raise ProtocolError(
            f"round {round_index}: update left non-finite parameters "
            f"(learning_rate {state.hp.learning_rate}, max |g| {mean_grad.max_abs():.6g})"
        )

    pre_loss = mean_grad.loss / mean_grad.sample_weight if mean_grad.loss is not None else None
    post_loss = None
    if state.track_post_loss:
        post_loss = _post_update_loss(updated, selected, round_index, state.max_samples_per_round)

    report = RoundReport(
        round_index=round_index,
        participants=participants,
        sample_weight=mean_grad.sample_weight,
        pre_loss=pre_loss,
        post_loss=post_loss,
        wall_time_s=time.perf_counter() - started,
    )
    logger.info(
        f"Round {round_index} completed",
        extra={
            "event_type": "round.completed",
            "round_index": round_index,
            "participants": len(participants),
            "sample_weight": report.sample_weight,
            "pre_loss": pre_loss,
            "post_loss": post_loss,
            "wall_time_s": round(report.wall_time_s, 4)
        }
    )
    return updated, report


def train_federated(
    clients: Sequence[ClientStore],
    hp: HyperParams,
    privacy: PrivacyConfig,
    rounds: int,
    rng: RngState,
    params: Optional[ModelParams] = None,
    callbacks: Sequence[RoundCallback] = (),
    eval_every: int = 50,
    workers: int = 1,
    max_samples_per_round: Optional[int] = None,
    track_post_loss: bool = False,
) -> Tuple[ModelParams, List[RoundReport]]:
    """Run `rounds` server rounds; callbacks fire every `eval_every` rounds and after the last one."""
    if rounds < 1:
        raise ConfigError(f"rounds must be >= 1, got {rounds}")
    if eval_every < 1:
        raise ConfigError(f"eval_every must be >= 1, got {eval_every}")
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    if not clients:
        raise ConfigError("federated training needs at least one client")

    state = FederatedState(
        params=params if params is not None else ModelParams.initialize(hp, rng.split("init")),
        clients=clients,
        hp=hp,
        privacy=privacy,
        rng=rng,
        workers=workers,
        max_samples_per_round=max_samples_per_round,
        track_post_loss=track_post_loss,
    )
    logger.info(
        "Federated training started",
        extra={
            "event_type": "training.started",
            "mode": "federated",
            "clients": len(clients),
            "rounds": rounds,
            "client_fraction": hp.client_fraction,
            "clip_scale": privacy.clip_scale,
            "noise_scale": privacy.noise_scale
        }
    )

    reports: List[RoundReport] = []
    for round_index in range(1, rounds + 1):
        state.params, report = server_round(state, round_index)
        reports.append(report)
        if round_index % eval_every == 0 or round_index == rounds:
            for callback in callbacks:
                callback(round_index, state.params, reports)

    return state.params, reports
