"""
Client store construction

Turns training impressions into per-user ClientStores: each click becomes a
TrainingSample paired with H non-clicked news of the same impression.
"""

from collections import defaultdict
from typing import Dict, List, Optional, Sequence, Tuple

from ..core.errors import ConfigError
from ..core.models import HyperParams
from ..federated.protocol import ClientStore, participant_count
from ..model.newsrec import TrainingSample
from ..nn.rng import RngState
from ..utils.logger import setup_logger
from .catalog import Catalog, Impression

logger = setup_logger(__name__)


def sample_negatives(pool: Sequence[str], count: int, rng: RngState) -> List[str]:
    """`count` draws from pool: without replacement when possible, with replacement otherwise."""
    gen = rng.generator()
    if len(pool) >= count:
        picks = gen.choice(len(pool), size=count, replace=False)
    else:
        picks = gen.integers(0, len(pool), size=count)
    return [pool[int(i)] for i in picks]


def _negative_pool(impression: Impression, catalog: Catalog) -> List[str]:
    pool = impression.non_clicked
    if pool:
        return pool
    # click-only impression: fall back to catalog news the user neither clicked here nor before
    excluded = set(impression.clicked) | set(impression.history)
    return [news_id for news_id in catalog.news_ids() if news_id not in excluded]


def build_samples(impression: Impression, catalog: Catalog, hp: HyperParams, rng: RngState) -> List[TrainingSample]:
    if not impression.history:
        return []
    pool = _negative_pool(impression, catalog)
    if not pool:
        return []
    history = tuple(catalog.title(news_id) for news_id in impression.history[-hp.history_len:])
    samples = []
    for position, (news_id, label) in enumerate(impression.candidates):
        if not label:
            continue
        negatives = sample_negatives(pool, hp.negatives_H, rng.split(position))
        samples.append(TrainingSample(
            history=history,
            positive=catalog.title(news_id),
            negatives=tuple(catalog.title(n) for n in negatives),
            positive_id=news_id,
            negative_ids=tuple(negatives),
            impression_index=impression.index,
        ))
    return samples


def build_client_stores(
    impressions: Sequence[Impression], catalog: Catalog, hp: HyperParams, rng: RngState
) -> List[ClientStore]:
    """One store per user with at least one sample, in ascending user-id order."""
    by_user: Dict[str, List[Impression]] = defaultdict(list)
    for impression in impressions:
        by_user[impression.user_id].append(impression)

    stores = []
    skipped_users = 0
    skipped_clicks = 0
    negative_rng = rng.split("negatives")
    for user_id in sorted(by_user):
        user_impressions = sorted(by_user[user_id], key=lambda imp: (imp.timestamp, imp.index))
        samples: List[TrainingSample] = []
        history: List[Tuple[str, int]] = []
        for impression in user_impressions:
            built = build_samples(impression, catalog, hp, negative_rng.split(impression.index))
            skipped_clicks += len(impression.clicked) - len(built)
            samples.extend(built)
            history.extend((news_id, impression.timestamp) for news_id in impression.clicked)
        if not samples:
            skipped_users += 1
            continue
        stores.append(ClientStore(
            user_id=user_id,
            history=tuple(history),
            samples=tuple(samples),
            rng=rng.split("client").split(user_id),
        ))

    logger.info(
        f"Built {len(stores)} client stores",
        extra={
            "event_type": "data.clients_built",
            "clients": len(stores),
            "samples": sum(s.sample_count for s in stores),
            "dropped_users": skipped_users,
            "dropped_clicks": skipped_clicks
        }
    )
    return stores


def sample_training_users(
    stores: Sequence[ClientStore], fraction: float, rng: RngState, max_users: Optional[int] = None
) -> List[ClientStore]:
    """Seeded subset of the population that takes part in training, in ascending user-id order."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"train_user_fraction must be in (0, 1], got {fraction}")
    ordered = sorted(stores, key=lambda s: s.user_id)
    if not ordered:
        return []
    k = participant_count(len(ordered), fraction)
    if max_users is not None:
        k = min(k, max_users)
    if k == len(ordered):
        return ordered
    chosen = rng.generator().choice(len(ordered), size=k, replace=False)
    return [ordered[i] for i in sorted(int(i) for i in chosen)]


def pooled_samples(stores: Sequence[ClientStore]) -> List[TrainingSample]:
    """All samples of all stores, user by user."""
    return [sample for store in stores for sample in store.samples]
