"""
Synthetic click logs

Every news item belongs to one topic and its title is drawn from that
topic's word block. Each user likes a few topics; a shown candidate is
clicked when its topic is liked, and the outcome is flipped with
probability click_noise. Impressions are placed on one global timeline
and split chronologically into train and test.
"""

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from ..core.models import SyntheticConfig
from ..nn.rng import RngState, root
from ..utils.logger import setup_logger
from .catalog import Catalog, Impression

logger = setup_logger(__name__)

BASE_TIMESTAMP = 1_600_000_000
STEP_SECONDS = 60


@dataclass
class SyntheticDataset:
    catalog: Catalog
    train: List[Impression]
    test: List[Impression]
    news_topics: Dict[str, int]
    user_topics: Dict[str, Tuple[int, ...]]

    def oracle_scores(self, impression: Impression) -> List[float]:
        """1.0 for candidates in one of the user's liked topics, else 0.0."""
        liked = set(self.user_topics[impression.user_id])
        return [1.0 if self.news_topics[news_id] in liked else 0.0 for news_id, _ in impression.candidates]


def topic_word(topic: int, index: int) -> str:
    return f"t{topic}_w{index}"


def _build_catalog(synth: SyntheticConfig, rng: RngState) -> Tuple[Catalog, Dict[str, int]]:
    gen = rng.generator()
    catalog = Catalog()
    news_topics: Dict[str, int] = {}
    topics = gen.permutation(np.arange(synth.num_news) % synth.num_topics)
    for i in range(synth.num_news):
        news_id = f"N{i + 1}"
        topic = int(topics[i])
        words = gen.integers(0, synth.words_per_topic, size=synth.title_len)
        catalog.add(news_id, " ".join(topic_word(topic, int(w)) for w in words), synth.title_len)
        news_topics[news_id] = topic
    return catalog, news_topics


def generate_synthetic(synth: SyntheticConfig) -> SyntheticDataset:
    rng = root(synth.seed)
    catalog, news_topics = _build_catalog(synth, rng.split("catalog"))
    news_ids = catalog.news_ids()
    by_topic: Dict[int, List[str]] = {t: [] for t in range(synth.num_topics)}
    for news_id in news_ids:
        by_topic[news_topics[news_id]].append(news_id)

    user_ids = [f"U{u + 1}" for u in range(synth.num_users)]
    user_topics: Dict[str, Tuple[int, ...]] = {}
    histories: Dict[str, List[str]] = {}
    for user_id in user_ids:
        gen = rng.split("user").split(user_id).generator()
        liked = tuple(sorted(int(t) for t in gen.choice(synth.num_topics, size=synth.topics_per_user, replace=False)))
        user_topics[user_id] = liked
        liked_news = [n for t in liked for n in by_topic[t]]
        seeds = min(synth.seed_clicks, len(liked_news))
        picks = gen.choice(len(liked_news), size=seeds, replace=False) if seeds else []
        histories[user_id] = [liked_news[int(i)] for i in picks]

    # one global timeline of (user, k-th impression) events
    events = [(user_id, k) for user_id in user_ids for k in range(synth.impressions_per_user)]
    order = rng.split("timeline").generator().permutation(len(events))
    timeline = [events[int(i)] for i in order]

    impressions: List[Impression] = []
    for position, (user_id, k) in enumerate(timeline):
        gen = rng.split("impression").split(user_id).split(k).generator()
        liked = set(user_topics[user_id])
        seen = set(histories[user_id])
        pool = [n for n in news_ids if n not in seen]
        if not pool:
            continue
        liked_pool = [n for n in pool if news_topics[n] in liked]

        count = min(synth.candidates_per_impression, len(pool))
        shown: List[str] = []
        if liked_pool:
            shown.append(liked_pool[int(gen.integers(0, len(liked_pool)))])
        rest = [n for n in pool if n not in shown]
        if count - len(shown) > 0:
            extra = gen.choice(len(rest), size=count - len(shown), replace=False)
            shown.extend(rest[int(i)] for i in extra)
        shown = [shown[int(i)] for i in gen.permutation(len(shown))]

        flips = gen.random(len(shown)) < synth.click_noise
        candidates = tuple(
            (news_id, (news_topics[news_id] in liked) != bool(flip))
            for news_id, flip in zip(shown, flips)
        )
        impressions.append(Impression(
            user_id=user_id,
            timestamp=BASE_TIMESTAMP + STEP_SECONDS * position,
            history=tuple(histories[user_id]),
            candidates=candidates,
            index=len(impressions),
        ))
        histories[user_id].extend(news_id for news_id, label in candidates if label)

    cut = int(np.floor((1.0 - synth.test_fraction) * len(impressions)))
    train = impressions[:cut]
    test = [
        Impression(imp.user_id, imp.timestamp, imp.history, imp.candidates, index=i)
        for i, imp in enumerate(impressions[cut:])
    ]

    logger.info(
        "Synthetic dataset generated",
        extra={
            "event_type": "data.synthetic_generated",
            "users": synth.num_users,
            "news": synth.num_news,
            "train_impressions": len(train),
            "test_impressions": len(test),
            "seed": synth.seed
        }
    )
    return SyntheticDataset(catalog, train, test, news_topics, user_topics)
