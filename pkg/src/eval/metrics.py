"""
Impression-level ranking metrics

AUC counts ties as one half. MRR and nDCG rank candidates by descending
score and break ties by input position. An impression a metric cannot
score raises UndefinedMetricError and is skipped for that metric only.
"""

import math
from typing import Dict, List, Sequence, Tuple

import numpy as np
from sklearn.metrics import roc_auc_score

from ..core.errors import ConfigError, UndefinedMetricError
from ..core.models import HyperParams, MetricsReport
from ..data.catalog import Catalog, Impression
from ..model.newsrec import encode_news, encode_user
from ..model.params import ModelParams
from ..nn.primitives import matmul
from ..utils.logger import setup_logger

logger = setup_logger(__name__)


def _prepare(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores for {labels.size} labels")
    return scores, (labels > 0).astype(np.int64)


def _ranking(scores: np.ndarray) -> np.ndarray:
    # stable sort on -score keeps earlier candidates first among ties
    return np.argsort(-scores, kind="stable")


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    scores, labels = _prepare(scores, labels)
    positives = int(labels.sum())
    if positives == 0 or positives == labels.size:
        raise UndefinedMetricError("AUC needs at least one clicked and one non-clicked candidate")
    return float(roc_auc_score(labels, scores))


def mrr(scores: Sequence[float], labels: Sequence[int]) -> float:
    scores, labels = _prepare(scores, labels)
    if not labels.any():
        raise UndefinedMetricError("MRR needs at least one clicked candidate")
    ranked = labels[_ranking(scores)]
    ranks = np.flatnonzero(ranked) + 1
    return math.fsum(1.0 / ranks) / ranks.size


def dcg_at_k(ranked_labels: np.ndarray, k: int) -> float:
    gains = (2.0 ** ranked_labels[:k]) - 1.0
    discounts = np.log2(np.arange(2, gains.size + 2))
    return math.fsum(gains / discounts)


def ndcg_at_k(scores: Sequence[float], labels: Sequence[int], k: int) -> float:
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    scores, labels = _prepare(scores, labels)
    if not labels.any():
        raise UndefinedMetricError("nDCG needs at least one clicked candidate")
    ideal = dcg_at_k(np.sort(labels)[::-1], k)
    return dcg_at_k(labels[_ranking(scores)], k) / ideal


METRICS = {
    "auc": auc,
    "mrr": mrr,
    "ndcg5": lambda s, l: ndcg_at_k(s, l, 5),
    "ndcg10": lambda s, l: ndcg_at_k(s, l, 10),
}


def evaluate_scores(scored: Sequence[Tuple[Sequence[float], Sequence[int]]]) -> MetricsReport:
    """Average every metric over the (scores, labels) pairs it can score, in input order."""
    values: Dict[str, List[float]] = {name: [] for name in METRICS}
    skipped = 0
    for scores, labels in scored:
        unusable = False
        for name, metric in METRICS.items():
            try:
                values[name].append(metric(scores, labels))
            except UndefinedMetricError:
                unusable = True
        skipped += int(unusable)

    def mean(xs: List[float]) -> float:
        return math.fsum(xs) / len(xs) if xs else float("nan")

    return MetricsReport(
        auc=mean(values["auc"]),
        mrr=mean(values["mrr"]),
        ndcg5=mean(values["ndcg5"]),
        ndcg10=mean(values["ndcg10"]),
        skipped=skipped,
        evaluated=len(scored) - skipped,
    )


def score_impressions(
    params: ModelParams, impressions: Sequence[Impression], catalog: Catalog, hp: HyperParams
) -> List[Tuple[np.ndarray, List[int]]]:
    """(scores, labels) per impression in inference mode; impressions without history are left out."""
    cache: Dict[str, np.ndarray] = {}

    def news_vector(news_id: str) -> np.ndarray:
        if news_id not in cache:
            cache[news_id] = encode_news(params, catalog.title(news_id))
        return cache[news_id]

    scored = []
    for impression in impressions:
        history = impression.history[-hp.history_len:]
        if not history:
            continue
        user = encode_user(params, np.stack([news_vector(n) for n in history]))
        candidates = np.stack([news_vector(news_id) for news_id, _ in impression.candidates])
        scored.append((matmul(candidates, user), impression.labels))
    return scored


def evaluate(
    params: ModelParams, impressions: Sequence[Impression], catalog: Catalog, hp: HyperParams
) -> MetricsReport:
    scored = score_impressions(params, impressions, catalog, hp)
    report = evaluate_scores(scored)
    no_history = len(impressions) - len(scored)
    if no_history:
        report = report.model_copy(update={"skipped": report.skipped + no_history})

    logger.info(
        "Evaluation completed",
        extra={
            "event_type": "eval.completed",
            "impressions": len(impressions),
            "skipped": report.skipped,
            "auc": report.auc,
            "mrr": report.mrr
        }
    )
    return report
