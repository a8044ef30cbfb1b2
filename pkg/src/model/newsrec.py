"""
News recommendation model: news encoder, user encoder, dot-product
scoring, the impression-level ranking loss and its analytic gradient.

Dropout streams are keyed by content (the title tokens for a news item,
the history token lists for a user), so a title encoded twice under the
same rng gets the same mask, and finite differences see a frozen mask.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from ..core.errors import DataError, ShapeError
from ..nn.primitives import (
    AttentionCache,
    ConvCache,
    GruStepCache,
    PoolCache,
    additive_attention_pool_forward,
    conv1d_forward,
    dropout_forward,
    gru_step_forward,
    matmul,
    multihead_self_attention_forward,
    softmax,
)
from ..nn.rng import RngState
from ..utils.hashing import sequence_key, token_key
from . import backprop
from .params import EMBEDDING, GradientSet, ModelParams

NEWS_STREAM = "news"
USER_STREAM = "user"

Title = Tuple[int, ...]


@dataclass(frozen=True)
class TrainingSample:
    """One click behavior: the history before it, the clicked title and H shown-but-skipped titles"""
    history: Tuple[Title, ...]
    positive: Title
    negatives: Tuple[Title, ...]
    positive_id: str = ""
    negative_ids: Tuple[str, ...] = ()
    impression_index: int = -1

    def titles(self) -> List[Title]:
        return list(self.history) + [self.positive] + list(self.negatives)


# --------------------------------------------------------------------------- news encoder

@dataclass
class _NewsForward:
    vector: np.ndarray
    token_ids: np.ndarray
    conv_cache: ConvCache
    conv_mask: Optional[np.ndarray]
    attn_cache: AttentionCache
    attn_mask: Optional[np.ndarray]
    pool_cache: PoolCache


def _check_title(params: ModelParams, title: Sequence[int]) -> np.ndarray:
    ids = np.asarray(title, dtype=np.int64).reshape(-1)
    if ids.size == 0:
        raise DataError("title has no tokens")
    if ids.size > params.hp.title_len:
        raise DataError(f"title has {ids.size} tokens, more than title_len={params.hp.title_len}")
    vocab = params[EMBEDDING].shape[0]
    for token in ids:
        if token < 0 or token >= vocab:
            raise DataError(f"token id {int(token)} outside vocabulary of size {vocab}")
    return ids


def _news_forward(params: ModelParams, title: Sequence[int], rng: Optional[RngState], training: bool) -> _NewsForward:
    hp = params.hp
    ids = _check_title(params, title)
    stream = rng.split(NEWS_STREAM).split(token_key(ids)) if rng is not None else None

    words = params[EMBEDDING][ids]
    conv, conv_cache = conv1d_forward(params["news_cnn_weight"], params["news_cnn_bias"], words)
    conv, conv_mask = dropout_forward(conv, hp.dropout_rate, stream.split(0) if stream else None, training)
    contextual, attn_cache = multihead_self_attention_forward(
        params["news_attn_query"], params["news_attn_key"], params["news_attn_value"], conv
    )
    contextual, attn_mask = dropout_forward(contextual, hp.dropout_rate, stream.split(1) if stream else None, training)
    vector, pool_cache = additive_attention_pool_forward(
        params["news_pool_proj"], params["news_pool_query"], contextual
    )
    return _NewsForward(vector, ids, conv_cache, conv_mask, attn_cache, attn_mask, pool_cache)


def encode_news(
    params: ModelParams, title: Sequence[int], rng: Optional[RngState] = None, training: bool = False
) -> np.ndarray:
    """Title token ids -> news vector of size num_heads*head_dim."""
    return _news_forward(params, title, rng, training).vector


# --------------------------------------------------------------------------- user encoder

@dataclass
class _UserForward:
    vector: np.ndarray
    length: int
    attn_cache: Optional[AttentionCache] = None
    attn_mask: Optional[np.ndarray] = None
    long_pool_cache: Optional[PoolCache] = None
    gru_caches: List[GruStepCache] = field(default_factory=list)
    combiner_cache: Optional[PoolCache] = None


def _user_forward(
    params: ModelParams,
    history_vecs: np.ndarray,
    rng: Optional[RngState],
    training: bool,
    history_key: int,
) -> _UserForward:
    hp = params.hp
    history_vecs = np.asarray(history_vecs, dtype=np.float64)
    if history_vecs.ndim != 2 or history_vecs.shape[0] == 0:
        raise DataError("user history is empty; users need at least one click to be encoded")
    if history_vecs.shape[1] != hp.news_dim:
        raise ShapeError(f"history vectors have width {history_vecs.shape[1]}, expected {hp.news_dim}")
    if history_vecs.shape[0] > hp.history_len:
        raise DataError(f"history has {history_vecs.shape[0]} clicks, more than history_len={hp.history_len}")

    fwd = _UserForward(vector=np.zeros(hp.news_dim), length=history_vecs.shape[0])
    long_term = short_term = None

    if hp.use_long_term:
        stream = rng.split(USER_STREAM).split(history_key) if rng is not None else None
        contextual, fwd.attn_cache = multihead_self_attention_forward(
            params["user_attn_query"], params["user_attn_key"], params["user_attn_value"], history_vecs
        )
        contextual, fwd.attn_mask = dropout_forward(
            contextual, hp.dropout_rate, stream.split(0) if stream else None, training
        )
        long_term, fwd.long_pool_cache = additive_attention_pool_forward(
            params["user_pool_proj"], params["user_pool_query"], contextual
        )

    if hp.use_short_term:
        # oldest -> newest so the final state leans on the most recent clicks
        gru = params.gru()
        state = np.zeros(gru.hidden_size)
        for x in history_vecs:
            state, cache = gru_step_forward(gru, state, x)
            fwd.gru_caches.append(cache)
        short_term = state

    if long_term is not None and short_term is not None:
        fwd.vector, fwd.combiner_cache = additive_attention_pool_forward(
            params["combiner_proj"], params["combiner_query"], np.stack([long_term, short_term])
        )
    else:
        fwd.vector = long_term if long_term is not None else short_term
    return fwd


def encode_user(
    params: ModelParams,
    history_vecs: np.ndarray,
    rng: Optional[RngState] = None,
    training: bool = False,
    history_key: int = 0,
) -> np.ndarray:
    """Clicked-news vectors (oldest first) -> user vector combining long- and short-term interest."""
    return _user_forward(params, history_vecs, rng, training, history_key).vector


def score(u: np.ndarray, t: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if u.ndim != 1 or u.shape != t.shape:
        raise ShapeError(f"score: vectors of shape {u.shape} and {t.shape} do not match")
    return float(matmul(u, t))


# --------------------------------------------------------------------------- loss and gradient

class _Accumulator:
    """Gradient buffers for one reverse pass."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.dense = {name: np.zeros_like(params[name]) for name in params.dense_names()}
        self.rows: List[int] = []
        self.row_grads: List[np.ndarray] = []

    def gru_view(self) -> Dict[str, np.ndarray]:
        return {name[len("gru_"):]: value for name, value in self.dense.items() if name.startswith("gru_")}

    def result(self, sample_weight: int, loss: float) -> GradientSet:
        table = self.params[EMBEDDING]
        return GradientSet.from_row_updates(
            self.dense,
            self.rows,
            self.row_grads,
            vocab_size=table.shape[0],
            embedding_dim=table.shape[1],
            sample_weight=sample_weight,
            loss=loss,
        )


def _news_backward(params: ModelParams, d_vector: np.ndarray, fwd: _NewsForward, acc: _Accumulator) -> None:
    d_proj, d_query, d_ctx = backprop.additive_attention_pool_backward(
        d_vector, fwd.pool_cache, params["news_pool_proj"], params["news_pool_query"]
    )
    acc.dense["news_pool_proj"] += d_proj
    acc.dense["news_pool_query"] += d_query

    d_ctx = backprop.dropout_backward(d_ctx, fwd.attn_mask)
    d_wq, d_wk, d_wv, d_conv = backprop.multihead_self_attention_backward(
        d_ctx, fwd.attn_cache, params["news_attn_query"], params["news_attn_key"], params["news_attn_value"]
    )
    acc.dense["news_attn_query"] += d_wq
    acc.dense["news_attn_key"] += d_wk
    acc.dense["news_attn_value"] += d_wv

    d_conv = backprop.dropout_backward(d_conv, fwd.conv_mask)
    d_weight, d_bias, d_words = backprop.conv1d_backward(d_conv, fwd.conv_cache, params["news_cnn_weight"])
    acc.dense["news_cnn_weight"] += d_weight
    acc.dense["news_cnn_bias"] += d_bias

    for token, row in zip(fwd.token_ids, d_words):
        acc.rows.append(int(token))
        acc.row_grads.append(row)


def _user_backward(params: ModelParams, d_user: np.ndarray, fwd: _UserForward, acc: _Accumulator) -> np.ndarray:
    hp = params.hp
    d_history = np.zeros((fwd.length, hp.news_dim))

    if fwd.combiner_cache is not None:
        d_proj, d_query, d_pair = backprop.additive_attention_pool_backward(
            d_user, fwd.combiner_cache, params["combiner_proj"], params["combiner_query"]
        )
        acc.dense["combiner_proj"] += d_proj
        acc.dense["combiner_query"] += d_query
        d_long, d_short = d_pair[0], d_pair[1]
    elif hp.use_long_term:
        d_long, d_short = d_user, None
    else:
        d_long, d_short = None, d_user

    if d_long is not None:
        d_proj, d_query, d_ctx = backprop.additive_attention_pool_backward(
            d_long, fwd.long_pool_cache, params["user_pool_proj"], params["user_pool_query"]
        )
        acc.dense["user_pool_proj"] += d_proj
        acc.dense["user_pool_query"] += d_query
        d_ctx = backprop.dropout_backward(d_ctx, fwd.attn_mask)
        d_wq, d_wk, d_wv, d_in = backprop.multihead_self_attention_backward(
            d_ctx, fwd.attn_cache, params["user_attn_query"], params["user_attn_key"], params["user_attn_value"]
        )
        acc.dense["user_attn_query"] += d_wq
        acc.dense["user_attn_key"] += d_wk
        acc.dense["user_attn_value"] += d_wv
        d_history += d_in

    if d_short is not None:
        gru = params.gru()
        gru_grads = acc.gru_view()
        d_state = d_short
        for step in range(fwd.length - 1, -1, -1):
            d_state, d_x = backprop.gru_step_backward(d_state, fwd.gru_caches[step], gru, gru_grads)
            d_history[step] += d_x

    return d_history


def ranking_loss(scores: np.ndarray) -> Tuple[float, np.ndarray]:
    """Loss of the first (clicked) score against the rest, and its derivative w.r.t. every score."""
    scores = np.asarray(scores, dtype=np.float64)
    loss = float(logsumexp(scores) - scores[0])
    d_scores = softmax(scores)
    d_scores[0] -= 1.0
    return loss, d_scores


@dataclass
class _SampleForward:
    user: _UserForward
    keys: List[Title]  # history titles then candidate titles
    scores: np.ndarray
    loss: float


def _check_sample(params: ModelParams, sample: TrainingSample) -> None:
    if len(sample.negatives) != params.hp.negatives_H:
        raise DataError(
            f"sample has {len(sample.negatives)} negatives, expected negatives_H={params.hp.negatives_H}"
        )


def _encode_titles(
    params: ModelParams, samples: Sequence[TrainingSample], rng: Optional[RngState], training: bool
) -> Dict[Title, _NewsForward]:
    table: Dict[Title, _NewsForward] = {}
    for sample in samples:
        _check_sample(params, sample)
        for title in sample.titles():
            key = tuple(int(t) for t in title)
            if key not in table:
                table[key] = _news_forward(params, key, rng, training)
    return table


def _sample_forward(
    params: ModelParams,
    sample: TrainingSample,
    table: Dict[Title, _NewsForward],
    rng: Optional[RngState],
    training: bool,
) -> _SampleForward:
    history = [tuple(int(t) for t in title) for title in sample.history]
    candidates = [tuple(int(t) for t in sample.positive)] + [tuple(int(t) for t in n) for n in sample.negatives]
    history_vecs = np.stack([table[key].vector for key in history]) if history else np.zeros((0, params.hp.news_dim))
    user = _user_forward(params, history_vecs, rng, training, sequence_key(history))
    news_vecs = np.stack([table[key].vector for key in candidates])
    scores = matmul(news_vecs, user.vector)
    loss, _ = ranking_loss(scores)
    return _SampleForward(user=user, keys=history + candidates, scores=scores, loss=loss)


def sample_loss(
    params: ModelParams, sample: TrainingSample, rng: Optional[RngState] = None, training: bool = False
) -> float:
    """-log softmax of the clicked score among the 1+H scores of its impression."""
    table = _encode_titles(params, [sample], rng, training)
    return _sample_forward(params, sample, table, rng, training).loss


def user_loss(
    params: ModelParams, samples: Sequence[TrainingSample], rng: Optional[RngState] = None, training: bool = False
) -> float:
    """Unnormalised sum of sample losses over a user's click behaviors."""
    if not samples:
        raise DataError("user_loss needs at least one training sample")
    table = _encode_titles(params, samples, rng, training)
    total = 0.0
    for sample in samples:
        total += _sample_forward(params, sample, table, rng, training).loss
    return total


def loss_and_gradient(
    params: ModelParams, samples: Sequence[TrainingSample], rng: Optional[RngState] = None, training: bool = False
) -> Tuple[float, GradientSet]:
    if not samples:
        raise DataError("user_gradient needs at least one training sample")
    table = _encode_titles(params, samples, rng, training)
    acc = _Accumulator(params)
    d_news: Dict[Title, np.ndarray] = {key: np.zeros(params.hp.news_dim) for key in table}
    n_history = 0
    total = 0.0

    for sample in samples:
        fwd = _sample_forward(params, sample, table, rng, training)
        total += fwd.loss
        n_history = fwd.user.length

        _, d_scores = ranking_loss(fwd.scores)
        candidates = fwd.keys[n_history:]
        news_vecs = np.stack([table[key].vector for key in candidates])
        d_user = matmul(d_scores, news_vecs)
        for key, d_score in zip(candidates, d_scores):
            d_news[key] += d_score * fwd.user.vector

        d_history = _user_backward(params, d_user, fwd.user, acc)
        for key, d_vec in zip(fwd.keys[:n_history], d_history):
            d_news[key] += d_vec

    for key, news_fwd in table.items():
        _news_backward(params, d_news[key], news_fwd, acc)

    return total, acc.result(sample_weight=len(samples), loss=total)


def user_gradient(
    params: ModelParams, samples: Sequence[TrainingSample], rng: Optional[RngState] = None, training: bool = False
) -> GradientSet:
    """Analytic gradient of user_loss for every parameter; sample_weight = number of samples."""
    return loss_and_gradient(params, samples, rng, training)[1]
