"""
Dense float64 kernels for the news and user encoders.

Each layer has a `*_forward` variant returning (output, cache) for the
backward kernels in src/model/backprop.py; the public op is the output
alone. Matrix products go through `matmul`, which accumulates in a fixed
ascending order so results are bitwise reproducible.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from ..core.errors import ConfigError, ShapeError
from .rng import RngState

# Above this many partial products matmul accumulates one rank-1 update at a time.
_ACCUMULATE_LIMIT = 1 << 20


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """c[i][j] = sum_p a[i][p]*b[p][j], summed in ascending p.

    1-D operands are treated as a row (left) or column (right) vector and the
    corresponding axis is dropped from the result.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a2 = a[None, :] if a.ndim == 1 else a
    b2 = b[:, None] if b.ndim == 1 else b
    if a2.ndim != 2 or b2.ndim != 2 or a2.shape[1] != b2.shape[0]:
        raise ShapeError(f"matmul: cannot multiply shape {a.shape} by shape {b.shape}")

    m, k = a2.shape
    n = b2.shape[1]
    if k == 0:
        out = np.zeros((m, n))
    elif m * k * n <= _ACCUMULATE_LIMIT:
        # add.accumulate is a sequential scan, unlike the pairwise add.reduce
        products = a2[:, :, None] * b2[None, :, :]
        out = np.add.accumulate(products, axis=1)[:, -1, :]
    else:
        out = np.zeros((m, n))
        for p in range(k):
            out += np.multiply.outer(a2[:, p], b2[p, :])

    if a.ndim == 1 and b.ndim == 1:
        return out.reshape(())
    if a.ndim == 1:
        return out[0]
    if b.ndim == 1:
        return out[:, 0]
    return out


def softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ShapeError(f"softmax: expected a non-empty vector, got shape {x.shape}")
    e = np.exp(x - np.max(x))
    return e / np.sum(e)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] == 0:
        raise ShapeError(f"softmax_rows: expected a non-empty matrix, got shape {x.shape}")
    e = np.exp(x - np.max(x, axis=1, keepdims=True))
    return e / np.sum(e, axis=1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


@dataclass(frozen=True)
class GruWeights:
    W_z: np.ndarray
    U_z: np.ndarray
    b_z: np.ndarray
    W_r: np.ndarray
    U_r: np.ndarray
    b_r: np.ndarray
    W_h: np.ndarray
    U_h: np.ndarray
    b_h: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.U_z.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_z.shape[1]

    @classmethod
    def zeros(cls, hidden_size: int, input_size: int) -> "GruWeights":
        w = lambda: np.zeros((hidden_size, input_size))
        u = lambda: np.zeros((hidden_size, hidden_size))
        b = lambda: np.zeros(hidden_size)
        return cls(w(), u(), b(), w(), u(), b(), w(), u(), b())


@dataclass
class GruStepCache:
    x: np.ndarray
    h_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    h_tilde: np.ndarray


def gru_step_forward(params: GruWeights, h_prev: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, GruStepCache]:
    h_prev = np.asarray(h_prev, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    d, e = params.hidden_size, params.input_size
    if h_prev.shape != (d,) or x.shape != (e,):
        raise ShapeError(
            f"gru_step: expected h_prev ({d},) and x ({e},), got {h_prev.shape} and {x.shape}"
        )
    z = sigmoid(matmul(params.W_z, x) + matmul(params.U_z, h_prev) + params.b_z)
    r = sigmoid(matmul(params.W_r, x) + matmul(params.U_r, h_prev) + params.b_r)
    h_tilde = np.tanh(matmul(params.W_h, x) + matmul(params.U_h, r * h_prev) + params.b_h)
    h = (1.0 - z) * h_prev + z * h_tilde
    return h, GruStepCache(x=x, h_prev=h_prev, z=z, r=r, h_tilde=h_tilde)


def gru_step(params: GruWeights, h_prev: np.ndarray, x: np.ndarray) -> np.ndarray:
    return gru_step_forward(params, h_prev, x)[0]


@dataclass
class AttentionCache:
    X: np.ndarray
    Q: np.ndarray  # heads x L x d_head
    K: np.ndarray
    V: np.ndarray
    A: np.ndarray  # heads x L x L


def multihead_self_attention_forward(
    w_query: np.ndarray, w_key: np.ndarray, w_value: np.ndarray, X: np.ndarray
) -> Tuple[np.ndarray, AttentionCache]:
    """Per head h: softmax_rows((X Q_h)(X K_h)^T / sqrt(d_head)) (X V_h), heads concatenated."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError(f"multihead_self_attention: expected L x e input with L >= 1, got {X.shape}")
    heads, e, d_head = w_query.shape
    if w_key.shape != w_query.shape or w_value.shape != w_query.shape or X.shape[1] != e:
        raise ShapeError(
            f"multihead_self_attention: projections {w_query.shape}/{w_key.shape}/{w_value.shape} "
            f"do not fit input {X.shape}"
        )
    scale = 1.0 / math.sqrt(d_head)
    Q = np.stack([matmul(X, w_query[h]) for h in range(heads)])
    K = np.stack([matmul(X, w_key[h]) for h in range(heads)])
    V = np.stack([matmul(X, w_value[h]) for h in range(heads)])
    A = np.stack([softmax_rows(matmul(Q[h], K[h].T) * scale) for h in range(heads)])
    out = np.concatenate([matmul(A[h], V[h]) for h in range(heads)], axis=1)
    return out, AttentionCache(X=X, Q=Q, K=K, V=V, A=A)


def multihead_self_attention(
    w_query: np.ndarray, w_key: np.ndarray, w_value: np.ndarray, X: np.ndarray
) -> np.ndarray:
    return multihead_self_attention_forward(w_query, w_key, w_value, X)[0]


@dataclass
class PoolCache:
    X: np.ndarray
    hidden: np.ndarray  # tanh(X P), L x q
    alpha: np.ndarray


def additive_attention_pool_forward(
    query_params: np.ndarray, query_vec: np.ndarray, X: np.ndarray
) -> Tuple[np.ndarray, PoolCache]:
    """alpha_i = softmax_i(v . tanh(P^T x_i)); out = sum_i alpha_i x_i."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError(f"additive_attention_pool: expected L x e input with L >= 1, got {X.shape}")
    if query_params.shape[0] != X.shape[1] or query_vec.shape != (query_params.shape[1],):
        raise ShapeError(
            f"additive_attention_pool: projection {query_params.shape} and query {query_vec.shape} "
            f"do not fit input {X.shape}"
        )
    hidden = np.tanh(matmul(X, query_params))
    alpha = softmax(matmul(hidden, query_vec))
    out = matmul(alpha, X)
    return out, PoolCache(X=X, hidden=hidden, alpha=alpha)


def additive_attention_pool(query_params: np.ndarray, query_vec: np.ndarray, X: np.ndarray) -> np.ndarray:
    return additive_attention_pool_forward(query_params, query_vec, X)[0]


@dataclass
class ConvCache:
    columns: np.ndarray  # L x (w*e)
    pre: np.ndarray      # L x f
    window: int
    input_shape: Tuple[int, int]


def _conv_columns(X: np.ndarray, window: int) -> np.ndarray:
    L, e = X.shape
    pad = (window - 1) // 2
    padded = np.zeros((L + 2 * pad, e))
    padded[pad:pad + L] = X
    return np.stack([padded[i:i + window].reshape(-1) for i in range(L)])


def conv1d_forward(weight: np.ndarray, bias: np.ndarray, X: np.ndarray) -> Tuple[np.ndarray, ConvCache]:
    """Same-length 1-D convolution with zero padding and ReLU; weight is f x (window*e)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError(f"conv1d: expected L x e input with L >= 1, got {X.shape}")
    f, span = weight.shape
    e = X.shape[1]
    if span % e != 0 or bias.shape != (f,):
        raise ShapeError(f"conv1d: filters {weight.shape} / bias {bias.shape} do not fit input {X.shape}")
    window = span // e
    if window % 2 != 1:
        raise ShapeError(f"conv1d: window must be odd, got {window}")
    columns = _conv_columns(X, window)
    pre = matmul(columns, weight.T) + bias
    return np.maximum(pre, 0.0), ConvCache(columns=columns, pre=pre, window=window, input_shape=X.shape)


def conv1d(weight: np.ndarray, bias: np.ndarray, X: np.ndarray) -> np.ndarray:
    return conv1d_forward(weight, bias, X)[0]


def dropout_forward(
    x: np.ndarray, rate: float, rng: Optional[RngState], training: bool
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Inverted dropout; returns the output and the scaled keep-mask (None when identity)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ConfigError("dropout in training mode needs an rng stream")
    keep = rng.generator().random(x.shape) < (1.0 - rate)
    mask = keep / (1.0 - rate)
    return x * mask, mask


def dropout(x: np.ndarray, rate: float, rng: Optional[RngState], training: bool) -> np.ndarray:
    return dropout_forward(x, rate, rng, training)[0]


def laplace_from_uniform(u, scale: float):
    """Inverse-CDF Laplace transform of uniform draws u in (0, 1)."""
    u = np.asarray(u, dtype=np.float64)
    centred = u - 0.5
    return -scale * np.sign(centred) * np.log(1.0 - 2.0 * np.abs(centred))


def laplace_noise(rng: RngState, scale: float, size) -> np.ndarray:
    """Array of independent zero-mean Laplace draws with scale λ."""
    if not scale >= 0.0:
        raise ConfigError(f"Laplace scale must be >= 0, got {scale}")
    if scale == 0.0:
        return np.zeros(size)
    return laplace_from_uniform(rng.uniform_open(size), scale)


def laplace_sample(rng: RngState, scale: float) -> float:
    if not scale >= 0.0:
        raise ConfigError(f"Laplace scale must be >= 0, got {scale}")
    if scale == 0.0:
        return 0.0
    return float(laplace_from_uniform(rng.uniform_open(), scale))
