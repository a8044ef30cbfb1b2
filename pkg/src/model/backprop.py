"""Backward kernels for the layers in src/nn/primitives.py."""

import math
from typing import Dict, Optional, Tuple

import numpy as np

from ..nn.primitives import (
    AttentionCache,
    ConvCache,
    GruStepCache,
    GruWeights,
    PoolCache,
    matmul,
)


def conv1d_backward(
    dout: np.ndarray, cache: ConvCache, weight: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (d_weight, d_bias, d_input)."""
    dpre = dout * (cache.pre > 0.0)
    d_weight = matmul(dpre.T, cache.columns)
    d_bias = np.sum(dpre, axis=0)
    d_columns = matmul(dpre, weight)

    L, e = cache.input_shape
    window = cache.window
    pad = (window - 1) // 2
    d_padded = np.zeros((L + 2 * pad, e))
    for i in range(L):
        d_padded[i:i + window] += d_columns[i].reshape(window, e)
    return d_weight, d_bias, d_padded[pad:pad + L]


def multihead_self_attention_backward(
    dout: np.ndarray,
    cache: AttentionCache,
    w_query: np.ndarray,
    w_key: np.ndarray,
    w_value: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Returns (d_w_query, d_w_key, d_w_value, d_input)."""
    heads, _, d_head = w_query.shape
    scale = 1.0 / math.sqrt(d_head)
    X = cache.X
    d_wq = np.zeros_like(w_query)
    d_wk = np.zeros_like(w_key)
    d_wv = np.zeros_like(w_value)
    dX = np.zeros_like(X)
    for h in range(heads):
        d_out_h = dout[:, h * d_head:(h + 1) * d_head]
        A = cache.A[h]
        dA = matmul(d_out_h, cache.V[h].T)
        dV = matmul(A.T, d_out_h)
        dS = A * (dA - np.sum(dA * A, axis=1, keepdims=True)) * scale
        dQ = matmul(dS, cache.K[h])
        dK = matmul(dS.T, cache.Q[h])
        d_wq[h] = matmul(X.T, dQ)
        d_wk[h] = matmul(X.T, dK)
        d_wv[h] = matmul(X.T, dV)
        dX += matmul(dQ, w_query[h].T) + matmul(dK, w_key[h].T) + matmul(dV, w_value[h].T)
    return d_wq, d_wk, d_wv, dX


def additive_attention_pool_backward(
    dout: np.ndarray, cache: PoolCache, query_params: np.ndarray, query_vec: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (d_query_params, d_query_vec, d_input)."""
    alpha = cache.alpha
    d_alpha = matmul(cache.X, dout)
    dX = np.multiply.outer(alpha, dout)
    d_logits = alpha * (d_alpha - np.sum(alpha * d_alpha))
    d_query_vec = matmul(cache.hidden.T, d_logits)
    d_pre = np.multiply.outer(d_logits, query_vec) * (1.0 - cache.hidden ** 2)
    d_query_params = matmul(cache.X.T, d_pre)
    dX += matmul(d_pre, query_params.T)
    return d_query_params, d_query_vec, dX


def gru_step_backward(
    dh: np.ndarray, cache: GruStepCache, params: GruWeights, grads: Dict[str, np.ndarray]
) -> Tuple[np.ndarray, np.ndarray]:
    """Accumulates weight gradients into `grads` (keys W_z..b_h); returns (d_h_prev, d_x)."""
    z, r, h_tilde, h_prev, x = cache.z, cache.r, cache.h_tilde, cache.h_prev, cache.x

    dz = dh * (h_tilde - h_prev)
    d_h_tilde = dh * z
    d_h_prev = dh * (1.0 - z)

    d_a_h = d_h_tilde * (1.0 - h_tilde ** 2)
    grads["W_h"] += np.multiply.outer(d_a_h, x)
    grads["U_h"] += np.multiply.outer(d_a_h, r * h_prev)
    grads["b_h"] += d_a_h
    d_x = matmul(params.W_h.T, d_a_h)
    d_reset_h = matmul(params.U_h.T, d_a_h)
    dr = d_reset_h * h_prev
    d_h_prev = d_h_prev + d_reset_h * r

    d_a_z = dz * z * (1.0 - z)
    grads["W_z"] += np.multiply.outer(d_a_z, x)
    grads["U_z"] += np.multiply.outer(d_a_z, h_prev)
    grads["b_z"] += d_a_z
    d_x = d_x + matmul(params.W_z.T, d_a_z)
    d_h_prev = d_h_prev + matmul(params.U_z.T, d_a_z)

    d_a_r = dr * r * (1.0 - r)
    grads["W_r"] += np.multiply.outer(d_a_r, x)
    grads["U_r"] += np.multiply.outer(d_a_r, h_prev)
    grads["b_r"] += d_a_r
    d_x = d_x + matmul(params.W_r.T, d_a_r)
    d_h_prev = d_h_prev + matmul(params.U_r.T, d_a_r)

    return d_h_prev, d_x


def dropout_backward(dout: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    return dout if mask is None else dout * mask
