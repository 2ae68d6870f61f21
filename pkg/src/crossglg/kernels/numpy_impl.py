"""Pure-numpy reference implementations of the hot kernels.

Every function here has a numba twin in :mod:`crossglg.kernels.numba_impl`
with identical signatures and (up to floating-point reassociation)
identical results. The numpy versions lean on BLAS for the matmuls and
are the fallback when numba is unavailable or disabled.

All kernels operate on float64 arrays. Batch-of-heads inputs are folded
into the leading dimension by the callers.
"""
from __future__ import annotations

import numpy as np


def sdpa_forward(q: np.ndarray, k: np.ndarray, v: np.ndarray, scale: float):
    """Scaled dot-product attention forward.

    q: (B, Lq, D), k/v: (B, Lk, D). Returns (out (B, Lq, D), probs (B, Lq, Lk)).
    Softmax is computed with the row-max subtracted for stability.
    """
    scores = np.matmul(q, np.swapaxes(k, 1, 2)) * scale
    scores -= scores.max(axis=2, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=2, keepdims=True)
    out = np.matmul(probs, v)
    return out, probs


def sdpa_backward(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    probs: np.ndarray,
    d_out: np.ndarray,
    scale: float,
):
    """Backward pass of sdpa_forward. Returns (dq, dk, dv)."""
    dv = np.matmul(np.swapaxes(probs, 1, 2), d_out)
    d_probs = np.matmul(d_out, np.swapaxes(v, 1, 2))
    # softmax rows: ds = p * (dp - sum(dp * p))
    inner = (d_probs * probs).sum(axis=2, keepdims=True)
    d_scores = probs * (d_probs - inner)
    dq = np.matmul(d_scores, k) * scale
    dk = np.matmul(np.swapaxes(d_scores, 1, 2), q) * scale
    return dq, dk, dv


def layernorm_forward(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float):
    """Layer normalization over the last axis of a 2-d input.

    x: (N, C). Returns (y, mean (N,), rstd (N,)).
    """
    mean = x.mean(axis=1)
    var = ((x - mean[:, None]) ** 2).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    y = xhat * gain[None, :] + bias[None, :]
    return y, mean, rstd


def layernorm_backward(
    d_y: np.ndarray,
    x: np.ndarray,
    gain: np.ndarray,
    mean: np.ndarray,
    rstd: np.ndarray,
):
    """Backward pass of layernorm_forward. Returns (dx, dgain, dbias)."""
    xhat = (x - mean[:, None]) * rstd[:, None]
    d_gain = (d_y * xhat).sum(axis=0)
    d_bias = d_y.sum(axis=0)
    d_xhat = d_y * gain[None, :]
    m1 = d_xhat.mean(axis=1, keepdims=True)
    m2 = (d_xhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (d_xhat - m1 - xhat * m2)
    return dx, d_gain, d_bias


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a 2-d array, max-subtracted for stability."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)
