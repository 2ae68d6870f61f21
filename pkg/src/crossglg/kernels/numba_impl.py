"""Numba-jitted twins of the kernels in numpy_impl.

Loops are kept serial (no prange) so results are reproducible run to
run; fastmath stays off so the arithmetic matches the numpy path to
rounding. First call per process compiles; cache=True persists the
compiled code next to the package.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def sdpa_forward(q, k, v, scale):
    B, Lq, D = q.shape
    Lk = k.shape[1]
    out = np.empty((B, Lq, D))
    probs = np.empty((B, Lq, Lk))
    for b in range(B):
        for i in range(Lq):
            row_max = -np.inf
            for j in range(Lk):
                s = 0.0
                for d in range(D):
                    s += q[b, i, d] * k[b, j, d]
                s *= scale
                probs[b, i, j] = s
                if s > row_max:
                    row_max = s
            total = 0.0
            for j in range(Lk):
                e = np.exp(probs[b, i, j] - row_max)
                probs[b, i, j] = e
                total += e
            for j in range(Lk):
                probs[b, i, j] /= total
            for d in range(D):
                acc = 0.0
                for j in range(Lk):
                    acc += probs[b, i, j] * v[b, j, d]
                out[b, i, d] = acc
    return out, probs


@njit(cache=True)
def sdpa_backward(q, k, v, probs, d_out, scale):
    B, Lq, D = q.shape
    Lk = k.shape[1]
    dq = np.zeros((B, Lq, D))
    dk = np.zeros((B, Lk, D))
    dv = np.zeros((B, Lk, D))
    d_scores = np.empty(Lk)
    for b in range(B):
        for i in range(Lq):
            # dv += p^T d_out, d_probs = d_out v^T
            inner = 0.0
            for j in range(Lk):
                dp = 0.0
                for d in range(D):
                    dp += d_out[b, i, d] * v[b, j, d]
                    dv[b, j, d] += probs[b, i, j] * d_out[b, i, d]
                d_scores[j] = dp
                inner += dp * probs[b, i, j]
            for j in range(Lk):
                ds = probs[b, i, j] * (d_scores[j] - inner)
                for d in range(D):
                    dq[b, i, d] += ds * k[b, j, d] * scale
                    dk[b, j, d] += ds * q[b, i, d] * scale
    return dq, dk, dv


@njit(cache=True)
def layernorm_forward(x, gain, bias, eps):
    N, C = x.shape
    y = np.empty((N, C))
    mean = np.empty(N)
    rstd = np.empty(N)
    for n in range(N):
        m = 0.0
        for c in range(C):
            m += x[n, c]
        m /= C
        var = 0.0
        for c in range(C):
            d = x[n, c] - m
            var += d * d
        var /= C
        r = 1.0 / np.sqrt(var + eps)
        mean[n] = m
        rstd[n] = r
        for c in range(C):
            y[n, c] = (x[n, c] - m) * r * gain[c] + bias[c]
    return y, mean, rstd


@njit(cache=True)
def layernorm_backward(d_y, x, gain, mean, rstd):
    N, C = x.shape
    dx = np.empty((N, C))
    d_gain = np.zeros(C)
    d_bias = np.zeros(C)
    for n in range(N):
        m1 = 0.0
        m2 = 0.0
        for c in range(C):
            xhat = (x[n, c] - mean[n]) * rstd[n]
            d_gain[c] += d_y[n, c] * xhat
            d_bias[c] += d_y[n, c]
            dxh = d_y[n, c] * gain[c]
            m1 += dxh
            m2 += dxh * xhat
        m1 /= C
        m2 /= C
        for c in range(C):
            xhat = (x[n, c] - mean[n]) * rstd[n]
            dxh = d_y[n, c] * gain[c]
            dx[n, c] = rstd[n] * (dxh - m1 - xhat * m2)
    return dx, d_gain, d_bias


@njit(cache=True)
def softmax_rows(x):
    N, C = x.shape
    out = np.empty((N, C))
    for n in range(N):
        row_max = x[n, 0]
        for c in range(1, C):
            if x[n, c] > row_max:
                row_max = x[n, c]
        total = 0.0
        for c in range(C):
            e = np.exp(x[n, c] - row_max)
            out[n, c] = e
            total += e
        for c in range(C):
            out[n, c] /= total
    return out
