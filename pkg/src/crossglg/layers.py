"""Forward/backward primitives over a flat parameter dictionary.

Parameters live in one dict[str, ndarray] keyed by dotted names
("enc0.sp.q.w", ...), which is also the checkpoint manifest order.
Every forward returns (output, cache); the matching backward consumes
the upstream gradient plus the cache and accumulates parameter
gradients into a second dict. All math is float64.

tanh is the package-wide nonlinearity: it is smooth everywhere (so
central finite differences converge cleanly) and maps 0 to 0.
"""
from __future__ import annotations

import numpy as np

from . import kernels

Params = dict[str, np.ndarray]
Grads = dict[str, np.ndarray]

LN_EPS = 1e-5


def acc_grad(grads: Grads, name: str, value: np.ndarray) -> None:
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


# ---------------------------------------------------------------------------
# initialization


class ParamBuilder:
    """Creates named tensors in a fixed order from one seeded generator."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: Params = {}

    def _add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        self.params[name] = value

    def linear(self, prefix: str, fan_in: int, fan_out: int) -> None:
        bound = 1.0 / np.sqrt(fan_in)
        self._add(prefix + ".w", self.rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        self._add(prefix + ".b", np.zeros(fan_out))

    def layernorm(self, prefix: str, dim: int) -> None:
        self._add(prefix + ".g", np.ones(dim))
        self._add(prefix + ".b", np.zeros(dim))

    def mha(self, prefix: str, dim: int) -> None:
        for part in ("q", "k", "v", "o"):
            self.linear(f"{prefix}.{part}", dim, dim)

    def mlp2(self, prefix: str, c_in: int, hidden: int, c_out: int) -> None:
        self.linear(prefix + ".l1", c_in, hidden)
        self.linear(prefix + ".l2", hidden, c_out)

    def embedding(self, name: str, shape: tuple[int, ...]) -> None:
        bound = 1.0 / np.sqrt(shape[-1])
        self._add(name, self.rng.uniform(-bound, bound, size=shape))


# ---------------------------------------------------------------------------
# linear / mlp / tanh


def linear_forward(params: Params, prefix: str, x: np.ndarray):
    y = x @ params[prefix + ".w"] + params[prefix + ".b"]
    return y, (prefix, x)


def linear_backward(d_y: np.ndarray, cache, params: Params, grads: Grads) -> np.ndarray:
    prefix, x = cache
    w = params[prefix + ".w"]
    xf = x.reshape(-1, x.shape[-1])
    dyf = d_y.reshape(-1, d_y.shape[-1])
    acc_grad(grads, prefix + ".w", xf.T @ dyf)
    acc_grad(grads, prefix + ".b", dyf.sum(axis=0))
    return (dyf @ w.T).reshape(x.shape)


def mlp2_forward(params: Params, prefix: str, x: np.ndarray):
    """linear -> tanh -> linear, applied to the last axis."""
    h_pre, c1 = linear_forward(params, prefix + ".l1", x)
    h = np.tanh(h_pre)
    y, c2 = linear_forward(params, prefix + ".l2", h)
    return y, (c1, h, c2)


def mlp2_backward(d_y: np.ndarray, cache, params: Params, grads: Grads) -> np.ndarray:
    c1, h, c2 = cache
    d_h = linear_backward(d_y, c2, params, grads)
    d_pre = d_h * (1.0 - h * h)
    return linear_backward(d_pre, c1, params, grads)


# ---------------------------------------------------------------------------
# layer normalization (last axis of an arbitrarily shaped tensor)


def layernorm_forward(params: Params, prefix: str, x: np.ndarray):
    shape = x.shape
    x2 = x.reshape(-1, shape[-1])
    y, mean, rstd = kernels.layernorm_forward(
        x2, params[prefix + ".g"], params[prefix + ".b"], LN_EPS
    )
    return y.reshape(shape), (prefix, x2, mean, rstd, shape)


def layernorm_backward(d_y: np.ndarray, cache, params: Params, grads: Grads) -> np.ndarray:
    prefix, x2, mean, rstd, shape = cache
    dx, dg, db = kernels.layernorm_backward(
        d_y.reshape(-1, shape[-1]), x2, params[prefix + ".g"], mean, rstd
    )
    acc_grad(grads, prefix + ".g", dg)
    acc_grad(grads, prefix + ".b", db)
    return dx.reshape(shape)


# ---------------------------------------------------------------------------
# multi-head attention


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, length, c = x.shape
    dh = c // heads
    return x.reshape(n, length, heads, dh).transpose(0, 2, 1, 3).reshape(n * heads, length, dh)


def _merge_heads(x: np.ndarray, heads: int) -> np.ndarray:
    nh, length, dh = x.shape
    n = nh // heads
    return x.reshape(n, heads, length, dh).transpose(0, 2, 1, 3).reshape(n, length, heads * dh)


def mha_forward(params: Params, prefix: str, x_q: np.ndarray, x_kv: np.ndarray, heads: int):
    """Multi-head attention; x_q (N, Lq, C), x_kv (N, Lk, C).

    Returns (y, probs (N, heads, Lq, Lk), cache). Self-attention callers
    pass x_q is x_kv and must sum the two returned input gradients.
    """
    q, cq = linear_forward(params, prefix + ".q", x_q)
    k, ck = linear_forward(params, prefix + ".k", x_kv)
    v, cv = linear_forward(params, prefix + ".v", x_kv)
    n, lq, c = q.shape
    lk = k.shape[1]
    dh = c // heads
    scale = 1.0 / np.sqrt(dh)
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    out_h, probs = kernels.sdpa_forward(qh, kh, vh, scale)
    merged = _merge_heads(out_h, heads)
    y, co = linear_forward(params, prefix + ".o", merged)
    cache = (qh, kh, vh, probs, heads, scale, cq, ck, cv, co)
    return y, probs.reshape(n, heads, lq, lk), cache


def mha_backward(d_y: np.ndarray, cache, params: Params, grads: Grads):
    """Returns (d_x_q, d_x_kv)."""
    qh, kh, vh, probs, heads, scale, cq, ck, cv, co = cache
    d_merged = linear_backward(d_y, co, params, grads)
    d_out_h = _split_heads(d_merged, heads)
    dqh, dkh, dvh = kernels.sdpa_backward(qh, kh, vh, probs, d_out_h, scale)
    dq = _merge_heads(dqh, heads)
    dk = _merge_heads(dkh, heads)
    dv = _merge_heads(dvh, heads)
    d_x_q = linear_backward(dq, cq, params, grads)
    d_x_kv = linear_backward(dk, ck, params, grads)
    d_x_kv += linear_backward(dv, cv, params, grads)
    return d_x_q, d_x_kv


# ---------------------------------------------------------------------------
# softmax over the last axis


def softmax_forward(x: np.ndarray):
    shape = x.shape
    p = kernels.softmax_rows(x.reshape(-1, shape[-1])).reshape(shape)
    return p, p


def softmax_backward(d_p: np.ndarray, p: np.ndarray) -> np.ndarray:
    inner = (d_p * p).sum(axis=-1, keepdims=True)
    return p * (d_p - inner)


def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    """Fixed sin/cos positional table of shape (length, dim); dim must be even."""
    pos = np.arange(length)[:, None]
    i = np.arange(dim // 2)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / dim)
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table
