"""Text-guided interaction branch.

Per-joint text features and time-pooled skeleton features are projected
into one shared space, then fused by a stack of interaction blocks:
text self-attention, text-queried cross-attention into the skeleton
stream, and a fusing perceptron over their sum. The fused per-joint
features are projected back to skeleton-feature width and pooled over
joints into a single action vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .layers import (
    Grads,
    ParamBuilder,
    Params,
    mha_backward,
    mha_forward,
    mlp2_backward,
    mlp2_forward,
)


@dataclass
class InteractionConfig:
    n_layers: int = 3
    c_p: int = 32
    heads: int = 4
    c_txt: int = 64
    c_post: int = 32
    static_text: bool = False  # feed the original text projection to every block
    attn_residual: bool = True  # residual around the two attention steps

    def validate(self) -> "InteractionConfig":
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.c_p % self.heads != 0:
            raise ConfigError(f"c_p={self.c_p} not divisible by heads={self.heads}")
        return self


@dataclass
class SharedSpaceFeatures:
    p_txt: np.ndarray  # (B, V, C_p)
    p_ske: np.ndarray  # (B, V, C_p)


def build_interaction_params(builder: ParamBuilder, cfg: InteractionConfig) -> None:
    builder.mlp2("txt_proj", cfg.c_txt, cfg.c_p, cfg.c_p)
    builder.mlp2("ske_proj", cfg.c_post, cfg.c_p, cfg.c_p)
    for m in range(cfg.n_layers):
        builder.mha(f"inter{m}.self", cfg.c_p)
        builder.mha(f"inter{m}.cross", cfg.c_p)
        builder.mlp2(f"inter{m}.mlp", cfg.c_p, cfg.c_p, cfg.c_p)
    builder.mlp2("backproj", cfg.c_p, cfg.c_p, cfg.c_post)


def project_to_shared(params: Params, t: np.ndarray, f_bar_post: np.ndarray):
    """Two independent perceptrons map both modalities to width C_p."""
    p_txt, c_t = mlp2_forward(params, "txt_proj", t)
    p_ske, c_s = mlp2_forward(params, "ske_proj", f_bar_post)
    return SharedSpaceFeatures(p_txt, p_ske), (c_t, c_s)


def project_to_shared_backward(d_txt, d_ske, cache, params: Params, grads: Grads):
    c_t, c_s = cache
    d_t = mlp2_backward(d_txt, c_t, params, grads)
    d_f = mlp2_backward(d_ske, c_s, params, grads)
    return d_t, d_f


def interaction_block(
    params: Params,
    prefix: str,
    p_txt_prev: np.ndarray,
    p_st_prev: np.ndarray,
    heads: int,
    attn_residual: bool = True,
):
    """One fusion block over (B, V, C_p) streams.

    Text self-attends; the refined text queries the skeleton stream via
    cross-attention; their sum passes through a perceptron to form the
    new skeleton-stream features. Returns (p_txt_i, p_st_i, cache).
    """
    a_txt, _, c_self = mha_forward(params, prefix + ".self", p_txt_prev, p_txt_prev, heads)
    p_txt_i = p_txt_prev + a_txt if attn_residual else a_txt
    a_st, _, c_cross = mha_forward(params, prefix + ".cross", p_txt_i, p_st_prev, heads)
    p_st_mid = p_st_prev + a_st if attn_residual else a_st
    fused = p_txt_i + p_st_mid
    p_st_i, c_mlp = mlp2_forward(params, prefix + ".mlp", fused)
    cache = (c_self, c_cross, c_mlp, attn_residual)
    return p_txt_i, p_st_i, cache


def interaction_block_backward(
    d_p_txt_i: np.ndarray, d_p_st_i: np.ndarray, cache, params: Params, grads: Grads
):
    """Returns (d_p_txt_prev, d_p_st_prev)."""
    c_self, c_cross, c_mlp, attn_residual = cache
    d_fused = mlp2_backward(d_p_st_i, c_mlp, params, grads)
    d_txt_i = d_p_txt_i + d_fused
    d_st_mid = d_fused
    d_q, d_kv = mha_backward(d_st_mid, c_cross, params, grads)
    d_txt_i = d_txt_i + d_q
    d_st_prev = d_kv + (d_st_mid if attn_residual else 0.0)
    d_q2, d_kv2 = mha_backward(d_txt_i, c_self, params, grads)
    d_txt_prev = d_q2 + d_kv2 + (d_txt_i if attn_residual else 0.0)
    return d_txt_prev, d_st_prev


def run_interaction(params: Params, cfg: InteractionConfig, shared: SharedSpaceFeatures):
    """Chain the fusion blocks; returns (p_st_M, cache).

    By default the text stream is chained (block i consumes block i-1's
    text output); with static_text every block reads the original
    projection instead.
    """
    p_txt, p_st = shared.p_txt, shared.p_ske
    block_caches = []
    for m in range(cfg.n_layers):
        txt_in = shared.p_txt if cfg.static_text else p_txt
        p_txt, p_st, c = interaction_block(
            params, f"inter{m}", txt_in, p_st, cfg.heads, cfg.attn_residual
        )
        block_caches.append(c)
    return p_st, (block_caches, cfg)


def run_interaction_backward(d_p_st: np.ndarray, cache, params: Params, grads: Grads):
    """Returns (d_p_txt0, d_p_ske0) matching the inputs of run_interaction."""
    block_caches, cfg = cache
    d_txt_static = np.zeros_like(d_p_st)
    d_txt = np.zeros_like(d_p_st)
    d_st = d_p_st
    for c in reversed(block_caches):
        d_txt_in, d_st = interaction_block_backward(d_txt, d_st, c, params, grads)
        if cfg.static_text:
            d_txt_static += d_txt_in
            d_txt = np.zeros_like(d_txt_in)
        else:
            d_txt = d_txt_in
    return d_txt + d_txt_static, d_st


def back_project_pool(params: Params, p_st_m: np.ndarray):
    """Perceptron back to skeleton width, then mean over joints -> (B, C_post)."""
    proj, c_mlp = mlp2_forward(params, "backproj", p_st_m)
    pooled = proj.mean(axis=1)
    return pooled, (c_mlp, proj.shape)


def back_project_pool_backward(d_pooled: np.ndarray, cache, params: Params, grads: Grads):
    c_mlp, shape = cache
    d_proj = np.broadcast_to(d_pooled[:, None, :], shape) / shape[1]
    return mlp2_backward(d_proj, c_mlp, params, grads)
