"""Skeleton encoding branch.

Pipeline: embedding block -> N_pre spatio-temporal blocks (f_pre) ->
time pooling -> joint-importance head (k_out) -> remaining blocks with
per-joint reweighting applied after each block's spatial stage ->
f_post -> time pooling (f_bar_post).

Each encoding block runs, in order: spatial self-attention across the V
joints of every frame, optional per-joint reweighting, temporal
self-attention across the T frames of every joint, and a feed-forward
stage. Residuals use the standard pre-norm convention.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .layers import (
    Grads,
    ParamBuilder,
    Params,
    layernorm_backward,
    layernorm_forward,
    linear_backward,
    linear_forward,
    mha_backward,
    mha_forward,
    mlp2_backward,
    mlp2_forward,
    sinusoidal_encoding,
    softmax_backward,
    softmax_forward,
)


def default_n_pre(n_blocks: int) -> int:
    """Placement heuristic for the importance head: just past the middle."""
    return min(n_blocks, max(1, round(5 * n_blocks / 9)))


@dataclass
class EncoderConfig:
    n_blocks: int = 4
    n_pre: int = 2
    c_embed: int = 32
    c_pre: int = 32
    c_post: int = 32
    heads: int = 4
    t_frames: int = 60
    v_joints: int = 25
    hidden_jid: int = 32
    ffn_mult: int = 2
    temporal_pool: str = "mean"  # or "max"
    reweight_residual: bool = False
    reweight_lambda: float = 0.5

    def validate(self) -> "EncoderConfig":
        if not 1 <= self.n_pre <= self.n_blocks:
            raise ConfigError(f"n_pre must be in [1, {self.n_blocks}], got {self.n_pre}")
        for name in ("c_embed", "c_pre", "c_post"):
            c = getattr(self, name)
            if c % self.heads != 0:
                raise ConfigError(f"{name}={c} not divisible by heads={self.heads}")
            if c % 2 != 0:
                raise ConfigError(f"{name}={c} must be even")
        if self.t_frames < 1 or self.v_joints < 1:
            raise ConfigError("t_frames and v_joints must be >= 1")
        if self.temporal_pool not in ("mean", "max"):
            raise ConfigError(f"temporal_pool must be 'mean' or 'max', got {self.temporal_pool!r}")
        return self

    @property
    def n_post(self) -> int:
        return self.n_blocks - self.n_pre

    def block_width(self, index: int) -> int:
        return self.c_pre if index < self.n_pre else self.c_post


@dataclass
class JointImportance:
    """Softmax distribution over joints; entries in (0, 1), sums to 1."""

    k_out: np.ndarray


@dataclass
class EncoderOutput:
    f_pre: np.ndarray  # (B, T, V, C_pre)
    f_post: np.ndarray  # (B, T, V, C_post)
    f_bar_post: np.ndarray  # (B, V, C_post)
    k_out: JointImportance  # k_out: (B, V)
    attention_maps: list[np.ndarray] = field(repr=False, default_factory=list)


def build_encoder_params(builder: ParamBuilder, cfg: EncoderConfig) -> None:
    builder.linear("embed.in", 3, cfg.c_embed)
    builder.embedding("embed.joint", (cfg.v_joints, cfg.c_embed))
    if cfg.c_embed != cfg.c_pre:
        builder.linear("embed.to_pre", cfg.c_embed, cfg.c_pre)
    for b in range(cfg.n_blocks):
        c = cfg.block_width(b)
        builder.layernorm(f"enc{b}.ln1", c)
        builder.mha(f"enc{b}.sp", c)
        builder.layernorm(f"enc{b}.ln2", c)
        builder.mha(f"enc{b}.tm", c)
        builder.layernorm(f"enc{b}.ln3", c)
        builder.mlp2(f"enc{b}.ffn", c, cfg.ffn_mult * c, c)
    builder.mlp2("jid", cfg.c_pre, cfg.hidden_jid, 1)
    if cfg.c_pre != cfg.c_post:
        builder.linear("pre_to_post", cfg.c_pre, cfg.c_post)


# ---------------------------------------------------------------------------
# embedding block


def embed_skeleton(params: Params, cfg: EncoderConfig, x: np.ndarray):
    """Project (x,y,z) per joint, add joint-index and temporal encodings.

    x: (B, T, V, 3) resampled to cfg.t_frames. Returns ((B,T,V,C_embed), cache).
    """
    b, t, v, c_in = x.shape
    if t != cfg.t_frames or v != cfg.v_joints or c_in != 3:
        raise ConfigError(
            f"input shape {x.shape} does not match (B, {cfg.t_frames}, {cfg.v_joints}, 3)"
        )
    proj, c_lin = linear_forward(params, "embed.in", x)
    pe = sinusoidal_encoding(t, cfg.c_embed)
    y = proj + params["embed.joint"][None, None, :, :] + pe[None, :, None, :]
    return y, c_lin


def embed_skeleton_backward(d_y: np.ndarray, cache, params: Params, grads: Grads) -> None:
    from .layers import acc_grad

    acc_grad(grads, "embed.joint", d_y.sum(axis=(0, 1)))
    linear_backward(d_y, cache, params, grads)  # input gradient discarded


# ---------------------------------------------------------------------------
# reweighting (per-joint scalar broadcast across time and channels)


def reweight_forward(x: np.ndarray, k: np.ndarray, cfg: EncoderConfig):
    """x: (B, T, V, C), k: (B, V). Plain mode multiplies features by k
    exactly; residual mode mixes (1 - lambda) of the identity back in."""
    kk = k[:, None, :, None]
    if cfg.reweight_residual:
        lam = cfg.reweight_lambda
        out = lam * (x * kk) + (1.0 - lam) * x
    else:
        out = x * kk
    return out, (x, k)


def reweight_backward(d_out: np.ndarray, cache, cfg: EncoderConfig):
    x, k = cache
    kk = k[:, None, :, None]
    if cfg.reweight_residual:
        lam = cfg.reweight_lambda
        d_x = d_out * (lam * kk + (1.0 - lam))
        d_k = lam * (d_out * x).sum(axis=(1, 3))
    else:
        d_x = d_out * kk
        d_k = (d_out * x).sum(axis=(1, 3))
    return d_x, d_k


# ---------------------------------------------------------------------------
# encoding block


def encoding_block(
    params: Params,
    prefix: str,
    x: np.ndarray,
    heads: int,
    cfg: EncoderConfig,
    reweight: np.ndarray | None = None,
):
    """One spatio-temporal block over x (B, T, V, C).

    Returns (out, spatial_attention (B, V, V), cache). The cache exposes
    'reweighted', the spatial-stage output that feeds temporal mixing.
    """
    b, t, v, c = x.shape
    # spatial stage: joints attend within each frame
    h1, c_ln1 = layernorm_forward(params, prefix + ".ln1", x)
    a1, probs_sp, c_sp = mha_forward(params, prefix + ".sp", h1.reshape(b * t, v, c),
                                     h1.reshape(b * t, v, c), heads)
    x_sp = x + a1.reshape(b, t, v, c)
    if reweight is not None:
        x_rw, c_rw = reweight_forward(x_sp, reweight, cfg)
    else:
        x_rw, c_rw = x_sp, None
    # temporal stage: each joint attends over time
    h2, c_ln2 = layernorm_forward(params, prefix + ".ln2", x_rw)
    h2t = h2.transpose(0, 2, 1, 3).reshape(b * v, t, c)
    a2, _, c_tm = mha_forward(params, prefix + ".tm", h2t, h2t, heads)
    x_tm = x_rw + a2.reshape(b, v, t, c).transpose(0, 2, 1, 3)
    # feed-forward stage
    h3, c_ln3 = layernorm_forward(params, prefix + ".ln3", x_tm)
    f, c_ffn = mlp2_forward(params, prefix + ".ffn", h3)
    out = x_tm + f
    attn = probs_sp.reshape(b, t, heads, v, v).mean(axis=(1, 2))
    cache = {
        "prefix": prefix,
        "shape": (b, t, v, c),
        "ln1": c_ln1,
        "sp": c_sp,
        "reweight": c_rw,
        "reweighted": x_rw,
        "ln2": c_ln2,
        "tm": c_tm,
        "ln3": c_ln3,
        "ffn": c_ffn,
    }
    return out, attn, cache


def encoding_block_backward(d_out: np.ndarray, cache, params: Params, grads: Grads, cfg: EncoderConfig):
    """Returns (d_x, d_k); d_k is None when the block had no reweighting."""
    b, t, v, c = cache["shape"]
    prefix = cache["prefix"]
    d_h3 = mlp2_backward(d_out, cache["ffn"], params, grads)
    d_x_tm = d_out + layernorm_backward(d_h3, cache["ln3"], params, grads)

    d_a2 = d_x_tm.transpose(0, 2, 1, 3).reshape(b * v, t, c)
    dq, dkv = mha_backward(d_a2, cache["tm"], params, grads)
    d_h2t = dq + dkv
    d_h2 = d_h2t.reshape(b, v, t, c).transpose(0, 2, 1, 3)
    d_x_rw = d_x_tm + layernorm_backward(d_h2, cache["ln2"], params, grads)

    d_k = None
    if cache["reweight"] is not None:
        d_x_sp, d_k = reweight_backward(d_x_rw, cache["reweight"], cfg)
    else:
        d_x_sp = d_x_rw

    d_a1 = d_x_sp.reshape(b * t, v, c)
    dq, dkv = mha_backward(d_a1, cache["sp"], params, grads)
    d_h1 = (dq + dkv).reshape(b, t, v, c)
    d_x = d_x_sp + layernorm_backward(d_h1, cache["ln1"], params, grads)
    return d_x, d_k


# ---------------------------------------------------------------------------
# joint importance head


def jid_forward(params: Params, f_bar_pre: np.ndarray):
    """Two linear layers squeeze each joint's vector to a score; softmax
    across joints yields the importance distribution k_out (B, V)."""
    scores, c_mlp = mlp2_forward(params, "jid", f_bar_pre)
    scores = scores[..., 0]
    k_out, p = softmax_forward(scores)
    return k_out, (c_mlp, p)


def jid_backward(d_k: np.ndarray, cache, params: Params, grads: Grads) -> np.ndarray:
    c_mlp, p = cache
    d_scores = softmax_backward(d_k, p)
    return mlp2_backward(d_scores[..., None], c_mlp, params, grads)


# ---------------------------------------------------------------------------
# time pooling


def pool_time_forward(x: np.ndarray, cfg: EncoderConfig):
    if cfg.temporal_pool == "mean":
        return x.mean(axis=1), ("mean", x.shape)
    idx = x.argmax(axis=1)
    return np.take_along_axis(x, idx[:, None], axis=1)[:, 0], ("max", x.shape, idx)


def pool_time_backward(d_pooled: np.ndarray, cache) -> np.ndarray:
    if cache[0] == "mean":
        _, shape = cache
        return np.broadcast_to(d_pooled[:, None], shape) / shape[1]
    _, shape, idx = cache
    d_x = np.zeros(shape)
    np.put_along_axis(d_x, idx[:, None], d_pooled[:, None], axis=1)
    return d_x


# ---------------------------------------------------------------------------
# full encoder forward/backward


def encoder_forward(params: Params, cfg: EncoderConfig, x: np.ndarray, apply_reweight: bool = True):
    """Run the full branch; returns (EncoderOutput, cache-bundle)."""
    caches: dict = {"blocks": [], "apply_reweight": apply_reweight}
    h, caches["embed"] = embed_skeleton(params, cfg, x)
    if cfg.c_embed != cfg.c_pre:
        h, caches["to_pre"] = linear_forward(params, "embed.to_pre", h)
    attn_maps: list[np.ndarray] = []
    for bidx in range(cfg.n_pre):
        h, attn, c = encoding_block(params, f"enc{bidx}", h, cfg.heads, cfg, None)
        attn_maps.append(attn)
        caches["blocks"].append(c)
    f_pre = h
    f_bar_pre, caches["pool_pre"] = pool_time_forward(f_pre, cfg)
    k_out, caches["jid"] = jid_forward(params, f_bar_pre)
    rw = k_out if apply_reweight else None

    if cfg.c_pre != cfg.c_post:
        h, caches["pre_to_post"] = linear_forward(params, "pre_to_post", h)
    if cfg.n_post == 0:
        # importance applies once, to the final feature tensor
        if rw is not None:
            h, caches["final_reweight"] = reweight_forward(h, rw, cfg)
    else:
        for bidx in range(cfg.n_pre, cfg.n_blocks):
            h, attn, c = encoding_block(params, f"enc{bidx}", h, cfg.heads, cfg, rw)
            attn_maps.append(attn)
            caches["blocks"].append(c)
    f_post = h
    f_bar_post, caches["pool_post"] = pool_time_forward(f_post, cfg)
    out = EncoderOutput(
        f_pre=f_pre,
        f_post=f_post,
        f_bar_post=f_bar_post,
        k_out=JointImportance(k_out),
        attention_maps=attn_maps,
    )
    return out, caches


def encoder_backward(
    d_f_bar_post: np.ndarray,
    caches: dict,
    params: Params,
    grads: Grads,
    cfg: EncoderConfig,
    d_k_out: np.ndarray | None = None,
) -> None:
    """Backpropagate gradients on f_bar_post (and optionally k_out)."""
    d_h = pool_time_backward(d_f_bar_post, caches["pool_post"])
    d_k_total = np.zeros_like(caches["jid"][1]) if d_k_out is None else d_k_out.copy()

    blocks = caches["blocks"]
    if cfg.n_post == 0:
        if "final_reweight" in caches:
            d_h, d_k = reweight_backward(d_h, caches["final_reweight"], cfg)
            d_k_total += d_k
    else:
        for c in reversed(blocks[cfg.n_pre :]):
            d_h, d_k = encoding_block_backward(d_h, c, params, grads, cfg)
            if d_k is not None:
                d_k_total += d_k
    if cfg.c_pre != cfg.c_post:
        d_h = linear_backward(d_h, caches["pre_to_post"], params, grads)

    # join at f_pre: chain path plus the importance-head path
    if caches["apply_reweight"] or d_k_out is not None:
        d_f_bar_pre = jid_backward(d_k_total, caches["jid"], params, grads)
        d_h = d_h + pool_time_backward(d_f_bar_pre, caches["pool_pre"])

    for c in reversed(blocks[: cfg.n_pre]):
        d_h, _ = encoding_block_backward(d_h, c, params, grads, cfg)
    if cfg.c_embed != cfg.c_pre:
        d_h = linear_backward(d_h, caches["to_pre"], params, grads)
    embed_skeleton_backward(d_h, caches["embed"], params, grads)


# ---------------------------------------------------------------------------
# attention report


def export_attention(output: EncoderOutput, sample: int = 0) -> str:
    """Render one sample's attention maps as CSV text.

    One row per (block, query joint) with V weights, then a summary row
    of aggregate importance: the mean attention each joint receives
    across blocks and query joints.
    """
    maps = [m[sample] for m in output.attention_maps]
    v = maps[0].shape[0]
    lines = ["block,query_joint," + ",".join(f"w{j}" for j in range(v))]
    for bidx, mat in enumerate(maps):
        for q in range(v):
            row = ",".join(f"{x:.8f}" for x in mat[q])
            lines.append(f"{bidx},{q},{row}")
    agg = np.mean([m.mean(axis=0) for m in maps], axis=0)
    lines.append("aggregate,," + ",".join(f"{x:.8f}" for x in agg))
    return "\n".join(lines) + "\n"
