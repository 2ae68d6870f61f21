"""Dual-branch model: losses, shared classifier, full forward/backward.

The skeleton branch (encoder -> projector -> pool -> classifier) is the
only path used at inference. During training the guidance branch
(text/skeleton projection -> interaction stack -> back-projection ->
the same classifier) and the importance-calibration loss feed gradients
back into the encoder blocks.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import EncoderConfig, build_encoder_params, encoder_backward, encoder_forward
from .errors import ConfigError
from .interaction import (
    InteractionConfig,
    back_project_pool,
    back_project_pool_backward,
    build_interaction_params,
    project_to_shared,
    project_to_shared_backward,
    run_interaction,
    run_interaction_backward,
)
from .layers import (
    Grads,
    ParamBuilder,
    Params,
    mlp2_backward,
    mlp2_forward,
    softmax_forward,
)


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    interaction: InteractionConfig = field(default_factory=InteractionConfig)
    n_classes: int = 10
    alpha1: float = 0.5
    alpha2: float = 0.2
    lr: float = 0.05
    batch: int = 128
    epochs: int = 110
    seed: int = 0
    momentum: float = 0.9
    cosine_decay: bool = True
    g2l: bool = True
    l2g: bool = True
    binary_calibration_target: bool = False

    def validate(self) -> "ModelConfig":
        self.encoder.validate()
        self.interaction.validate()
        if self.interaction.c_post != self.encoder.c_post:
            raise ConfigError(
                f"interaction.c_post={self.interaction.c_post} must equal "
                f"encoder.c_post={self.encoder.c_post}"
            )
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ConfigError("alpha1 and alpha2 must be >= 0")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if self.batch < 1 or self.epochs < 0 or self.lr <= 0:
            raise ConfigError("batch >= 1, epochs >= 0 and lr > 0 required")
        return self


def desk_config(n_classes: int = 10, **overrides) -> ModelConfig:
    """Scaled-down defaults that train in minutes on a laptop CPU."""
    cfg = ModelConfig(
        encoder=EncoderConfig(),
        interaction=InteractionConfig(),
        n_classes=n_classes,
        batch=32,
        epochs=30,
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg.validate()


def fidelity_config(n_classes: int, n_pre: int = 5) -> ModelConfig:
    """Nine-block configuration used by the importance-placement sweep."""
    enc = EncoderConfig(n_blocks=9, n_pre=n_pre)
    return ModelConfig(encoder=enc, n_classes=n_classes).validate()


@dataclass
class LossBreakdown:
    l_s: float
    l_c: float
    l_calibrate: float
    l_overall: float


def loss_overall(l_s: float, l_calibrate: float, l_c: float,
                 alpha1: float = 0.5, alpha2: float = 0.2) -> LossBreakdown:
    """Total training loss: l_s + alpha1 * l_calibrate + alpha2 * l_c."""
    return LossBreakdown(
        l_s=float(l_s),
        l_c=float(l_c),
        l_calibrate=float(l_calibrate),
        l_overall=float(l_s + alpha1 * l_calibrate + alpha2 * l_c),
    )


def loss_calibrate(k_out: np.ndarray, k_gt: np.ndarray) -> float:
    """Mean squared error between importance output and key-joint target."""
    k_out = np.asarray(k_out, dtype=np.float64)
    k_gt = np.asarray(k_gt, dtype=np.float64)
    if k_out.shape != k_gt.shape:
        raise ConfigError(f"length mismatch: {k_out.shape} vs {k_gt.shape}")
    return float(np.mean((k_out - k_gt) ** 2))


def loss_ce(y_hat: np.ndarray, y: int) -> float:
    """Cross-entropy of a normalized probability vector at class y."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if not 0 <= y < y_hat.shape[-1]:
        raise ConfigError(f"class index {y} out of range [0, {y_hat.shape[-1]})")
    return float(-np.log(y_hat[y]))


def _ce_from_logits(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Stable batched cross-entropy; returns (mean loss, d_logits)."""
    b = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = float(-logp[np.arange(b), y].mean())
    d = np.exp(logp)
    d[np.arange(b), y] -= 1.0
    return loss, d / b


def classify(params: Params, f: np.ndarray) -> np.ndarray:
    """Shared classifier head: perceptron + softmax over classes."""
    single = f.ndim == 1
    logits, _ = mlp2_forward(params, "cls", f[None] if single else f)
    probs, _ = softmax_forward(logits)
    return probs[0] if single else probs


# ---------------------------------------------------------------------------
# parameters


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> Params:
    """All trainable tensors, in a fixed construction order.

    Both branches are always created (toggles gate gradients, not
    initialization), so runs that differ only in toggles start from
    identical parameters under the same seed.
    """
    cfg.validate()
    builder = ParamBuilder(rng)
    build_encoder_params(builder, cfg.encoder)
    c_post = cfg.encoder.c_post
    builder.mlp2("skehead", c_post, c_post, c_post)
    builder.mlp2("cls", c_post, c_post, cfg.n_classes)
    build_interaction_params(builder, cfg.interaction)
    return builder.params


def _proj_pool_forward(params: Params, prefix: str, x: np.ndarray):
    """Perceptron on each joint row, then mean over joints."""
    proj, c = mlp2_forward(params, prefix, x)
    return proj.mean(axis=1), (c, proj.shape)


def _proj_pool_backward(d_pooled: np.ndarray, cache, params: Params, grads: Grads):
    c, shape = cache
    d_proj = np.broadcast_to(d_pooled[:, None, :], shape) / shape[1]
    return mlp2_backward(d_proj, c, params, grads)


# ---------------------------------------------------------------------------
# training forward / backward


@dataclass
class Batch:
    x: np.ndarray  # (B, T, V, 3)
    y: np.ndarray  # (B,)
    k_gt: np.ndarray | None = None  # (B, V)
    t_emb: np.ndarray | None = None  # (B, V, C_txt)


def forward_training(params: Params, cfg: ModelConfig, batch: Batch):
    """Full dual-branch forward; returns (LossBreakdown, cache-bundle)."""
    caches: dict = {}
    enc_out, caches["enc"] = encoder_forward(
        params, cfg.encoder, batch.x, apply_reweight=cfg.g2l
    )
    caches["enc_out"] = enc_out

    f_s, caches["skehead"] = _proj_pool_forward(params, "skehead", enc_out.f_bar_post)
    logits_s, caches["cls_s"] = mlp2_forward(params, "cls", f_s)
    l_s, caches["d_logits_s"] = _ce_from_logits(logits_s, batch.y)

    l_cal = 0.0
    if cfg.g2l:
        if batch.k_gt is None:
            raise ConfigError("g2l enabled but batch has no key-joint targets")
        k = enc_out.k_out.k_out
        diff = k - batch.k_gt
        l_cal = float(np.mean(diff**2))
        caches["d_k_out"] = 2.0 * diff / diff.size

    l_c = 0.0
    if cfg.l2g:
        if batch.t_emb is None:
            raise ConfigError("l2g enabled but batch has no text embeddings")
        shared, caches["proj"] = project_to_shared(params, batch.t_emb, enc_out.f_bar_post)
        p_st, caches["inter"] = run_interaction(params, cfg.interaction, shared)
        f_c, caches["backproj"] = back_project_pool(params, p_st)
        logits_c, caches["cls_c"] = mlp2_forward(params, "cls", f_c)
        l_c, caches["d_logits_c"] = _ce_from_logits(logits_c, batch.y)

    return loss_overall(l_s, l_cal, l_c, cfg.alpha1, cfg.alpha2), caches


def backward_training(params: Params, cfg: ModelConfig, caches: dict) -> Grads:
    """Gradient of l_overall with respect to every parameter tensor."""
    grads: Grads = {}
    d_f_s = mlp2_backward(caches["d_logits_s"], caches["cls_s"], params, grads)
    d_f_bar_post = _proj_pool_backward(d_f_s, caches["skehead"], params, grads)

    if cfg.l2g:
        d_f_c = mlp2_backward(
            cfg.alpha2 * caches["d_logits_c"], caches["cls_c"], params, grads
        )
        d_p_st = back_project_pool_backward(d_f_c, caches["backproj"], params, grads)
        d_p_txt, d_p_ske = run_interaction_backward(d_p_st, caches["inter"], params, grads)
        _, d_fbp = project_to_shared_backward(d_p_txt, d_p_ske, caches["proj"], params, grads)
        d_f_bar_post = d_f_bar_post + d_fbp

    d_k_out = cfg.alpha1 * caches["d_k_out"] if cfg.g2l else None
    encoder_backward(d_f_bar_post, caches["enc"], params, grads, cfg.encoder, d_k_out)

    # tensors outside every active gradient path get explicit zeros
    for name, value in params.items():
        if name not in grads:
            grads[name] = np.zeros_like(value)
    return grads


def skeleton_features(params: Params, cfg: ModelConfig, x: np.ndarray) -> np.ndarray:
    """Inference path: encoder + skeleton head. Touches no text input."""
    enc_out, _ = encoder_forward(params, cfg.encoder, x, apply_reweight=cfg.g2l)
    f_s, _ = _proj_pool_forward(params, "skehead", enc_out.f_bar_post)
    return f_s
