"""Deterministic training loop, checkpoint production, gradient checks.

Optimizer is plain gradient descent with momentum 0.9 and per-epoch
cosine decay; initialization is seeded uniform fan-in scaling. Equal
(config, data) inputs give equal checkpoints on one platform.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import ModelCheckpoint
from .data import Dataset, preprocess
from .errors import ConfigError, DataFormatError
from .model import (
    Batch,
    LossBreakdown,
    ModelConfig,
    backward_training,
    forward_training,
    init_params,
)
from .layers import Params
from .topology import SkeletonTopology


def lr_at(cfg: ModelConfig, epoch: int) -> float:
    if not cfg.cosine_decay or cfg.epochs <= 1:
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * epoch / cfg.epochs))


@dataclass
class TrainState:
    cfg: ModelConfig
    params: Params
    velocities: dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "TrainState":
        params = init_params(cfg, rng)
        vel = {k: np.zeros_like(v) for k, v in params.items()}
        return cls(cfg=cfg, params=params, velocities=vel)

    def step(self, batch: Batch) -> LossBreakdown:
        """One forward/backward/update on a mini-batch."""
        breakdown, caches = forward_training(self.params, self.cfg, batch)
        grads = backward_training(self.params, self.cfg, caches)
        lr = lr_at(self.cfg, self.epoch)
        mu = self.cfg.momentum
        for name, g in grads.items():
            v = self.velocities[name]
            v *= mu
            v += g
            self.params[name] -= lr * v
        return breakdown


def train_step(state: TrainState, batch: Batch) -> tuple[TrainState, LossBreakdown]:
    """Functional wrapper over TrainState.step (state is updated in place)."""
    return state, state.step(batch)


def _class_lookup(
    table: dict[int, np.ndarray] | None, labels: np.ndarray, what: str
) -> np.ndarray:
    assert table is not None
    rows = []
    for y in labels:
        if int(y) not in table:
            raise DataFormatError(f"missing {what} for class {int(y)}")
        rows.append(table[int(y)])
    return np.stack(rows)


def train(
    cfg: ModelConfig,
    data: Dataset,
    topology: SkeletonTopology,
    kgt_by_label: dict[int, np.ndarray] | None = None,
    emb_by_label: dict[int, np.ndarray] | None = None,
) -> tuple[ModelCheckpoint, list[LossBreakdown]]:
    """Train on the base split and return a frozen checkpoint + loss log.

    kgt_by_label maps class label -> (V,) calibration target; emb_by_label
    maps class label -> (V, C_txt) per-joint text features. Either may be
    omitted when the corresponding guidance toggle is off.
    """
    cfg.validate()
    labels = sorted({int(s.label) for s in data.sequences})
    if labels and (min(labels) < 0 or max(labels) >= cfg.n_classes):
        raise ConfigError(
            f"dataset labels {labels[:5]}... must lie in [0, {cfg.n_classes})"
        )
    if cfg.g2l:
        missing = [y for y in labels if kgt_by_label is None or y not in kgt_by_label]
        if missing:
            raise DataFormatError(f"missing key-joint target for classes {missing}")
    if cfg.l2g:
        missing = [y for y in labels if emb_by_label is None or y not in emb_by_label]
        if missing:
            raise DataFormatError(f"missing text embeddings for classes {missing}")

    x_all, y_all = preprocess(data, topology, cfg.encoder.t_frames)
    rng = np.random.default_rng(cfg.seed)
    state = TrainState.init(cfg, rng)

    log: list[LossBreakdown] = []
    n = len(y_all)
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        order = rng.permutation(n)
        sums = np.zeros(3)
        batches = 0
        for start in range(0, n, cfg.batch):
            idx = order[start : start + cfg.batch]
            batch = Batch(
                x=x_all[idx],
                y=y_all[idx],
                k_gt=_class_lookup(kgt_by_label, y_all[idx], "key-joint target")
                if cfg.g2l
                else None,
                t_emb=_class_lookup(emb_by_label, y_all[idx], "text embeddings")
                if cfg.l2g
                else None,
            )
            bd = state.step(batch)
            sums += (bd.l_s, bd.l_c, bd.l_calibrate)
            batches += 1
        if batches:
            from .model import loss_overall

            log.append(
                loss_overall(
                    sums[0] / batches, sums[2] / batches, sums[1] / batches,
                    cfg.alpha1, cfg.alpha2,
                )
            )
    metadata = {
        "epochs_run": cfg.epochs,
        "seed": cfg.seed,
        "frozen": True,
        "final_losses": vars(log[-1]) if log else None,
    }
    ckpt = ModelCheckpoint.from_params(cfg, state.params, metadata)
    return ckpt, log


# ---------------------------------------------------------------------------
# finite-difference gradient verification


@dataclass
class TensorCheck:
    rel_error: float
    analytic_linf: float
    numeric_linf: float
    exact_zero: bool


@dataclass
class GradCheckReport:
    seed: int
    step: float
    tensors: dict[str, TensorCheck]
    runtime_s: float

    @property
    def max_rel_error(self) -> float:
        return max((t.rel_error for t in self.tensors.values()), default=0.0)

    def rows(self) -> list[str]:
        out = []
        for name in sorted(self.tensors):
            t = self.tensors[name]
            tag = "zero" if t.exact_zero else f"{t.rel_error:.3e}"
            out.append(f"{name},{tag},{t.analytic_linf:.3e},{t.numeric_linf:.3e}")
        return out


def tiny_config(m_layers: int = 2) -> ModelConfig:
    """The miniature configuration used for finite-difference checks."""
    from .encoder import EncoderConfig
    from .interaction import InteractionConfig

    return ModelConfig(
        encoder=EncoderConfig(
            n_blocks=2, n_pre=1, c_embed=8, c_pre=8, c_post=8,
            heads=2, t_frames=4, v_joints=5, hidden_jid=8,
        ),
        interaction=InteractionConfig(n_layers=m_layers, c_p=8, heads=2, c_txt=8, c_post=8),
        n_classes=3,
        batch=3,
        epochs=1,
    ).validate()


def random_batch(cfg: ModelConfig, rng: np.random.Generator) -> Batch:
    enc = cfg.encoder
    b = cfg.batch
    x = rng.normal(size=(b, enc.t_frames, enc.v_joints, 3))
    y = rng.integers(0, cfg.n_classes, size=b)
    kgt = rng.uniform(0.1, 1.0, size=(b, enc.v_joints))
    kgt /= kgt.sum(axis=1, keepdims=True)
    t_emb = rng.normal(size=(b, enc.v_joints, cfg.interaction.c_txt))
    return Batch(x=x, y=y, k_gt=kgt, t_emb=t_emb)


def check_gradients(cfg: ModelConfig | None = None, seed: int = 0, step: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Every entry of every parameter tensor is perturbed by +-step at
    float64. The per-tensor relative error is
    ||analytic - numeric||_inf / max(||analytic||_inf, ||numeric||_inf)
    (0 when both vanish); tensors with no gradient path are reported as
    exact zeros.
    """
    t0 = time.monotonic()
    cfg = tiny_config() if cfg is None else cfg.validate()
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng)
    batch = random_batch(cfg, rng)

    _, caches = forward_training(params, cfg, batch)
    analytic = backward_training(params, cfg, caches)

    def loss_at() -> float:
        bd, _ = forward_training(params, cfg, batch)
        return bd.l_overall

    tensors: dict[str, TensorCheck] = {}
    for name in sorted(params):
        theta = params[name]
        numeric = np.zeros_like(theta)
        flat = theta.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_at()
            flat[i] = orig - step
            down = loss_at()
            flat[i] = orig
            nflat[i] = (up - down) / (2.0 * step)
        a_linf = float(np.abs(analytic[name]).max())
        n_linf = float(np.abs(numeric).max())
        if a_linf == 0.0 and n_linf == 0.0:
            tensors[name] = TensorCheck(0.0, 0.0, 0.0, exact_zero=True)
            continue
        diff = float(np.abs(analytic[name] - numeric).max())
        rel = diff / max(a_linf, n_linf)
        tensors[name] = TensorCheck(rel, a_linf, n_linf, exact_zero=False)
    return GradCheckReport(
        seed=seed, step=step, tensors=tensors, runtime_s=time.monotonic() - t0
    )
