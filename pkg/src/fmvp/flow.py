"""Masked conditional flow matching: source construction, path, losses, training.

The purifier learns a velocity field that carries a masked source video

    x0 = m * x_adv + (1 - m) * eps,   eps ~ N(0, I),  m_i ~ Bernoulli(rho)

along the straight path x_t = (1 - t) x0 + t x1 to the clean video x1, whose
velocity is the constant x1 - x0.  ``rho`` is the keep probability.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from . import spectral
from .autodiff import ContractError, Node, ShapeError
from .optim import AdamW
from .rng import SeededRng
from .taint import is_tainted
from .velocity_net import predict_velocity


class TrainVariant(str, enum.Enum):
    PGD = "pgd"
    CW = "cw"
    GAUSSIAN = "gaussian"

    @property
    def uses_attack(self) -> bool:
        return self is not TrainVariant.GAUSSIAN


@dataclass
class LossConfig:
    lambda_cfm: float = 1.0
    lambda_fgl: float = 0.2
    fgl_residual: str = "complex"
    tau: float = 5.0
    floor: float = 0.1

    def __post_init__(self):
        if self.lambda_cfm < 0 or self.lambda_fgl < 0:
            raise ContractError("loss weights must be non-negative")
        if self.fgl_residual not in ("complex", "magnitude"):
            raise ContractError(f"unknown fgl residual form {self.fgl_residual!r}")


def sample_mask(shape, rho: float, rng: SeededRng) -> np.ndarray:
    """Per-element keep indicator: 1 with probability ``rho``."""
    if not 0.0 <= rho <= 1.0:
        raise ContractError(f"keep ratio must lie in [0, 1], got {rho}")
    return (rng.uniform(shape) < np.float32(rho)).astype(np.float32)


def make_source(x_adv: np.ndarray, mask: np.ndarray, rng: SeededRng) -> np.ndarray:
    if x_adv.shape != mask.shape:
        raise ShapeError("make_source", x_adv.shape, mask.shape)
    eps = rng.normal(x_adv.shape)
    return mask * x_adv + (1 - mask) * eps


def interpolate(x0: np.ndarray, x1: np.ndarray, t) -> np.ndarray:
    """Straight path point; ``t`` is a scalar or one time per batch element."""
    if x0.shape != x1.shape:
        raise ShapeError("interpolate", x0.shape, x1.shape)
    t = np.asarray(t, dtype=np.float32)
    if np.any((t < 0) | (t > 1)):
        raise ContractError(f"t must lie in [0, 1], got {t}")
    if t.ndim:
        t = t.reshape((-1,) + (1,) * (x0.ndim - 1))
    return (1 - t) * x0 + t * x1


def target_velocity(x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
    if x0.shape != x1.shape:
        raise ShapeError("target_velocity", x0.shape, x1.shape)
    return x1 - x0


def cfm_loss(v_pred, u_star) -> Node:
    v_pred = ad.as_node(v_pred)
    u_star = np.asarray(u_star)
    if v_pred.shape != u_star.shape:
        raise ShapeError("cfm", v_pred.shape, u_star.shape)
    diff = ad.sub(v_pred, u_star.astype(v_pred.value.dtype))
    return ad.mean(ad.hadamard(diff, diff))


@dataclass
class LossParts:
    total: Node
    cfm: Node
    fgl: Node | None


def total_loss_parts(v_pred, u_star, cfg: LossConfig, mask: spectral.FrequencyWeightMask | None = None) -> LossParts:
    cfm = cfm_loss(v_pred, u_star)
    if cfg.lambda_fgl == 0:
        total = cfm if cfg.lambda_cfm == 1 else ad.scalar_mul(cfm, cfg.lambda_cfm)
        return LossParts(total, cfm, None)
    if mask is None:
        mask = spectral.mask_for(np.shape(u_star), cfg.tau, cfg.floor)
    fgl = spectral.fgl_loss(v_pred, u_star, mask, cfg.fgl_residual)
    total = ad.add(ad.scalar_mul(cfm, cfg.lambda_cfm), ad.scalar_mul(fgl, cfg.lambda_fgl))
    return LossParts(total, cfm, fgl)


def total_loss(v_pred, u_star, cfg: LossConfig, mask: spectral.FrequencyWeightMask | None = None) -> Node:
    return total_loss_parts(v_pred, u_star, cfg, mask).total


@dataclass
class FlowSample:
    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray
    x_t: np.ndarray
    u_star: np.ndarray
    keep_ratio: np.ndarray


def draw_flow_sample(
    x_clean: np.ndarray,
    x_source: np.ndarray,
    rng: SeededRng,
    rho_range: tuple[float, float] = (0.2, 0.6),
) -> FlowSample:
    """Per-sample t, rho, mask and noise; each batch element has its own stream."""
    B = x_clean.shape[0]
    x0 = np.empty_like(x_clean)
    ts = np.empty(B, np.float32)
    rhos = np.empty(B, np.float32)
    for b in range(B):
        r = rng.split(b)
        ts[b] = r.split("t").uniform_scalar()
        rhos[b] = r.split("rho").uniform_scalar(*rho_range)
        m = sample_mask(x_clean[b].shape, float(rhos[b]), r.split("mask"))
        x0[b] = make_source(np.asarray(x_source[b]), m, r.split("eps"))
    x_t = interpolate(x0, x_clean, ts)
    return FlowSample(x0, x_clean, ts, x_t, target_velocity(x0, x_clean), rhos)


@dataclass
class StepRecord:
    step: int
    loss_total: float
    loss_cfm: float
    loss_fgl: float
    ok: bool = True
    message: str = ""


def train_step(
    x_clean: np.ndarray,
    x_adv: np.ndarray | None,
    variant: TrainVariant,
    params: Mapping[str, np.ndarray],
    opt: AdamW,
    rng: SeededRng,
    cfg: LossConfig,
    rho_range: tuple[float, float] = (0.2, 0.6),
    mask: spectral.FrequencyWeightMask | None = None,
    step: int = 0,
) -> tuple[dict[str, np.ndarray], StepRecord]:
    """One optimizer update on a batch of (clean, adversarial) videos.

    The generalist variant masks the clean video and must not be handed
    attack output; attack-aware variants require it.
    """
    variant = TrainVariant(variant)
    if is_tainted(x_clean):
        raise ContractError("clean batch carries an attack taint")
    x_clean = np.asarray(x_clean, dtype=np.float32)
    if variant.uses_attack:
        if x_adv is None:
            raise ContractError(f"variant {variant.value} needs adversarial inputs")
        if x_adv.shape != x_clean.shape:
            raise ShapeError("train_step", x_clean.shape, x_adv.shape)
        source = x_adv
    else:
        if x_adv is not None and is_tainted(x_adv):
            raise ContractError("gaussian variant was handed attack output")
        source = x_clean
    sample = draw_flow_sample(x_clean, source, rng, rho_range)

    leaves = {k: ad.leaf(v, k) for k, v in params.items()}
    v_pred = predict_velocity(sample.x_t, sample.t, leaves)
    parts = total_loss_parts(v_pred, sample.u_star, cfg, mask)
    rec = StepRecord(
        step,
        parts.total.item(),
        parts.cfm.item(),
        parts.fgl.item() if parts.fgl is not None else 0.0,
    )
    if not math.isfinite(rec.loss_total):
        rec.ok = False
        rec.message = "non-finite loss; update skipped"
        return dict(params), rec
    grads = ad.backward(parts.total)
    return opt.step(params, grads), rec


@dataclass
class TrainConfig:
    steps: int = 3000
    batch_size: int = 1
    lr: float = 1e-4
    rho_min: float = 0.2
    rho_max: float = 0.6
    loss: LossConfig = field(default_factory=LossConfig)


def train_purifier(
    x_clean: np.ndarray,
    variant: TrainVariant,
    params: Mapping[str, np.ndarray],
    seed: int,
    cfg: TrainConfig,
    x_adv: np.ndarray | None = None,
    on_step: Callable[[StepRecord], None] | None = None,
) -> tuple[dict[str, np.ndarray], list[StepRecord]]:
    """Run ``cfg.steps`` updates, cycling through ``x_clean`` in seeded epochs."""
    variant = TrainVariant(variant)
    n = len(x_clean)
    root = SeededRng(seed, ("train-purifier",))
    opt = AdamW(lr=cfg.lr)
    mask = spectral.mask_for(x_clean.shape, cfg.loss.tau, cfg.loss.floor)
    params = dict(params)
    log: list[StepRecord] = []
    order = np.empty(0, dtype=np.int64)
    epoch = 0
    for step in range(cfg.steps):
        if len(order) < cfg.batch_size:
            order = np.concatenate([order, root.split("epoch", epoch).permutation(n)])
            epoch += 1
        idx, order = order[: cfg.batch_size], order[cfg.batch_size:]
        batch_adv = x_adv[idx] if variant.uses_attack else None
        params, rec = train_step(
            x_clean[idx], batch_adv, variant, params, opt, root.split("step", step),
            cfg.loss, (cfg.rho_min, cfg.rho_max), mask, step,
        )
        log.append(rec)
        if on_step is not None:
            on_step(rec)
    return params, log


def write_training_log(path: str | Path, log: list[StepRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss_total", "loss_cfm", "loss_fgl"])
        for r in log:
            writer.writerow([r.step, repr(r.loss_total), repr(r.loss_cfm), repr(r.loss_fgl)])
