"""Masked Euler purification and velocity-norm adversarial detection."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Node
from .flow import sample_mask
from .rng import SeededRng
from .velocity_net import predict_velocity

Field = Callable[[Node, float], Node]


class PurificationError(RuntimeError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"purification state became non-finite at Euler step {step}")


@dataclass
class PurifyConfig:
    gamma: float = 0.5
    xi: float = 1e-5
    steps: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ContractError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.xi < 0:
            raise ContractError(f"xi must be non-negative, got {self.xi}")
        if self.steps < 1:
            raise ContractError(f"steps must be >= 1, got {self.steps}")


def _inference_draws(shape, gamma: float, rng: SeededRng) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample keep mask and noise, each sample on its own stream."""
    mask = np.empty(shape, np.float32)
    eps = np.empty(shape, np.float32)
    for b in range(shape[0]):
        r = rng.split(b)
        mask[b] = sample_mask(shape[1:], gamma, r.split("mask"))
        eps[b] = r.split("eps").normal(shape[1:])
    return mask, eps


def init_inference_state(x_adv: np.ndarray, cfg: PurifyConfig, rng: SeededRng) -> np.ndarray:
    """x0 = m * (x_adv + xi * eps) + (1 - m) * eps with m ~ Bernoulli(gamma)."""
    x_adv = np.asarray(x_adv, dtype=np.float32)
    mask, eps = _inference_draws(x_adv.shape, cfg.gamma, rng)
    return mask * (x_adv + np.float32(cfg.xi) * eps) + (1 - mask) * eps


def _init_node(x: Node, cfg: PurifyConfig, rng: SeededRng) -> Node:
    mask, eps = _inference_draws(x.shape, cfg.gamma, rng)
    offset = mask * np.float32(cfg.xi) * eps + (1 - mask) * eps
    return ad.add(ad.hadamard(x, mask), offset)


def network_field(params: Mapping[str, np.ndarray]) -> Field:
    return lambda x, t: predict_velocity(x, t, params)


def euler_integrate(x0, field: Field, steps: int) -> Node:
    """Forward Euler from t=0 to 1 on the left-endpoint grid t_k = k/N (no clamp)."""
    if steps < 1:
        raise ContractError(f"steps must be >= 1, got {steps}")
    x = ad.as_node(x0)
    dt = 1.0 / steps
    for k in range(steps):
        x = ad.add(x, ad.scalar_mul(field(x, k / steps), dt))
        if not np.all(np.isfinite(x.value)):
            raise PurificationError(k)
    return x


def euler_purify(x0: np.ndarray, params: Mapping[str, np.ndarray] | None, steps: int, field: Field | None = None) -> np.ndarray:
    if field is None:
        field = network_field(params)
    return ad.clamp01(euler_integrate(x0, field, steps)).value


class FlowPurifier:
    """Masked initialisation followed by Euler integration of the learned field."""

    def __init__(self, params: Mapping[str, np.ndarray], cfg: PurifyConfig | None = None, field: Field | None = None):
        self.params = params
        self.cfg = cfg or PurifyConfig()
        self.field = field or network_field(params)

    def with_config(self, **changes) -> "FlowPurifier":
        cfg = PurifyConfig(**{**self.cfg.__dict__, **changes})
        return FlowPurifier(self.params, cfg, self.field)

    def purify(self, x: np.ndarray, rng: SeededRng, steps: int | None = None) -> np.ndarray:
        x0 = init_inference_state(x, self.cfg, rng)
        return ad.clamp01(euler_integrate(x0, self.field, steps or self.cfg.steps)).value

    def purify_node(self, x: Node, rng: SeededRng, steps: int | None = None) -> Node:
        x0 = _init_node(x, self.cfg, rng)
        return ad.clamp01(euler_integrate(x0, self.field, steps or self.cfg.steps))


class IdentityPurifier:
    def purify(self, x: np.ndarray, rng: SeededRng | None = None, steps: int | None = None) -> np.ndarray:
        return np.asarray(x)

    def purify_node(self, x: Node, rng: SeededRng | None = None, steps: int | None = None) -> Node:
        return x


def purify_dataset(
    purifier, x: np.ndarray, seed: int, stream: str = "purify", steps: int | None = None,
    batch: int = 8, workers: int = 1,
) -> np.ndarray:
    """Purify ``x`` sample by sample; sample ``i`` always uses stream ``(seed, stream, i)``."""
    root = SeededRng(seed, (stream,))
    chunks = [(s, min(s + batch, len(x))) for s in range(0, len(x), batch)]

    def run(span):
        s, e = span
        out = np.empty_like(x[s:e])
        for j in range(s, e):
            out[j - s] = purifier.purify(x[j:j + 1], root.split(j), steps)[0]
        return out

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return np.concatenate(parts) if parts else np.empty_like(x)


def detection_score(x: np.ndarray, params: Mapping[str, np.ndarray] | None = None, field: Field | None = None) -> np.ndarray:
    """Per-sample L2 norm of the velocity field at t=0 on the unmasked input."""
    if field is None:
        field = network_field(params)
    x = np.asarray(x, dtype=np.float32)
    scores = np.empty(len(x))
    for i in range(len(x)):
        v = field(ad.constant(x[i:i + 1]), 0.0).value.astype(np.float64)
        scores[i] = np.sqrt(np.sum(v * v))
    return scores


def roc_auc(scores_clean, scores_adv) -> float:
    """P(adv > clean) + 0.5 P(adv == clean), via mid-ranks."""
    clean = np.asarray(scores_clean, dtype=np.float64).ravel()
    adv = np.asarray(scores_adv, dtype=np.float64).ravel()
    if clean.size == 0 or adv.size == 0:
        raise ContractError("roc_auc needs non-empty score lists")
    allv = np.concatenate([clean, adv])
    order = np.argsort(allv, kind="mergesort")
    sorted_v = allv[order]
    ranks = np.empty(allv.size)
    # mid-ranks over tie groups
    starts = np.r_[0, np.nonzero(np.diff(sorted_v))[0] + 1]
    ends = np.r_[starts[1:], allv.size]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + e + 1) / 2.0
    r_adv = ranks[clean.size:].sum()
    u = r_adv - adv.size * (adv.size + 1) / 2.0
    return float(u / (clean.size * adv.size))


def roc_curve(scores_clean, scores_adv) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) at every distinct threshold, from (0, 0) to (1, 1); adv is positive."""
    clean = np.asarray(scores_clean, dtype=np.float64).ravel()
    adv = np.asarray(scores_adv, dtype=np.float64).ravel()
    thresholds = np.unique(np.concatenate([clean, adv]))[::-1]
    fpr = [0.0]
    tpr = [0.0]
    for th in thresholds:
        fpr.append(float(np.mean(clean >= th)))
        tpr.append(float(np.mean(adv >= th)))
    return np.asarray(fpr), np.asarray(tpr)


def trapezoid_auc(fpr: np.ndarray, tpr: np.ndarray) -> float:
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def write_scores_csv(path: str | Path, scores: np.ndarray, labels: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "label", "score"])
        for i, (lab, s) in enumerate(zip(labels, scores)):
            writer.writerow([i, int(lab), repr(float(s))])


def write_roc_csv(path: str | Path, fpr: np.ndarray, tpr: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["fpr", "tpr"])
        for f, t in zip(fpr, tpr):
            writer.writerow([repr(float(f)), repr(float(t))])
