"""White-box attacks on a video classifier: L-inf PGD, L2 Carlini-Wagner and an
EOT-PGD adaptive attack that differentiates through a stochastic purifier.

Models are passed as callables mapping an input :class:`Node` to a
(B, num_classes) logits node, so any differentiable pipeline can be attacked.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol

import numpy as np

from . import autodiff as ad
from . import classifier as clf
from .autodiff import Node
from .optim import AdamW
from .rng import SeededRng
from .taint import taint

Model = Callable[[Node], Node]


def classifier_model(params: Mapping[str, np.ndarray]) -> Model:
    return lambda x: clf.logits(x, params)


@dataclass
class PGDConfig:
    epsilon: float = 8 / 255
    eta: float = 2 / 255
    iters: int = 10


@dataclass
class CWConfig:
    c_init: float = 1e-3
    binary_search_steps: int = 9
    lr: float = 0.01
    kappa: float = 0.0
    iters: int = 50


@dataclass
class AdaptiveConfig:
    epsilon: float = 8 / 255
    alpha: float = 0.007
    iters: int = 50
    eot_samples: int = 5
    restarts: int = 3
    purify_steps_grad: int = 4
    purify_steps_eval: int = 10


@dataclass
class AttackConfig:
    pgd: PGDConfig = field(default_factory=PGDConfig)
    cw: CWConfig = field(default_factory=CWConfig)
    adaptive: AdaptiveConfig = field(default_factory=AdaptiveConfig)


@dataclass
class AttackResult:
    attack: str
    x_adv: np.ndarray
    success: np.ndarray
    linf: np.ndarray
    l2: np.ndarray
    iters_used: np.ndarray

    def records(self) -> list[dict]:
        return [
            {
                "attack": self.attack,
                "success": bool(s),
                "linf": float(li),
                "l2": float(l2),
                "iters_used": int(it),
            }
            for s, li, l2, it in zip(self.success, self.linf, self.l2, self.iters_used)
        ]

    def write_sidecar(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.records(), indent=1) + "\n")


def _norms(x_adv: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = (x_adv.astype(np.float64) - x).reshape(len(x), -1)
    return np.abs(d).max(axis=1), np.sqrt((d * d).sum(axis=1))


def _input_grad(model: Model, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    node = ad.leaf(x, "input")
    z = model(node)
    grads = ad.backward(ad.cross_entropy(z, y))
    return grads["input"], z.value


def _linf_step(x_adv, x, g, step, eps):
    x_new = x_adv + np.float32(step) * np.sign(g).astype(np.float32)
    x_new = np.clip(x_new, x - np.float32(eps), x + np.float32(eps))
    return np.clip(x_new, 0.0, 1.0).astype(np.float32)


def pgd_attack(x: np.ndarray, y: np.ndarray, model: Model, cfg: PGDConfig | None = None) -> AttackResult:
    """Signed-gradient ascent on cross-entropy, projected to the eps-ball and [0, 1]."""
    cfg = cfg or PGDConfig()
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y)
    x_adv = x.copy()
    for _ in range(cfg.iters):
        if cfg.epsilon == 0:
            break
        g, _ = _input_grad(model, x_adv, y)
        x_adv = _linf_step(x_adv, x, g, cfg.eta, cfg.epsilon)
    pred = np.argmax(model(ad.constant(x_adv)).value, axis=1)
    linf, l2 = _norms(x_adv, x)
    iters = np.full(len(x), cfg.iters if cfg.epsilon else 0)
    return AttackResult("pgd", taint(x_adv), pred != y, linf, l2, iters)


def cw_success(z: np.ndarray, y: np.ndarray, kappa: float) -> np.ndarray:
    """argmax differs from y and the best other logit beats z_y by at least kappa."""
    rows = np.arange(len(y))
    other = z.copy()
    other[rows, y] = -np.inf
    margin = other.max(axis=1) - z[rows, y]
    return (np.argmax(z, axis=1) != y) & (margin >= kappa)


def cw_attack(x: np.ndarray, y: np.ndarray, model: Model, cfg: CWConfig | None = None) -> AttackResult:
    """Carlini-Wagner L2 in tanh space with a per-sample binary search over c.

    Returns, per sample, the successful iterate of smallest L2 distance, or the
    clean input with ``success=False`` when no search step succeeds.
    """
    cfg = cfg or CWConfig()
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y)
    n, K = len(x), None
    rows = np.arange(n)

    z0 = model(ad.constant(x)).value
    K = z0.shape[1]
    already = cw_success(z0, y, cfg.kappa)
    best_l2 = np.full(n, np.inf)
    best_adv = x.copy()
    best_l2[already] = 0.0
    iters_used = np.zeros(n, dtype=np.int64)

    active = ~already
    c = np.full(n, cfg.c_init, dtype=np.float64)
    lower = np.zeros(n)
    upper = np.full(n, np.inf)
    w0 = np.arctanh(np.clip(2.0 * x.astype(np.float64) - 1.0, -1 + 1e-6, 1 - 1e-6)).astype(np.float32)
    onehot_y = np.eye(K, dtype=np.float32)[y]
    red_axes = tuple(range(1, x.ndim))

    for _ in range(cfg.binary_search_steps):
        idx = np.nonzero(active)[0]
        if len(idx) == 0:
            break
        w = w0[idx].copy()
        xs, ys = x[idx], y[idx]
        cs = c[idx].astype(np.float32)
        opt = AdamW(lr=cfg.lr, weight_decay=0.0)
        found = np.zeros(len(idx), dtype=bool)
        for _ in range(cfg.iters):
            wl = ad.leaf(w, "w")
            x_adv = ad.scalar_mul(ad.add(ad.tanh(wl), np.ones_like(w)), 0.5)
            diff = ad.sub(x_adv, xs)
            dist = ad.sum(ad.hadamard(diff, diff), axes=red_axes)
            z = model(x_adv)
            zv = z.value
            # record successes of the current iterate before stepping
            ok = cw_success(zv, ys, cfg.kappa)
            l2 = np.sqrt(dist.value.astype(np.float64))
            improve = ok & (l2 < best_l2[idx])
            if improve.any():
                best_l2[idx[improve]] = l2[improve]
                best_adv[idx[improve]] = x_adv.value[improve]
            found |= ok
            other = zv.copy()
            other[np.arange(len(idx)), ys] = -np.inf
            onehot_j = np.eye(K, dtype=np.float32)[np.argmax(other, axis=1)]
            zy = ad.sum(ad.hadamard(z, onehot_y[idx]), axes=1)
            zj = ad.sum(ad.hadamard(z, onehot_j), axes=1)
            margin = ad.sub(ad.relu(ad.add(ad.sub(zy, zj), np.full(len(idx), cfg.kappa, np.float32))),
                            np.full(len(idx), cfg.kappa, np.float32))
            loss = ad.add(ad.sum(dist), ad.sum(ad.hadamard(margin, cs)))
            g = ad.backward(loss)["w"]
            w = opt.step({"w": w}, {"w": g})["w"]
        iters_used[idx] += cfg.iters
        # binary search on c: shrink towards lower on success, grow otherwise
        for k, i in enumerate(idx):
            if found[k]:
                upper[i] = min(upper[i], c[i])
                c[i] = (lower[i] + upper[i]) / 2
            else:
                lower[i] = max(lower[i], c[i])
                c[i] = (lower[i] + upper[i]) / 2 if np.isfinite(upper[i]) else c[i] * 2
    success = np.isfinite(best_l2)
    linf, l2 = _norms(best_adv, x)
    return AttackResult("cw", taint(best_adv), success, linf, l2, iters_used)


class Purifier(Protocol):
    def purify(self, x: np.ndarray, rng: SeededRng, steps: int | None = None) -> np.ndarray: ...

    def purify_node(self, x: Node, rng: SeededRng, steps: int | None = None) -> Node: ...


def eot_adaptive_attack(
    x: np.ndarray,
    y: np.ndarray,
    model: Model,
    purifier: Purifier,
    cfg: AdaptiveConfig | None = None,
    seed: int = 0,
) -> AttackResult:
    """EOT-PGD through the unrolled purifier.

    Each step averages the loss gradient over ``eot_samples`` purifier draws
    using ``purify_steps_grad`` Euler steps.  A restart counts as a success
    when a fresh ``purify_steps_eval`` purification is misclassified; later
    restarts start from a random point in the ball and run only for samples
    that have not succeeded yet.
    """
    cfg = cfg or AdaptiveConfig()
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y)
    root = SeededRng(seed, ("adaptive",))
    out = x.copy()
    success = np.zeros(len(x), dtype=bool)
    iters_used = np.zeros(len(x), dtype=np.int64)
    E = cfg.eot_samples
    for i in range(len(x)):
        xi = x[i:i + 1]
        yi = np.repeat(y[i:i + 1], E)
        best_loss = -np.inf
        for r in range(cfg.restarts):
            rs = root.split(i, r)
            if r == 0:
                xa = xi.copy()
            else:
                start = (2 * rs.split("start").uniform(xi.shape) - 1) * np.float32(cfg.epsilon)
                xa = np.clip(xi + start, 0, 1).astype(np.float32)
            for it in range(cfg.iters):
                node = ad.leaf(np.repeat(xa, E, axis=0), "input")
                purified = purifier.purify_node(node, rs.split("grad", it), cfg.purify_steps_grad)
                loss = ad.cross_entropy(model(purified), yi)
                g = ad.backward(loss)["input"].sum(axis=0, keepdims=True)
                xa = _linf_step(xa, xi, g, cfg.alpha, cfg.epsilon)
            iters_used[i] += cfg.iters
            check = purifier.purify(xa, rs.split("eval"), cfg.purify_steps_eval)
            z = model(ad.constant(check)).value
            eval_loss = ad.cross_entropy(ad.constant(z), y[i:i + 1]).item()
            hit = bool(np.argmax(z, axis=1)[0] != y[i])
            if hit or eval_loss > best_loss:
                best_loss = eval_loss
                out[i] = xa[0]
            if hit:
                success[i] = True
                break
    linf, l2 = _norms(out, x)
    return AttackResult("adaptive", taint(out), success, linf, l2, iters_used)


def run_attack(name: str, x, y, params, cfg: AttackConfig, purifier=None, seed: int = 0) -> AttackResult:
    model = classifier_model(params)
    if name == "pgd":
        return pgd_attack(x, y, model, cfg.pgd)
    if name == "cw":
        return cw_attack(x, y, model, cfg.cw)
    if name == "adaptive":
        if purifier is None:
            raise ValueError("adaptive attack needs a purifier")
        return eot_adaptive_attack(x, y, model, purifier, cfg.adaptive, seed)
    raise ValueError(f"unknown attack {name!r}")
