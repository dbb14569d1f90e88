"""Finite-difference gradient checks for every engine primitive and loss."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from . import spectral
from .autodiff import GradCheckReport, Node
from .flow import cfm_loss
from .velocity_net import init_params, predict_velocity

Builder = Callable[[Mapping[str, Node]], Node]


def _away_from_kinks(rng: np.random.Generator, shape, kinks=(0.0,), gap: float = 0.05) -> np.ndarray:
    """Random values at least ``gap`` from every kink so central differences stay smooth."""
    x = rng.uniform(-1.5, 1.5, size=shape)
    for k in kinks:
        near = np.abs(x - k) < gap
        x[near] = k + np.where(x[near] >= k, gap, -gap) * 2
    return x


def _weighted(out: Node, rng: np.random.Generator) -> Node:
    """Scalarise with a fixed random weighting so every output entry matters."""
    w = rng.normal(size=out.shape)
    return ad.sum(ad.hadamard(out, w))


def primitive_cases(seed: int = 0) -> dict[str, tuple[Builder, dict[str, np.ndarray]]]:
    rng = np.random.default_rng(seed)
    n = lambda *s: rng.normal(size=s)  # noqa: E731

    def scal(i):
        return lambda out: _weighted(out, np.random.default_rng(seed + 100 + i))

    cases: dict[str, tuple[Builder, dict[str, np.ndarray]]] = {}
    cases["add"] = (lambda p: scal(0)(ad.add(p["a"], p["b"])), {"a": n(3, 4), "b": n(3, 4)})
    cases["sub"] = (lambda p: scal(1)(ad.sub(p["a"], p["b"])), {"a": n(3, 4), "b": n(3, 4)})
    cases["hadamard"] = (lambda p: scal(2)(ad.hadamard(p["a"], p["b"])), {"a": n(3, 4), "b": n(3, 4)})
    cases["scalar-mul"] = (lambda p: scal(3)(ad.scalar_mul(p["a"], -1.7)), {"a": n(5)})
    cases["linear"] = (
        lambda p: scal(4)(ad.linear(p["x"], p["w"], p["b"])),
        {"x": n(2, 5), "w": n(3, 5), "b": n(3)},
    )
    cases["conv3d"] = (
        lambda p: scal(5)(ad.conv3d(p["x"], p["k"], p["b"])),
        {"x": n(2, 2, 3, 4, 5), "k": n(3, 2, 3, 3, 3), "b": n(3)},
    )
    cases["silu"] = (lambda p: scal(6)(ad.silu(p["a"])), {"a": n(4, 3)})
    cases["relu"] = (lambda p: scal(7)(ad.relu(p["a"])), {"a": _away_from_kinks(rng, (4, 3))})
    cases["tanh"] = (lambda p: scal(8)(ad.tanh(p["a"])), {"a": n(4, 3)})
    cases["clamp01"] = (
        lambda p: scal(9)(ad.clamp01(p["a"])),
        {"a": _away_from_kinks(rng, (4, 3), kinks=(0.0, 1.0))},
    )
    cases["sum"] = (lambda p: scal(10)(ad.sum(p["a"], axes=1)), {"a": n(3, 4, 2)})
    cases["mean"] = (lambda p: scal(11)(ad.mean(p["a"], axes=(0, 2))), {"a": n(3, 4, 2)})
    cases["l2norm"] = (lambda p: ad.l2norm(p["a"]), {"a": n(3, 4)})
    cases["reshape"] = (lambda p: scal(12)(ad.reshape(p["a"], (4, 3))), {"a": n(2, 6)})
    cases["concat-channel"] = (
        lambda p: scal(13)(ad.concat_channel(p["a"], p["b"])),
        {"a": n(2, 1, 3), "b": n(2, 2, 3)},
    )
    cases["slice-channel"] = (lambda p: scal(14)(ad.slice_channel(p["a"], 1, 3)), {"a": n(2, 4, 3)})
    cases["broadcast"] = (lambda p: scal(15)(ad.broadcast(p["a"], (2, 3, 4))), {"a": n(2, 1, 4)})
    cases["avg-pool"] = (lambda p: scal(16)(ad.avg_pool(p["a"], 2)), {"a": n(1, 2, 4, 4, 6)})
    labels = np.array([0, 2, 1])
    cases["cross-entropy"] = (lambda p: ad.cross_entropy(p["z"], labels), {"z": n(3, 4)})
    return cases


def loss_cases(seed: int = 0) -> dict[str, tuple[Builder, dict[str, np.ndarray]]]:
    rng = np.random.default_rng(seed + 1000)
    shape = (2, 1, 2, 6, 8)
    u = rng.normal(size=shape)
    mask = spectral.mask_for(shape)
    return {
        "fgl-complex": (lambda p: spectral.fgl_loss(p["v"], u, mask, "complex"), {"v": rng.normal(size=shape)}),
        "fgl-magnitude": (lambda p: spectral.fgl_loss(p["v"], u, mask, "magnitude"), {"v": rng.normal(size=shape)}),
        "cfm": (lambda p: cfm_loss(p["v"], u), {"v": rng.normal(size=shape)}),
    }


def velocity_net_case(seed: int = 0) -> tuple[Builder, dict[str, np.ndarray]]:
    """End-to-end loss through the velocity net on a 1x1x2x8x8 input."""
    rng = np.random.default_rng(seed + 2000)
    params = init_params(1, seed)
    # a zero head would leave upstream gradients identically zero
    params["vnet.head.w"] = rng.normal(scale=0.1, size=params["vnet.head.w"].shape).astype(np.float32)
    shape = (1, 1, 2, 8, 8)
    x = rng.uniform(size=shape)
    target = rng.normal(size=shape)
    values = {"x": x, **params}

    def build(p):
        w = {k: v for k, v in p.items() if k != "x"}
        return cfm_loss(predict_velocity(p["x"], 0.3, w), target)

    return build, values


def run_all(seed: int = 0, max_entries: int | None = 40) -> dict[str, GradCheckReport]:
    reports = {}
    for name, (build, params) in {**primitive_cases(seed), **loss_cases(seed)}.items():
        reports[name] = ad.grad_check(build, params, seed=seed)
    build, params = velocity_net_case(seed)
    reports["velocity-net"] = ad.grad_check(build, params, max_entries=max_entries, seed=seed)
    return reports
