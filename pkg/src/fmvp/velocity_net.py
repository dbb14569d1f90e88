"""Time-conditioned velocity predictor.

A small 3D convolutional network: stem conv (C->16), two hidden convs
(16->16) each modulated per channel by a scale/shift pair computed from a
sinusoidal time embedding, and a zero-initialised head conv (16->C).  With
the zero head the untrained field is identically zero.
"""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Node
from .rng import SeededRng

PREFIX = "vnet."
WIDTH = 16
EMBED_DIM = 32
MLP_HIDDEN = 32
KERNEL = (3, 3, 3)
N_HIDDEN = 2

_FREQS = 10.0 ** (4.0 * np.arange(EMBED_DIM // 2) / (EMBED_DIM // 2 - 1))


def time_embedding(t) -> np.ndarray:
    """(B,) times -> (B, 32) sin/cos features at 16 frequencies spanning [1, 1e4]."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    phase = t[:, None] * _FREQS[None, :]
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=1).astype(np.float32)


def layer_shapes(channels: int) -> dict[str, tuple[int, ...]]:
    kt, kh, kw = KERNEL
    shapes = {
        "stem.w": (WIDTH, channels, kt, kh, kw),
        "stem.b": (WIDTH,),
    }
    for i in range(N_HIDDEN):
        shapes[f"hidden{i}.w"] = (WIDTH, WIDTH, kt, kh, kw)
        shapes[f"hidden{i}.b"] = (WIDTH,)
        shapes[f"film{i}.w1"] = (MLP_HIDDEN, EMBED_DIM)
        shapes[f"film{i}.b1"] = (MLP_HIDDEN,)
        shapes[f"film{i}.w2"] = (2 * WIDTH, MLP_HIDDEN)
        shapes[f"film{i}.b2"] = (2 * WIDTH,)
    shapes["head.w"] = (channels, WIDTH, kt, kh, kw)
    shapes["head.b"] = (channels,)
    return {PREFIX + k: v for k, v in shapes.items()}


def param_count(channels: int) -> int:
    return sum(int(np.prod(s)) for s in layer_shapes(channels).values())


def init_params(channels: int, seed: int) -> dict[str, np.ndarray]:
    """Kaiming-uniform fan-in kernels, zero biases, zero head."""
    if channels < 1:
        raise ContractError(f"channels must be >= 1, got {channels}")
    rng = SeededRng(seed, ("vnet-init",))
    params: dict[str, np.ndarray] = {}
    for i, (name, shape) in enumerate(layer_shapes(channels).items()):
        if name.endswith(("b", "b1", "b2")) or name.startswith(PREFIX + "head"):
            params[name] = np.zeros(shape, np.float32)
            continue
        fan_in = int(np.prod(shape[1:]))
        bound = math.sqrt(6.0 / fan_in)
        u = rng.split(i).uniform(shape)
        params[name] = ((2.0 * u - 1.0) * bound).astype(np.float32)
    return params


def _p(params, name) -> Node:
    return ad.as_node(params[PREFIX + name])


def predict_velocity(x_t, t, params: Mapping[str, np.ndarray | Node]) -> Node:
    """Velocity field v(x_t, t) with the same shape as ``x_t``.

    ``t`` is a scalar or a per-sample vector of times in [0, 1].  Arrays in
    ``params`` are treated as constants; pass leaves to get their gradients.
    """
    x = ad.as_node(x_t)
    if x.value.ndim != 5:
        raise ContractError(f"expected a (B, C, T, H, W) video, got shape {x.shape}")
    if not np.all(np.isfinite(x.value)):
        raise ContractError("non-finite values in velocity-net input")
    B = x.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
    if np.any((t < 0) | (t > 1)):
        raise ContractError(f"time must lie in [0, 1], got {t}")
    emb = ad.constant(time_embedding(t).astype(x.value.dtype))

    h = ad.silu(ad.conv3d(x, _p(params, "stem.w"), _p(params, "stem.b")))
    for i in range(N_HIDDEN):
        h = ad.conv3d(h, _p(params, f"hidden{i}.w"), _p(params, f"hidden{i}.b"))
        z = ad.silu(ad.linear(emb, _p(params, f"film{i}.w1"), _p(params, f"film{i}.b1")))
        z = ad.linear(z, _p(params, f"film{i}.w2"), _p(params, f"film{i}.b2"))
        z = ad.reshape(z, (B, 2 * WIDTH, 1, 1, 1))
        scale, shift = ad.slice_channel(z, 0, WIDTH), ad.slice_channel(z, WIDTH, 2 * WIDTH)
        ones = ad.constant(np.ones(h.shape, dtype=h.value.dtype))
        h = ad.add(ad.hadamard(h, ad.add(ones, ad.broadcast(scale, h.shape))), ad.broadcast(shift, h.shape))
        h = ad.silu(h)
    return ad.conv3d(h, _p(params, "head.w"), _p(params, "head.b"))
