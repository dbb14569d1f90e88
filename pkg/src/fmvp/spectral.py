"""Orthonormal 2D real DFT, the exponential frequency gate and spectral losses.

FFTs are computed here rather than delegated: radix-2 Cooley-Tukey for
power-of-two lengths, Bluestein's chirp-z otherwise.  All transforms act on
the last one or two axes and broadcast over leading ones, so a rank-5 video
(B, C, T, H, W) is transformed plane by plane.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .autodiff import Node, ShapeError, as_node

MAG_GUARD = 1e-8


# ------------------------------------------------------------------------ FFT


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@lru_cache(maxsize=None)
def _bitrev(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(m: int) -> np.ndarray:
    return np.exp(-2j * np.pi * np.arange(m // 2) / m)


def _fft_radix2(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    y = x[..., _bitrev(n)]
    lead = y.shape[:-1]
    m = 2
    while m <= n:
        blocks = y.reshape(lead + (n // m, m))
        even = blocks[..., : m // 2]
        odd = blocks[..., m // 2:] * _twiddles(m)
        y = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        m *= 2
    return y


@lru_cache(maxsize=None)
def _bluestein_plan(n: int):
    k = np.arange(n)
    # k^2 mod 2n keeps the chirp phase exact for large k
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    m = 1
    while m < 2 * n - 1:
        m *= 2
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(chirp)
    b[m - n + 1:] = np.conj(chirp[1:])[::-1]
    return chirp, m, _fft_radix2(b)


def _fft_bluestein(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    chirp, m, b_hat = _bluestein_plan(n)
    a = np.zeros(x.shape[:-1] + (m,), dtype=np.complex128)
    a[..., :n] = x * chirp
    conv = _ifft_radix2_unscaled(_fft_radix2(a) * b_hat) / m
    return conv[..., :n] * chirp


def _ifft_radix2_unscaled(x: np.ndarray) -> np.ndarray:
    return np.conj(_fft_radix2(np.conj(x)))


def fft(x: np.ndarray) -> np.ndarray:
    """Unnormalised forward DFT along the last axis (complex128 result)."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n == 1:
        return x.copy()
    if _is_pow2(n):
        return _fft_radix2(x)
    return _fft_bluestein(x)


def fft2(x: np.ndarray) -> np.ndarray:
    """Unnormalised 2D DFT over the last two axes."""
    y = fft(x)
    return np.swapaxes(fft(np.swapaxes(y, -1, -2)), -1, -2)


def half_width(w: int) -> int:
    return w // 2 + 1


def rdft2(x: np.ndarray) -> np.ndarray:
    """Orthonormal half-spectrum DFT of real planes: (..., H, W) -> (..., H, W//2+1)."""
    x = np.asarray(x)
    H, W = x.shape[-2:]
    wp = half_width(W)
    rows = fft(x)[..., :wp]
    spec = np.swapaxes(fft(np.swapaxes(rows, -1, -2)), -1, -2)
    return spec / np.sqrt(H * W)


def rdft2_adjoint(g: np.ndarray, w: int) -> np.ndarray:
    """Adjoint of :func:`rdft2` as a real-linear map, (..., H, W') -> (..., H, W) real.

    For real ``x`` and complex ``g``: ``Re<rdft2(x), g> == <x, rdft2_adjoint(g)>``.
    """
    H, wp = g.shape[-2:]
    full = np.zeros(g.shape[:-1] + (w,), dtype=np.complex128)
    full[..., :wp] = np.conj(g)
    return fft2(full).real / np.sqrt(H * w)


def naive_rdft2(x: np.ndarray) -> np.ndarray:
    """O(N^2) double-sum reference for a single (H, W) plane."""
    x = np.asarray(x, dtype=np.float64)
    H, W = x.shape
    wp = half_width(W)
    out = np.zeros((H, wp), dtype=np.complex128)
    m = np.arange(H)[:, None]
    n = np.arange(W)[None, :]
    for k in range(H):
        for l in range(wp):
            phase = np.exp(-2j * np.pi * (k * m / H + l * n / W))
            out[k, l] = np.sum(x * phase)
    return out / np.sqrt(H * W)


def symmetry_weights(w: int) -> np.ndarray:
    """Multiplicity of each half-spectrum column in the full spectrum."""
    wp = half_width(w)
    c = np.full(wp, 2.0)
    c[0] = 1.0
    if w % 2 == 0:
        c[-1] = 1.0
    return c


def spectral_energy(spec: np.ndarray, w: int) -> float:
    return float(np.sum(symmetry_weights(w) * np.abs(spec) ** 2))


# ----------------------------------------------------------------- weight gate


@dataclass(frozen=True)
class FrequencyWeightMask:
    tau: float
    floor: float
    weights: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape


def gate_distances(h: int, wp: int) -> np.ndarray:
    y = np.arange(h) / h
    x = np.arange(wp) / wp
    return np.sqrt(y[:, None] ** 2 + x[None, :] ** 2)


def build_weight_mask(h: int, wp: int, tau: float = 5.0, floor: float = 0.1) -> FrequencyWeightMask:
    """Gate ``exp(-tau * d) + floor`` over normalised distance to the DC bin."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if floor < 0:
        raise ValueError(f"floor must be non-negative, got {floor}")
    weights = np.exp(-tau * gate_distances(h, wp)) + floor
    return FrequencyWeightMask(float(tau), float(floor), weights)


def mask_for(shape, tau: float = 5.0, floor: float = 0.1) -> FrequencyWeightMask:
    H, W = shape[-2:]
    return build_weight_mask(H, half_width(W), tau, floor)


# ------------------------------------------------------------------ FGL loss


def fgl_loss(v_pred, v_target, mask: FrequencyWeightMask, residual: str = "complex") -> Node:
    """Frequency-gated loss, mean-reduced over all half-spectrum entries.

    ``residual="complex"``: mean of ``(w * |F(v) - F(u)|)^2``.
    ``residual="magnitude"``: mean of ``(w * (|F(v)| - |F(u)|))^2``.
    Differentiable with respect to ``v_pred`` only.
    """
    v_pred = as_node(v_pred)
    target = np.asarray(v_target.value if isinstance(v_target, Node) else v_target)
    if v_pred.shape != target.shape:
        raise ShapeError("fgl", v_pred.shape, target.shape)
    H, W = v_pred.shape[-2:]
    if mask.shape != (H, half_width(W)):
        raise ShapeError("fgl", mask.shape, (H, half_width(W)), detail="weight mask")
    dtype = v_pred.value.dtype
    w2 = mask.weights**2
    fp = rdft2(v_pred.value)
    ft = rdft2(target)
    count = fp.size
    if residual == "complex":
        r = fp - ft
        mag = np.abs(r)
        loss = np.sum(w2 * mag**2) / count
        # d|r|^2 = 2|r| * r/|r|, with the |r| -> 0 guard
        coef = np.where(mag < MAG_GUARD, 0.0, 2.0 * w2) * r / count
    elif residual == "magnitude":
        mp, mt = np.abs(fp), np.abs(ft)
        d = mp - mt
        loss = np.sum(w2 * d**2) / count
        safe = np.where(mp < MAG_GUARD, 1.0, mp)
        coef = np.where(mp < MAG_GUARD, 0.0, 2.0 * w2 * d / safe) * fp / count
    else:
        raise ValueError(f"unknown fgl residual form {residual!r}")

    def vjp(g):
        return ((rdft2_adjoint(coef, W) * float(g)).astype(dtype),)

    return Node(np.asarray(loss, dtype=dtype), (v_pred,), vjp, "fgl")


# ----------------------------------------------------------------------- PSD


def radial_bins(h: int, w: int, bins: int) -> np.ndarray:
    """Bin index of each half-spectrum entry by normalised radius in [0, 1]."""
    k = np.arange(h)
    fy = np.minimum(k, h - k) / max(h / 2, 1)
    fx = np.arange(half_width(w)) / max(w / 2, 1)
    r = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2) / np.sqrt(2.0)
    return np.minimum((r * bins).astype(np.int64), bins - 1)


def psd_radial(video: np.ndarray, bins: int = 16, log: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Radially binned power spectrum averaged over all (B, C, T) frames.

    Returns ``(radius, power)`` where ``radius`` holds bin centres and
    ``power[i]`` is the mean per-frame power whose normalised radius falls in
    bin ``i``.  With ``log=True`` the power is ``log10(max(p, 1e-12))``.
    """
    if bins < 2:
        raise ValueError(f"bins must be at least 2, got {bins}")
    video = np.asarray(video, dtype=np.float64)
    H, W = video.shape[-2:]
    planes = video.reshape(-1, H, W)
    power = (np.abs(rdft2(planes)) ** 2 * symmetry_weights(W)).mean(axis=0)
    idx = radial_bins(H, W, bins)
    curve = np.bincount(idx.ravel(), weights=power.ravel(), minlength=bins)
    radius = (np.arange(bins) + 0.5) / bins
    if log:
        curve = np.log10(np.maximum(curve, 1e-12))
    return radius, curve


def write_psd_csv(path: str | Path, radius: np.ndarray, log_power: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["radius", "log10_power"])
        for r, p in zip(radius, log_power):
            writer.writerow([repr(float(r)), repr(float(p))])
