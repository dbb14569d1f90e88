"""Video quality metrics: PSNR and frame-averaged SSIM."""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeError

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) over all elements, capped at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("psnr", a.shape, b.shape)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation over the last two axes."""
    k = len(g)
    win = np.lib.stride_tricks.sliding_window_view(img, k, axis=-1)
    rows = win @ g
    win = np.lib.stride_tricks.sliding_window_view(rows, k, axis=-2)
    return win @ g


def ssim_planes(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mean SSIM of each (H, W) plane over valid windows; leading axes kept."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("ssim", a.shape, b.shape)
    g = gaussian_window()
    if a.shape[-1] < len(g) or a.shape[-2] < len(g):
        raise ShapeError("ssim", a.shape, (len(g), len(g)), detail="planes smaller than the window")
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return (num / den).mean(axis=(-2, -1))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """SSIM per frame, averaged over every leading axis (batch, channel, frame)."""
    return float(np.mean(ssim_planes(a, b)))
