import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fmvp import autodiff as ad
from fmvp import spectral
from fmvp.autodiff import ShapeError


def dft_oracle(x):
    """Direct double sum with explicit loops, orthonormal, half spectrum."""
    H, W = x.shape
    wp = W // 2 + 1
    out = np.zeros((H, wp), complex)
    for k in range(H):
        for l in range(wp):
            acc = 0j
            for m in range(H):
                for n in range(W):
                    acc += x[m, n] * complex(math.cos(-2 * math.pi * (k * m / H + l * n / W)),
                                             math.sin(-2 * math.pi * (k * m / H + l * n / W)))
            out[k, l] = acc / math.sqrt(H * W)
    return out


def test_constant_plane():
    s = spectral.rdft2(np.ones((4, 4)))
    assert np.isclose(s[0, 0], 4.0)
    s[0, 0] = 0
    assert np.allclose(s, 0, atol=1e-12)


def test_impulse_is_flat():
    x = np.zeros((4, 4))
    x[0, 0] = 1
    assert np.allclose(spectral.rdft2(x), 0.25 + 0j)


@pytest.mark.parametrize("shape", [(8, 8), (5, 7), (1, 9), (6, 1), (12, 10)])
def test_matches_loop_oracle(shape, np_rng):
    x = np_rng.normal(size=shape)
    assert np.max(np.abs(spectral.rdft2(x) - dft_oracle(x))) < 1e-4


def test_fft_matches_numpy_on_bluestein_sizes(np_rng):
    for n in (3, 5, 7, 11, 13, 17, 31):
        x = np_rng.normal(size=n) + 1j * np_rng.normal(size=n)
        assert np.allclose(spectral.fft(x), np.fft.fft(x), atol=1e-9)


@given(st.integers(1, 32), st.integers(1, 32), st.integers(0, 10 ** 6))
def test_parseval(h, w, seed):
    x = np.random.default_rng(seed).normal(size=(h, w))
    spec = spectral.rdft2(x)
    e = float(np.sum(x * x))
    assert abs(spectral.spectral_energy(spec, w) - e) <= 1e-4 * max(e, 1e-12)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 10 ** 6))
def test_full_spectrum_round_trip(h, w, seed):
    x = np.random.default_rng(seed).normal(size=(h, w))
    half = spectral.rdft2(x) * np.sqrt(h * w)
    full = np.zeros((h, w), complex)
    full[:, : half.shape[1]] = half
    for l in range(half.shape[1], w):
        full[:, l] = np.conj(half[(-np.arange(h)) % h, w - l])
    assert np.max(np.abs(np.fft.ifft2(full).real - x)) < 1e-4


@given(st.integers(1, 10), st.integers(1, 10), st.integers(0, 10 ** 6))
def test_adjoint_identity(h, w, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(h, w))
    g = rng.normal(size=(h, w // 2 + 1)) + 1j * rng.normal(size=(h, w // 2 + 1))
    lhs = np.sum(np.real(np.conj(g) * spectral.rdft2(x)))
    rhs = np.sum(x * spectral.rdft2_adjoint(g, w))
    assert np.isclose(lhs, rhs, atol=1e-9)


def test_mask_golden_values():
    m = spectral.build_weight_mask(4, 3)
    assert m.weights[0, 0] == pytest.approx(1.1, abs=1e-12)
    d = math.sqrt(0.25 ** 2 + (1 / 3) ** 2)
    assert m.weights[1, 1] == pytest.approx(math.exp(-5 * d) + 0.1, abs=1e-12)
    assert m.weights[1, 1] == pytest.approx(0.224518, abs=1e-5)
    assert m.weights[0, 2] < m.weights[0, 0]


@given(st.integers(1, 24), st.integers(1, 13))
def test_mask_bounds_and_monotone(h, wp):
    m = spectral.build_weight_mask(h, wp)
    d = spectral.gate_distances(h, wp).ravel()
    w = m.weights.ravel()
    assert np.all(w >= 0.1) and np.all(w <= 1.1)
    order = np.argsort(d, kind="stable")
    assert np.all(np.diff(w[order]) <= 0)


def test_fgl_zero_residual(np_rng):
    v = np_rng.normal(size=(1, 1, 2, 4, 4))
    mask = spectral.mask_for(v.shape)
    assert spectral.fgl_loss(v, v, mask).item() == 0.0


@pytest.mark.parametrize("c", [0.5, -1.3, 2.0])
def test_fgl_constant_plane(c):
    v = np.full((1, 1, 1, 4, 4), c)
    mask = spectral.mask_for(v.shape)
    expected = (1.1 * 4 * c) ** 2 / 12
    for residual in ("complex", "magnitude"):
        assert spectral.fgl_loss(v, np.zeros_like(v), mask, residual).item() == pytest.approx(expected, rel=1e-9)


def test_fgl_forms_differ_on_phase_only_change(np_rng):
    u = np_rng.normal(size=(1, 1, 1, 6, 6))
    v = np.roll(u, 1, axis=-1)  # same magnitudes, shifted phase
    mask = spectral.mask_for(u.shape)
    assert spectral.fgl_loss(v, u, mask, "magnitude").item() == pytest.approx(0.0, abs=1e-12)
    assert spectral.fgl_loss(v, u, mask, "complex").item() > 1e-3


@given(st.integers(0, 10 ** 6))
def test_fgl_nonnegative_and_zero_iff_equal(seed):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(1, 1, 2, 5, 6))
    v = u + rng.normal(scale=1e-2, size=u.shape)
    mask = spectral.mask_for(u.shape)
    assert spectral.fgl_loss(v, u, mask).item() > 0
    assert spectral.fgl_loss(u, u, mask).item() == 0


def test_fgl_gradient(np_rng):
    u = np_rng.normal(size=(1, 1, 2, 4, 6))
    mask = spectral.mask_for(u.shape)
    for residual in ("complex", "magnitude"):
        report = ad.grad_check(lambda p: spectral.fgl_loss(p["v"], u, mask, residual), {"v": np_rng.normal(size=u.shape)})
        assert report.passed, report.errors


def test_fgl_shape_mismatch():
    mask = spectral.mask_for((4, 4))
    with pytest.raises(ShapeError):
        spectral.fgl_loss(np.zeros((1, 1, 1, 4, 4)), np.zeros((1, 1, 1, 4, 5)), mask)


def test_psd_constant_video():
    _, curve = spectral.psd_radial(np.full((1, 1, 2, 8, 8), 0.3), bins=8)
    assert curve[0] > -12
    assert np.all(curve[1:] == -12)


def test_psd_noise_raises_high_frequencies():
    clean = np.zeros((2, 1, 4, 16, 16))
    clean[..., 4:12, 4:12] = 0.8
    _, pc = spectral.psd_radial(clean, bins=8)
    for seed in range(3):
        noisy = clean + np.random.default_rng(seed).normal(scale=0.1, size=clean.shape)
        _, pn = spectral.psd_radial(noisy, bins=8)
        assert np.all(pn[4:] > pc[4:])


def test_psd_total_power_conserved_across_bin_counts(np_rng):
    v = np_rng.uniform(size=(2, 1, 3, 12, 10))
    totals = [spectral.psd_radial(v, bins=b, log=False)[1].sum() for b in (4, 9, 16)]
    assert np.allclose(totals, totals[0], rtol=1e-4)
    assert totals[0] == pytest.approx(np.sum(v ** 2) / 6, rel=1e-9)
