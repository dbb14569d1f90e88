import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fmvp import autodiff as ad
from fmvp.autodiff import ContractError
from fmvp.purify import (
    FlowPurifier, PurificationError, PurifyConfig, detection_score, euler_integrate, euler_purify,
    init_inference_state, purify_dataset, roc_auc, roc_curve, trapezoid_auc, write_roc_csv, write_scores_csv,
)
from fmvp.rng import SeededRng
from fmvp.velocity_net import init_params


def const_field(a):
    return lambda x, t: ad.constant(np.full(x.shape, a, x.value.dtype))


def identity_field(x, t):
    return x


def test_init_state_degenerate_configs(np_rng):
    x = np_rng.uniform(size=(2, 1, 2, 4, 4)).astype(np.float32)
    assert np.array_equal(init_inference_state(x, PurifyConfig(gamma=1.0, xi=0.0), SeededRng(0)), x)
    noise = init_inference_state(x, PurifyConfig(gamma=0.0), SeededRng(0))
    eps = np.stack([SeededRng(0).split(b).split("eps").normal(x.shape[1:]) for b in range(2)])
    assert np.array_equal(noise, eps)


def test_init_state_stream_replay(np_rng):
    x = np_rng.uniform(size=(1, 1, 2, 8, 8)).astype(np.float32)
    cfg = PurifyConfig()
    x0 = init_inference_state(x, cfg, SeededRng(4))
    r = SeededRng(4).split(0)
    m = r.split("mask").uniform(x.shape[1:]) < np.float32(0.5)
    eps = r.split("eps").normal(x.shape[1:])
    assert np.array_equal(x0[0][m], (x[0] + np.float32(1e-5) * eps)[m])
    assert np.array_equal(x0[0][~m], eps[~m])
    assert np.all(np.abs(x0[0][m] - x[0][m]) <= 1e-5 * np.abs(eps[m]) + 1e-7)


def test_config_validation():
    for bad in ({"gamma": 1.2}, {"xi": -1.0}, {"steps": 0}):
        with pytest.raises(ContractError):
            PurifyConfig(**bad)
    cfg = PurifyConfig()
    assert (cfg.gamma, cfg.xi, cfg.steps) == (0.5, 1e-5, 10)


def test_zero_network_returns_clamped_start(np_rng):
    x0 = np_rng.normal(size=(1, 1, 2, 4, 4)).astype(np.float32)
    assert np.array_equal(euler_purify(x0, init_params(1, 0), 7), np.clip(x0, 0, 1))


def test_constant_field_is_exact(np_rng):
    x0 = np_rng.normal(size=(3, 4))
    out = euler_integrate(x0, const_field(0.37), 9).value
    assert np.allclose(out, x0 + 0.37, atol=1e-12)


def test_linear_field_closed_form():
    expected = 1.0
    for _ in range(10):
        expected += expected / 10
    out = euler_integrate(np.ones(1), identity_field, 10).value.item()
    assert expected == pytest.approx((1 + 1 / 10) ** 10, abs=1e-12)
    assert out == pytest.approx(2.593742, abs=1e-5)
    assert out == pytest.approx(expected, abs=1e-12)


def test_euler_converges_monotonically_to_e():
    errs = [abs(euler_integrate(np.ones(1), identity_field, n).value.item() - math.e) for n in (1, 2, 4, 8, 16, 32)]
    assert all(a > b for a, b in zip(errs, errs[1:]))


def test_non_finite_state_reports_step():
    def blowup(x, t):
        return ad.constant(np.full(x.shape, np.inf if t >= 0.5 else 0.0))

    with pytest.raises(PurificationError) as info:
        euler_integrate(np.zeros(2), blowup, 4)
    assert info.value.step == 2


@given(st.integers(0, 10 ** 4), st.floats(0.0, 1.0))
def test_purified_output_in_unit_range(seed, gamma):
    rng = np.random.default_rng(seed)
    params = init_params(1, seed % 7)
    params["vnet.head.w"] = rng.normal(scale=0.5, size=params["vnet.head.w"].shape).astype(np.float32)
    x = rng.uniform(size=(1, 1, 2, 6, 6)).astype(np.float32)
    out = FlowPurifier(params, PurifyConfig(gamma=gamma, steps=2)).purify(x, SeededRng(seed))
    assert np.all(out >= 0) and np.all(out <= 1)


def test_purify_node_matches_purify(np_rng):
    params = init_params(1, 0)
    params["vnet.head.w"] = np_rng.normal(scale=0.1, size=params["vnet.head.w"].shape).astype(np.float32)
    x = np_rng.uniform(size=(1, 1, 2, 6, 6)).astype(np.float32)
    p = FlowPurifier(params, PurifyConfig(steps=3))
    a = p.purify(x, SeededRng(1))
    b = p.purify_node(ad.constant(x), SeededRng(1)).value
    assert np.allclose(a, b, atol=1e-6)


def test_purify_dataset_streams(np_rng):
    params = init_params(1, 0)
    x = np_rng.uniform(size=(3, 1, 2, 4, 4)).astype(np.float32)
    p = FlowPurifier(params, PurifyConfig(gamma=0.5))
    a = purify_dataset(p, x, 0)
    assert np.array_equal(a, purify_dataset(p, x, 0, workers=2))
    assert not np.array_equal(a, purify_dataset(p, x, 1))


def test_detection_score_stubs(np_rng):
    x = np_rng.uniform(size=(2, 1, 2, 4, 4)).astype(np.float32)
    assert np.all(detection_score(x, init_params(1, 0)) == 0)
    n = x[0].size
    s = detection_score(x, field=const_field(-0.5))
    assert np.allclose(s, 0.5 * math.sqrt(n))


def test_auc_cases():
    assert roc_auc([1, 2], [3, 4]) == 1.0
    assert roc_auc([1, 2, 2], [2, 1, 2]) == 0.5
    # 6 wins, 2 ties, 1 loss over the 9 pairs
    assert roc_auc([1, 2, 3], [2, 3, 4]) == pytest.approx(pair_oracle([1, 2, 3], [2, 3, 4]))
    assert roc_auc([1, 2, 3], [2, 3, 4]) == pytest.approx(0.777778, abs=1e-6)
    with pytest.raises(ContractError):
        roc_auc([], [1.0])


def pair_oracle(clean, adv):
    total = 0.0
    for a in adv:
        for c in clean:
            total += 1.0 if a > c else 0.5 if a == c else 0.0
    return total / (len(clean) * len(adv))


scores = st.lists(st.integers(0, 6).map(float), min_size=1, max_size=12)


@given(scores, scores)
def test_auc_matches_pair_enumeration_and_trapezoid(clean, adv):
    auc = roc_auc(clean, adv)
    assert auc == pytest.approx(pair_oracle(clean, adv), abs=1e-12)
    assert auc == pytest.approx(trapezoid_auc(*roc_curve(clean, adv)), abs=1e-9)


@given(scores, scores)
def test_auc_invariant_under_increasing_transform(clean, adv):
    f = lambda v: np.exp(np.asarray(v) / 3) * 5 - 1  # noqa: E731
    assert roc_auc(clean, adv) == pytest.approx(roc_auc(f(clean), f(adv)), abs=1e-12)


def test_roc_curve_endpoints():
    fpr, tpr = roc_curve([0.1, 0.4], [0.35, 0.8])
    assert (fpr[0], tpr[0]) == (0.0, 0.0) and (fpr[-1], tpr[-1]) == (1.0, 1.0)
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)


def test_csv_outputs(tmp_path):
    write_scores_csv(tmp_path / "s.csv", np.array([0.5, 1.25]), np.array([0, 1]))
    assert (tmp_path / "s.csv").read_text() == "sample_id,label,score\n0,0,0.5\n1,1,1.25\n"
    write_roc_csv(tmp_path / "r.csv", np.array([0.0, 1.0]), np.array([0.0, 1.0]))
    assert (tmp_path / "r.csv").read_text() == "fpr,tpr\n0.0,0.0\n1.0,1.0\n"
