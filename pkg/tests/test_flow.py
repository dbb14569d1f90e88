import numpy as np
import pytest
from hypothesis import given, strategies as st

from fmvp import autodiff as ad
from fmvp import flow
from fmvp.autodiff import ContractError
from fmvp.optim import AdamW
from fmvp.rng import SeededRng
from fmvp.taint import taint
from fmvp.velocity_net import init_params, predict_velocity


def test_mask_extremes():
    assert np.all(flow.sample_mask((4, 5), 1.0, SeededRng(0)) == 1)
    assert np.all(flow.sample_mask((4, 5), 0.0, SeededRng(0)) == 0)


def test_mask_keep_fraction():
    m = flow.sample_mask((3, 8, 32, 32), 0.4, SeededRng(1))
    assert abs(m.mean() - 0.4) < 0.006


def test_mask_rejects_bad_ratio():
    with pytest.raises(ContractError):
        flow.sample_mask((2,), 1.5, SeededRng(0))


def test_make_source_cases(np_rng):
    x = np_rng.uniform(size=(1, 2, 3, 4)).astype(np.float32)
    assert np.array_equal(flow.make_source(x, np.ones_like(x), SeededRng(0)), x)
    assert np.array_equal(flow.make_source(x, np.zeros_like(x), SeededRng(0)), SeededRng(0).normal(x.shape))


def test_make_source_positional_replay(np_rng):
    x = np_rng.uniform(size=(2, 3, 8, 8)).astype(np.float32)
    m = flow.sample_mask(x.shape, 0.5, SeededRng(4))
    x0 = flow.make_source(x, m, SeededRng(9))
    eps = SeededRng(9).normal(x.shape)
    kept = m == 1
    assert np.array_equal(x0[kept], x[kept])
    assert np.array_equal(x0[~kept], eps[~kept])


def test_interpolate_endpoints(np_rng):
    x0, x1 = np_rng.normal(size=(2, 3, 4)).astype(np.float32)
    assert np.array_equal(flow.interpolate(x0, x1, 0.0), x0)
    assert np.array_equal(flow.interpolate(x0, x1, 1.0), x1)
    mid = flow.interpolate(x0, x1, 0.5)
    assert np.allclose(mid, (x0 + x1) / 2)
    assert np.allclose(mid + 0.5 * flow.target_velocity(x0, x1), x1)


def test_interpolate_rejects_t_outside_unit_interval():
    with pytest.raises(ContractError):
        flow.interpolate(np.zeros(3), np.ones(3), 1.1)


@given(st.integers(0, 10 ** 6))
def test_path_identities(seed):
    rng = np.random.default_rng(seed)
    x0, x1 = rng.normal(size=(2, 2, 3, 4)).astype(np.float32)
    t = np.float32(rng.uniform())
    xt = flow.interpolate(x0, x1, t)
    u = flow.target_velocity(x0, x1)
    tol = 4 * np.finfo(np.float32).eps * (np.abs(x0) + np.abs(x1) + 1)
    assert np.all(np.abs(xt + (1 - t) * u - x1) <= tol)
    assert np.all(np.abs(xt - t * u - x0) <= tol)


def test_cfm_loss_cases(np_rng):
    u = np_rng.normal(size=(2, 1, 2, 3, 3))
    assert flow.cfm_loss(u, u).item() == 0
    assert flow.cfm_loss(u + 0.3, u).item() == pytest.approx(0.09, rel=1e-9)
    v = np_rng.normal(size=u.shape)
    ref = np.mean((v.astype(np.float64) - u) ** 2)
    assert flow.cfm_loss(v, u).item() == pytest.approx(ref, rel=1e-5)


def test_total_loss_degenerate_weights(np_rng):
    u = np_rng.normal(size=(1, 1, 2, 4, 4))
    v = np_rng.normal(size=u.shape)
    cfg = flow.LossConfig(lambda_fgl=0.0)
    assert flow.total_loss(v, u, cfg).item() == flow.cfm_loss(v, u).item()
    assert flow.total_loss(u, u, flow.LossConfig()).item() == 0


def test_default_loss_weights():
    cfg = flow.LossConfig()
    assert (cfg.lambda_cfm, cfg.lambda_fgl, cfg.fgl_residual) == (1.0, 0.2, "complex")
    tc = flow.TrainConfig()
    assert (tc.lr, tc.batch_size, tc.rho_min, tc.rho_max) == (1e-4, 1, 0.2, 0.6)


def test_loss_config_validation():
    with pytest.raises(ContractError):
        flow.LossConfig(fgl_residual="phase")
    with pytest.raises(ContractError):
        flow.LossConfig(lambda_fgl=-1)


def test_draw_flow_sample_is_per_sample(np_rng):
    x = np_rng.uniform(size=(3, 1, 2, 4, 4)).astype(np.float32)
    s = flow.draw_flow_sample(x, x, SeededRng(5))
    assert np.all((s.keep_ratio >= 0.2) & (s.keep_ratio < 0.6))
    assert len(set(s.t.tolist())) == 3
    again = flow.draw_flow_sample(x, x, SeededRng(5))
    assert np.array_equal(again.x0, s.x0)


def _tiny_batch():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(1, 1, 2, 8, 8)).astype(np.float32)
    return x


def test_train_step_variant_contracts():
    x = _tiny_batch()
    params = init_params(1, 0)
    cfg = flow.LossConfig()
    with pytest.raises(ContractError):
        flow.train_step(x, taint(x), "gaussian", params, AdamW(), SeededRng(0), cfg)
    with pytest.raises(ContractError):
        flow.train_step(x, None, "pgd", params, AdamW(), SeededRng(0), cfg)
    with pytest.raises(ContractError):
        flow.train_step(taint(x), None, "gaussian", params, AdamW(), SeededRng(0), cfg)
    new, rec = flow.train_step(x, None, "gaussian", params, AdamW(), SeededRng(0), cfg)
    assert rec.ok and np.isfinite(rec.loss_total)
    assert not np.array_equal(new["vnet.head.w"], params["vnet.head.w"])


def test_overfit_tiny_batch_decreases():
    x = _tiny_batch()
    params = init_params(1, 0)
    opt = AdamW(lr=1e-3)
    losses = []
    for step in range(200):
        params, rec = flow.train_step(x, None, "gaussian", params, opt, SeededRng(0), flow.LossConfig(), step=step)
        losses.append(rec.loss_total)
    window = np.convolve(losses, np.ones(50) / 50, mode="valid")
    assert np.all(window[50:] < window[:-50])
    assert losses[-1] < 0.5 * losses[0]


def test_fgl_changes_gradient_on_high_frequency_residual():
    rng = np.random.default_rng(3)
    params = init_params(1, 0)
    params["vnet.head.w"] = rng.normal(scale=0.1, size=params["vnet.head.w"].shape).astype(np.float32)
    x = rng.uniform(size=(1, 1, 2, 8, 8)).astype(np.float32)
    x += 0.3 * (np.indices((8, 8)).sum(0) % 2)  # checkerboard content
    sample = flow.draw_flow_sample(x, x, SeededRng(0))
    grads = []
    for lam in (0.0, 0.2):
        leaves = {k: ad.leaf(v, k) for k, v in params.items()}
        v = predict_velocity(sample.x_t, sample.t, leaves)
        grads.append(ad.backward(flow.total_loss(v, sample.u_star, flow.LossConfig(lambda_fgl=lam))))
    assert not np.allclose(grads[0]["vnet.head.w"], grads[1]["vnet.head.w"])


def test_non_finite_loss_skips_update():
    x = _tiny_batch()
    params = init_params(1, 0)
    params["vnet.head.b"] = np.array([np.inf], np.float32)
    with np.errstate(invalid="ignore"):
        new, rec = flow.train_step(x, None, "gaussian", params, AdamW(), SeededRng(0), flow.LossConfig())
    assert not rec.ok and "non-finite" in rec.message
    assert all(np.array_equal(new[k], params[k]) for k in params)


def test_train_purifier_deterministic_and_logged(tmp_path):
    x = np.random.default_rng(0).uniform(size=(3, 1, 2, 8, 8)).astype(np.float32)
    cfg = flow.TrainConfig(steps=5)
    a, log_a = flow.train_purifier(x, "gaussian", init_params(1, 0), 1, cfg)
    b, log_b = flow.train_purifier(x, "gaussian", init_params(1, 0), 1, cfg)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    flow.write_training_log(tmp_path / "log.csv", log_a)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "step,loss_total,loss_cfm,loss_fgl" and len(lines) == 6
