import warnings

import numpy as np
import pytest

from gridfreq import controller as ctl
from gridfreq.controller import NetParams, RawParams


def test_identity_is_slope_one():
    params = ctl.identity_params(n=3)
    x = np.array([-2.0, 0.5, 1.7])
    assert np.allclose(ctl.eval_u(params, x), x, atol=1e-15)
    assert np.allclose(ctl.eval_slope(params, x), 1.0, atol=1e-15)
    assert np.allclose(ctl.lipschitz_constant(params), 1.0, atol=1e-15)


def test_two_segment_piecewise_values():
    # k_plus = (1, 1), breakpoints (0, 1): u(2) = 2 + (2-1) = 3, slope there 2
    params = NetParams(
        k_plus=np.array([[1.0, 1.0]]), b_plus=np.array([[0.0, 1.0]]),
        k_minus=np.array([[-1.0, 0.0]]), b_minus=np.array([[0.0, -1.0]]),
    )
    assert ctl.eval_u(params, np.array([2.0]))[0] == pytest.approx(3.0)
    assert ctl.eval_u(params, np.array([0.5]))[0] == pytest.approx(0.5)
    assert ctl.eval_slope(params, np.array([2.0]))[0] == pytest.approx(2.0)
    assert ctl.eval_slope(params, np.array([0.5]))[0] == pytest.approx(1.0)


def test_lipschitz_is_max_partial_sum():
    params = NetParams(
        k_plus=np.array([[1.0, 3.0]]), b_plus=np.array([[0.0, 0.5]]),
        k_minus=np.array([[-2.0, 1.0]]), b_minus=np.array([[0.0, -0.3]]),
    )
    assert ctl.lipschitz_constant(params)[0] == pytest.approx(4.0)


def test_transform_guarantees_monotone_for_random_raw():
    for seed in range(40):
        rng = np.random.default_rng(seed)
        n, d = int(rng.integers(1, 4)), int(rng.integers(1, 6))
        raw = RawParams(
            mu_plus=rng.normal(size=(n, d)),
            mu_minus=rng.normal(size=(n, d)),
            chi_plus=rng.normal(size=(n, d - 1)),
            chi_minus=rng.normal(size=(n, d - 1)),
        )
        params = ctl.transform_params(raw)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert ctl.validate_params(params)
        x = np.sort(rng.uniform(-4.0, 4.0, size=(64, 1)), axis=0)
        u = ctl.eval_u(params, np.broadcast_to(x, (64, n)))
        assert np.all(np.diff(u, axis=0) >= -1e-12)


def test_transform_passes_through_origin():
    for seed in range(20):
        rng = np.random.default_rng(seed + 5)
        raw = ctl.init_raw_params(3, 4, rng)
        params = ctl.transform_params(raw)
        assert np.allclose(ctl.eval_u(params, np.zeros(3)), 0.0, atol=1e-15)


def test_validate_rejects_negative_partial_sum():
    params = NetParams(
        k_plus=np.array([[3.0, -5.0]]), b_plus=np.array([[0.0, 0.3]]),
        k_minus=np.array([[-1.0, 0.0]]), b_minus=np.array([[0.0, -0.5]]),
    )
    assert not ctl.validate_params(params, warn=False)


def test_validate_rejects_disordered_breakpoints():
    params = NetParams(
        k_plus=np.array([[1.0, 1.0]]), b_plus=np.array([[0.0, -0.2]]),
        k_minus=np.array([[-1.0, 0.0]]), b_minus=np.array([[0.0, -0.5]]),
    )
    assert not ctl.validate_params(params, warn=False)


def test_validate_warns_on_vanishing_slope():
    raw = RawParams(mu_plus=np.zeros((1, 1)), mu_minus=np.zeros((1, 1)),
                    chi_plus=np.zeros((1, 0)), chi_minus=np.zeros((1, 0)))
    params = ctl.transform_params(raw)
    with pytest.warns(UserWarning, match="slope partial sum"):
        assert ctl.validate_params(params)


def test_saturation_clamps_and_zeroes_slope():
    params = ctl.identity_params(n=1, u_lo=-0.5, u_hi=0.5)
    x = np.array([[-2.0], [-0.2], [0.3], [2.0]])
    u = ctl.eval_u(params, x)
    assert np.allclose(u.ravel(), [-0.5, -0.2, 0.3, 0.5])
    slopes = ctl.eval_slope(params, x).ravel()
    assert slopes[0] == 0.0 and slopes[3] == 0.0
    assert slopes[1] == 1.0 and slopes[2] == 1.0


def test_deadband_shifts_input():
    params = ctl.identity_params(n=1, dz=0.3)
    x = np.array([[-1.0], [-0.2], [0.0], [0.2], [1.0]])
    u = ctl.eval_u(params, x).ravel()
    assert np.allclose(u, [-0.7, 0.0, 0.0, 0.0, 0.7], atol=1e-15)
    slopes = ctl.eval_slope(params, x).ravel()
    assert np.allclose(slopes, [1.0, 0.0, 0.0, 0.0, 1.0])


def test_slope_matches_finite_difference_off_breakpoints():
    eps = 1e-7
    for seed in range(15):
        rng = np.random.default_rng(seed + 31)
        raw = ctl.init_raw_params(2, 3, rng)
        params = ctl.transform_params(raw)
        x = rng.uniform(-2.0, 2.0, size=(20, 2))
        fd = (ctl.eval_u(params, x + eps) - ctl.eval_u(params, x - eps)) / (2 * eps)
        slope = ctl.eval_slope(params, x)
        near_break = np.zeros_like(x, dtype=bool)
        for b in np.concatenate([params.b_plus, params.b_minus], axis=-1).T:
            near_break |= np.abs(x - b) < 10 * eps
        keep = ~near_break
        assert np.allclose(slope[keep], fd[keep], rtol=1e-6, atol=1e-6)


def test_scaled_identity_gains():
    params = ctl.scaled_identity_params([2.0, 0.0, 0.5])
    x = np.array([1.5, 1.5, 1.5])
    assert np.allclose(ctl.eval_u(params, x), [3.0, 0.0, 0.75], atol=1e-15)
    with pytest.raises(ValueError, match="nonnegative"):
        ctl.scaled_identity_params([1.0, -0.1])


def test_construct_from_samples_converges_on_tanh():
    coarse = ctl.construct_from_samples(np.tanh, 5, (-3.0, 3.0))
    fine = ctl.construct_from_samples(np.tanh, 40, (-3.0, 3.0))
    grid = np.linspace(-3.0, 3.0, 2001)[:, None]
    err_coarse = np.max(np.abs(ctl.eval_u(coarse, grid).ravel() - np.tanh(grid).ravel()))
    err_fine = np.max(np.abs(ctl.eval_u(fine, grid).ravel() - np.tanh(grid).ravel()))
    assert err_fine < err_coarse / 10


def test_construct_from_samples_interpolates_nodes():
    d = 7
    params = ctl.construct_from_samples(np.tanh, d, (-2.0, 4.0))
    for node in np.linspace(0.0, 4.0, d + 1):
        assert ctl.eval_u(params, np.array([node]))[0] == pytest.approx(
            np.tanh(node), abs=1e-12)
    for node in np.linspace(-2.0, 0.0, d + 1):
        assert ctl.eval_u(params, np.array([node]))[0] == pytest.approx(
            np.tanh(node), abs=1e-12)


@pytest.mark.parametrize("target, domain, message", [
    (np.tanh, (1.0, 3.0), "straddle the origin"),
    (lambda x: x + 1.0, (-1.0, 1.0), "pass through the origin"),
    (lambda x: -x, (-1.0, 1.0), "target not monotone"),
])
def test_construct_from_samples_rejects(target, domain, message):
    with pytest.raises(ValueError, match=message):
        ctl.construct_from_samples(target, 5, domain)


def test_select_bus_views_single_policy():
    rng = np.random.default_rng(9)
    params = ctl.transform_params(ctl.init_raw_params(4, 3, rng))
    x = rng.uniform(-1, 1, 4)
    full = ctl.eval_u(params, x)
    for i in range(4):
        one = ctl.select_bus(params, i)
        assert ctl.eval_u(one, np.array([x[i]]))[0] == pytest.approx(full[i])


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(17)
    raw = ctl.init_raw_params(3, 4, rng)
    path = tmp_path / "ctrl.json"
    ctl.save_checkpoint(path, raw, u_lo=[-1.0, -np.inf, -2.0],
                        u_hi=[1.0, np.inf, 2.0], dz=[0.0, 0.1, 0.0],
                        seed=17, meta={"epochs": 3})
    raw2, params2, doc = ctl.load_checkpoint(path)
    assert np.array_equal(raw2.mu_plus, raw.mu_plus)
    assert np.array_equal(raw2.chi_minus, raw.chi_minus)
    assert doc["seed"] == 17
    assert doc["meta"]["epochs"] == 3
    assert np.isneginf(params2.u_lo[1]) and np.isposinf(params2.u_hi[1])
    x = rng.uniform(-1, 1, 3)
    direct = ctl.transform_params(raw, u_lo=[-1.0, -np.inf, -2.0],
                                  u_hi=[1.0, np.inf, 2.0], dz=[0.0, 0.1, 0.0])
    assert np.array_equal(ctl.eval_u(params2, x), ctl.eval_u(direct, x))


def test_checkpoint_rejects_foreign_json(tmp_path):
    path = tmp_path / "other.json"
    path.write_text('{"format": "something-else"}')
    with pytest.raises(ValueError, match="not a controller checkpoint"):
        ctl.load_checkpoint(path)
