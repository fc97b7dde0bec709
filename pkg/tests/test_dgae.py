import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvpo.dgae import GaeConfig, dist_gae, dist_td_error, scalar_advantages
from dvpo.errors import ConfigError, ShapeError
from dvpo.ndcore import make_rng


def textbook_gae(values, rewards, dones, gamma, lam):
    """Scalar GAE, written independently: explicit next-value lookup and reset."""
    T = len(rewards)
    adv = [0.0] * T
    last = 0.0
    for t in reversed(range(T)):
        if dones[t]:
            next_v, last = 0.0, 0.0
        else:
            next_v = values[t + 1] if t + 1 < T else 0.0
        delta = rewards[t] + gamma * next_v - values[t]
        last = delta + gamma * lam * last
        adv[t] = last
    return np.array(adv)


def random_trajectory(rng, T=20, m=1):
    values = rng.standard_normal((T, m))
    rewards = rng.standard_normal(T)
    dones = rng.random(T) < 0.15
    dones[-1] = True
    return values, rewards, dones


def test_config_ranges():
    with pytest.raises(ConfigError):
        GaeConfig(discount_gamma=0.0)
    with pytest.raises(ConfigError):
        GaeConfig(lam=1.5)


def test_td_error_examples():
    cfg = GaeConfig(1.0, 0.95)
    v = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(dist_td_error(0.0, v, v, False, cfg), np.zeros(3))
    np.testing.assert_array_equal(dist_td_error(1.0, [9.0, 9.0], [0.5, 0.5], True, cfg), [0.5, 0.5])
    with pytest.raises(ShapeError):
        dist_td_error(0.0, np.zeros(2), np.zeros(3), False, cfg)


def test_td_error_matches_loop():
    rng = make_rng(0)
    cfg = GaeConfig(0.9, 0.5)
    vn, vt = rng.standard_normal(8), rng.standard_normal(8)
    expected = [0.7 + 0.9 * vn[j] - vt[j] for j in range(8)]
    np.testing.assert_allclose(dist_td_error(0.7, vn, vt, False, cfg), expected, atol=1e-15)


def test_lambda_zero_gives_one_step_errors():
    rng = make_rng(1)
    cfg = GaeConfig(0.97, 0.0)
    values, rewards, dones = random_trajectory(rng, 12, 5)
    out = dist_gae(values, rewards, dones, cfg)
    for t in range(12):
        nxt = values[t + 1] if t + 1 < 12 else np.zeros(5)
        np.testing.assert_allclose(out.adv_quantiles[t], dist_td_error(rewards[t], nxt, values[t], dones[t], cfg), atol=1e-14)


def test_zero_inputs_zero_outputs():
    out = dist_gae(np.zeros((6, 4)), np.zeros(6), np.array([0, 0, 1, 0, 0, 1], bool), GaeConfig())
    assert not out.adv_quantiles.any()
    assert not out.target_quantiles.any()


def test_empty_trajectory_rejected():
    with pytest.raises(ValueError):
        dist_gae(np.zeros((0, 3)), np.zeros(0), np.zeros(0, bool), GaeConfig())


def test_m1_matches_textbook_gae():
    rng = make_rng(2)
    for _ in range(20):
        cfg = GaeConfig(float(rng.uniform(0.5, 1.0)), float(rng.uniform(0, 1)))
        values, rewards, dones = random_trajectory(rng)
        out = dist_gae(values, rewards, dones, cfg)
        ref = textbook_gae(values[:, 0], rewards, dones, cfg.discount_gamma, cfg.lam)
        np.testing.assert_allclose(out.adv_quantiles[:, 0], ref, atol=1e-12, rtol=0)


def test_truncated_end_bootstraps_from_next_value():
    cfg = GaeConfig(0.5, 1.0)
    values = np.array([[1.0], [2.0]])
    nxt = np.array([[2.0], [4.0]])
    out = dist_gae(values, [0.0, 0.0], [False, False], cfg, next_values=nxt, truncated=[False, True])
    assert out.adv_quantiles[1, 0] == pytest.approx(0.5 * 4.0 - 2.0)
    assert out.adv_quantiles[0, 0] == pytest.approx((0.5 * 2.0 - 1.0) + 0.5 * out.adv_quantiles[1, 0])


def test_target_minus_value_is_advantage():
    rng = make_rng(3)
    values, rewards, dones = random_trajectory(rng, 30, 7)
    out = dist_gae(values, rewards, dones, GaeConfig())
    np.testing.assert_array_equal(out.target_quantiles, values + out.adv_quantiles)
    np.testing.assert_allclose(out.scalar_adv, out.adv_quantiles.mean(axis=1), atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3))
def test_linear_in_rewards(seed, c):
    rng = make_rng(seed)
    _, rewards, dones = random_trajectory(rng, 15, 3)
    zeros = np.zeros((15, 3))
    base = dist_gae(zeros, rewards, dones, GaeConfig(0.9, 0.8))
    scaled = dist_gae(zeros, c * rewards, dones, GaeConfig(0.9, 0.8))
    np.testing.assert_allclose(scaled.adv_quantiles, c * base.adv_quantiles, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_episode_boundary_isolation(seed):
    rng = make_rng(seed)
    values, rewards, dones = random_trajectory(rng, 20, 4)
    cut = int(np.flatnonzero(dones)[0])
    if cut == 19:
        return
    a = dist_gae(values, rewards, dones, GaeConfig(0.95, 0.9))
    rewards2, values2 = rewards.copy(), values.copy()
    rewards2[cut + 1:] += rng.standard_normal(19 - cut) * 10
    values2[cut + 1:] += rng.standard_normal((19 - cut, 4)) * 10
    b = dist_gae(values2, rewards2, dones, GaeConfig(0.95, 0.9))
    np.testing.assert_array_equal(a.adv_quantiles[:cut + 1], b.adv_quantiles[:cut + 1])


def test_scalar_advantages():
    out = dist_gae(np.array([[0.0, 0.0]]), [0.0], [True], GaeConfig())
    out.adv_quantiles[:] = [[1.0, 3.0]]
    out.scalar_adv[:] = [2.0]
    assert scalar_advantages(out)[0] == 2.0
    assert scalar_advantages(np.array([[1.0, 3.0]]))[0] == 2.0


def test_scalar_advantages_normalized():
    rng = make_rng(5)
    a = rng.standard_normal((40, 6)) * 3 + 1
    out = scalar_advantages(a, normalize=True)
    assert abs(out.mean()) < 1e-10
    assert out.std() == pytest.approx(1.0, abs=1e-6)
    means = a.mean(axis=1)
    np.testing.assert_allclose(out, (means - means.mean()) / means.std(), atol=1e-12)
