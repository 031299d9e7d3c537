import numpy as np
import pytest

from mimal.errors import ShapeError
from mimal.rewards import RewardBreakdown, empirical_reward, reward_samples


def test_reward_samples_squared_error_hand_values():
    y = np.array([1.0, 2.0])
    uf = np.array([1.0, 1.5])
    ub = np.array([0.0, 0.0])
    # -(y-uf)^2 + (y-ub)^2
    want = np.array([1.0, -0.25 + 4.0])
    assert np.allclose(reward_samples("squared_error", y, uf, ub), want)


def test_reward_samples_logistic_hand_values():
    y = np.array([1.0, 0.0])
    uf = np.array([2.0, -1.0])
    ub = np.array([0.0, 0.0])
    want = (y * uf - np.log1p(np.exp(uf))) - (y * ub - np.log1p(np.exp(ub)))
    assert np.allclose(reward_samples("logistic", y, uf, ub), want)


def test_reward_zero_when_models_agree():
    rng = np.random.default_rng(0)
    y = rng.poisson(2.0, size=40).astype(float)
    u = rng.normal(size=40)
    assert np.allclose(reward_samples("poisson", y, u, u), 0.0)


def test_empirical_reward_weights_and_breakdown():
    y0 = np.array([0.0, 2.0])
    y1 = np.array([1.0, 1.0, 1.0])
    uf = [np.array([0.0, 2.0]), np.array([0.0, 0.0, 0.0])]
    ub = [np.array([1.0, 1.0]), np.array([1.0, 1.0, 1.0])]
    # source 0: mean(-(y-uf)^2 + (y-ub)^2) = mean(1, 1) = 1
    # source 1: mean(-(1)^2 + 0) = -1
    val, brk = empirical_reward("squared_error", [0.25, 0.75], uf, ub,
                                [y0, y1])
    assert val == pytest.approx(0.25 * 1.0 + 0.75 * (-1.0), abs=1e-12)
    assert np.allclose(brk.per_source_reward, [1.0, -1.0])
    assert list(brk.per_source_n) == [2, 3]


def test_empirical_reward_matches_sample_means():
    rng = np.random.default_rng(7)
    ys = [rng.normal(size=30), rng.normal(size=50)]
    uf = [rng.normal(size=30), rng.normal(size=50)]
    ub = [rng.normal(size=30), rng.normal(size=50)]
    q = np.array([0.4, 0.6])
    val, brk = empirical_reward("squared_error", q, uf, ub, ys)
    means = [np.mean(reward_samples("squared_error", y, a, b))
             for y, a, b in zip(ys, uf, ub)]
    assert val == pytest.approx(q @ means, abs=1e-12)
    assert np.allclose(brk.per_source_reward, means)


def test_empirical_reward_linear_in_q():
    rng = np.random.default_rng(3)
    ys = [rng.normal(size=20), rng.normal(size=20), rng.normal(size=20)]
    uf = [rng.normal(size=20) for _ in range(3)]
    ub = [rng.normal(size=20) for _ in range(3)]
    qa = np.array([0.2, 0.3, 0.5])
    qb = np.array([0.6, 0.1, 0.3])
    va, _ = empirical_reward("squared_error", qa, uf, ub, ys)
    vb, _ = empirical_reward("squared_error", qb, uf, ub, ys)
    vm, _ = empirical_reward("squared_error", 0.5 * qa + 0.5 * qb, uf, ub, ys)
    assert vm == pytest.approx(0.5 * va + 0.5 * vb, abs=1e-12)


def test_length_mismatch_rejected():
    y = [np.zeros(3)]
    with pytest.raises(ShapeError):
        empirical_reward("squared_error", [0.5, 0.5], [np.zeros(3)],
                         [np.zeros(3)], y)
    with pytest.raises(ShapeError):
        empirical_reward("squared_error", [1.0], [np.zeros(4)],
                         [np.zeros(3)], y)


def test_breakdown_validation():
    with pytest.raises(ShapeError):
        RewardBreakdown(np.array([1.0, np.inf]), np.array([3, 3]))
    with pytest.raises(ShapeError):
        RewardBreakdown(np.array([1.0]), np.array([3, 3]))
