from types import SimpleNamespace

import numpy as np
import pytest

from mimal.data import MultiSourceDataset, SourceDataset
from mimal.errors import NumericError, UsageError
from mimal.learners import (FittedModel, LearnerSpec, ModelBundle,
                            bundle_predict, fit_all_baselines,
                            baseline_predictions)
from mimal.oracles import (QuadraticReward, brute_force_simplex_min,
                           finite_diff_check, linear_l2_saddle_oracle,
                           minimax_gap_audit, monte_carlo_truth,
                           quadratic_moments_from_data, simplex_grid)
from mimal.rewards import reward_samples
from mimal.simulate import SCENARIOS, SIM1_THETA


def eye_instance(cs, offsets=None, scale=1.0):
    d = len(cs[0])
    return QuadraticReward(A=[scale * np.eye(d) for _ in cs],
                           c=[np.asarray(c, float) for c in cs],
                           offsets=offsets)


def random_instance(rng, M=3, d=4):
    A, c = [], []
    for _ in range(M):
        B = rng.normal(size=(d, d))
        A.append(B.T @ B / d + 0.5 * np.eye(d))
        c.append(rng.normal(size=d))
    return QuadraticReward(A=A, c=c)


# --- moment container ------------------------------------------------------


def test_moment_validation():
    with pytest.raises(UsageError):
        QuadraticReward(A=[np.eye(2)], c=[np.zeros(2), np.zeros(2)])
    with pytest.raises(UsageError):
        QuadraticReward(A=[np.array([[1.0, 0.5], [0.0, 1.0]])], c=[np.zeros(2)])
    with pytest.raises(UsageError):
        QuadraticReward(A=[np.diag([-1.0, 1.0])], c=[np.zeros(2)])
    with pytest.raises(UsageError):
        QuadraticReward(A=[np.eye(3)], c=[np.zeros(2)])


def test_reward_values_hand_case():
    mom = eye_instance([[1.0, 2.0]], offsets=[0.5])
    theta = np.array([1.0, 1.0])
    # 2 * (1 + 2) - 2 + 0.5
    assert mom.per_source_rewards(theta)[0] == pytest.approx(4.5, abs=1e-12)
    assert mom.value_at([1.0], theta) == pytest.approx(4.5, abs=1e-12)


def test_inner_argmax_solves_mixed_normal_equations():
    mom = QuadraticReward(A=[2.0 * np.eye(2)], c=[np.array([2.0, 4.0])])
    assert np.allclose(mom.inner_argmax([1.0]), [1.0, 2.0], atol=1e-12)
    two = QuadraticReward(A=[np.diag([1.0, 1.0]), np.diag([3.0, 1.0])],
                          c=[np.array([1.0, 0.0]), np.array([0.0, 1.0])])
    q = np.array([0.5, 0.5])
    want = np.linalg.solve(0.5 * np.diag([1.0, 1.0]) + 0.5 * np.diag([3.0, 1.0]),
                           0.5 * np.array([1.0, 0.0]) + 0.5 * np.array([0.0, 1.0]))
    assert np.allclose(two.inner_argmax(q), want, atol=1e-12)


def test_inner_argmax_singular_mixture():
    mom = QuadraticReward(A=[np.zeros((2, 2))], c=[np.ones(2)])
    with pytest.raises(NumericError):
        mom.inner_argmax([1.0])


def test_value_linear_in_q():
    rng = np.random.default_rng(0)
    mom = random_instance(rng)
    theta = rng.normal(size=4)
    qa = np.array([0.2, 0.5, 0.3])
    qb = np.array([0.6, 0.1, 0.3])
    for a in (0.0, 0.25, 0.7, 1.0):
        q = a * qa + (1 - a) * qb
        want = a * mom.value_at(qa, theta) + (1 - a) * mom.value_at(qb, theta)
        assert mom.value_at(q, theta) == pytest.approx(want, abs=1e-10)


def test_outer_grad_is_envelope_gradient():
    rng = np.random.default_rng(1)
    mom = random_instance(rng)
    for delta in (0.0, 0.3):
        err = finite_diff_check(
            lambda x: (mom.outer_value(x, delta), mom.outer_grad(x, delta)),
            np.array([0.5, 0.2, 0.3]), step=1e-5)
        assert err < 1e-6


def test_finite_diff_check_step_domain():
    fn = lambda x: (float(x @ x), 2.0 * x)
    assert finite_diff_check(fn, np.ones(3), 1e-5) < 1e-9
    with pytest.raises(UsageError):
        finite_diff_check(fn, np.ones(3), 1e-2)
    with pytest.raises(UsageError):
        finite_diff_check(fn, np.ones(3), 1e-8)


def test_finite_diff_check_catches_wrong_gradient():
    fn = lambda x: (float(x @ x), 2.5 * x)
    assert finite_diff_check(fn, np.ones(2), 1e-5) > 0.1


# --- grids ------------------------------------------------------------------


def test_simplex_grid_two_sources():
    Q = simplex_grid(2, 0.25)
    assert Q.shape == (5, 2)
    assert np.allclose(Q.sum(axis=1), 1.0)
    assert [1.0, 0.0] in Q.tolist() and [0.0, 1.0] in Q.tolist()


def test_simplex_grid_three_sources():
    Q = simplex_grid(3, 0.5)
    assert Q.shape == (6, 3)
    assert np.allclose(Q.sum(axis=1), 1.0)
    assert np.all(Q >= 0)
    with pytest.raises(UsageError):
        simplex_grid(4, 0.1)


def test_brute_force_requires_fine_grid():
    with pytest.raises(UsageError):
        brute_force_simplex_min(lambda q: 0.0, 2, 0.1)


def test_brute_force_finds_grid_minimum_both_paths():
    # vectorized callable
    q_star, v = brute_force_simplex_min(
        lambda Q: (Q[:, 0] - 0.3) ** 2, 2, 1e-2)
    assert q_star[0] == pytest.approx(0.3, abs=1e-12)
    assert v == pytest.approx(0.0, abs=1e-12)

    # scalar-only callable
    def f(q):
        if np.asarray(q).ndim != 1:
            raise TypeError("scalar only")
        return float((q[0] - 0.62) ** 2)

    q_star, v = brute_force_simplex_min(f, 2, 1e-2)
    assert q_star[0] == pytest.approx(0.62, abs=1e-12)


# --- certified saddle --------------------------------------------------------


def test_oracle_reproduces_registered_linear_truth():
    sc = SCENARIOS["sim1_lasso"]
    # population second moments of the registered design: E[x x'] = 3 I,
    # signal confined to the first five coordinates
    mom = QuadraticReward(A=[3.0 * np.eye(5)] * 3,
                          c=[3.0 * SIM1_THETA[m] for m in range(3)])
    sol = linear_l2_saddle_oracle(mom)
    assert sol.value == pytest.approx(sc.truth_value, abs=1e-8)
    assert np.allclose(sol.q_star, sc.truth_q, atol=1e-5)
    assert np.allclose(sol.theta_star, sc.truth_theta, atol=1e-5)
    assert not sol.flat
    d = sol.to_dict()
    assert set(d) == {"q_star", "theta_star", "value", "flat", "iterations"}


def test_oracle_flags_duplicated_sources_as_flat():
    c = np.array([1.0, -2.0, 0.5])
    mom = eye_instance([c, c])
    sol = linear_l2_saddle_oracle(mom)
    assert sol.flat
    assert sol.value == pytest.approx(float(c @ c), abs=1e-10)


def test_oracle_opposed_sources():
    c = np.array([2.0, -1.0])
    mom = eye_instance([c, -c])
    sol = linear_l2_saddle_oracle(mom)
    assert not sol.flat
    assert np.allclose(sol.q_star, [0.5, 0.5], atol=1e-6)
    assert sol.value == pytest.approx(0.0, abs=1e-9)
    assert np.allclose(sol.theta_star, 0.0, atol=1e-6)


def test_oracle_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(2)
    for _ in range(5):
        mom = random_instance(rng, M=3, d=3)
        sol = linear_l2_saddle_oracle(mom)
        q_bf, v_bf = brute_force_simplex_min(
            lambda q: mom.outer_value(q), 3, 1e-2)
        assert sol.value <= v_bf + 1e-9
        assert abs(sol.value - v_bf) < 5e-3


def test_oracle_satisfies_weak_duality():
    rng = np.random.default_rng(3)
    mom = random_instance(rng, M=2, d=3)
    sol = linear_l2_saddle_oracle(mom)
    for _ in range(50):
        theta = rng.normal(scale=2.0, size=3)
        assert np.min(mom.per_source_rewards(theta)) <= sol.value + 1e-9
        w = rng.uniform(size=2)
        q = w / w.sum()
        assert mom.outer_value(q) >= sol.value - 1e-9


def test_oracle_ridge_delta_shifts_toward_uniform():
    rng = np.random.default_rng(4)
    mom = random_instance(rng, M=2, d=3)
    plain = linear_l2_saddle_oracle(mom, delta=0.0)
    ridged = linear_l2_saddle_oracle(mom, delta=50.0)
    # a heavy q-ridge dominates the game and pins q near uniform
    assert np.max(np.abs(ridged.q_star - 0.5)) < np.max(np.abs(plain.q_star - 0.5)) + 1e-12
    assert np.allclose(ridged.q_star, [0.5, 0.5], atol=0.05)


# --- empirical moments and the equilibrium audit ----------------------------


def make_data(seed=0, n=300):
    rng = np.random.default_rng(seed)
    sources = []
    for m, w in enumerate(([1.0, -0.5], [0.4, 0.8])):
        X = rng.normal(size=(n, 2))
        Z = rng.normal(size=(n, 1))
        y = X @ np.array(w) + 0.5 * Z[:, 0] + 0.3 * rng.normal(size=n)
        sources.append(SourceDataset(source_id=m, y=y, X=X, Z=Z))
    return MultiSourceDataset(sources=sources)


def specs():
    f = LearnerSpec(family="linear_basis", basis="identity")
    g = LearnerSpec(family="linear_basis", basis="identity",
                    include_intercept=True)
    return f, g


def test_empirical_moments_match_row_arithmetic():
    data = make_data()
    f, g = specs()
    baselines = fit_all_baselines(g, "squared_error", data)
    mom = quadratic_moments_from_data(data, f, g, baselines)
    assert mom.M == 2 and mom.d == 2 + 2 * 2

    rng = np.random.default_rng(5)
    packed = rng.normal(size=mom.d)
    bundle = ModelBundle(
        f=FittedModel(f, packed[:2]),
        g=[FittedModel(g, packed[2:4]), FittedModel(g, packed[4:6])])
    us = bundle_predict(bundle, data)
    bs = baseline_predictions(baselines, data)
    direct = [float(np.mean(reward_samples("squared_error", s.y, u, b)))
              for s, u, b in zip(data.sources, us, bs)]
    assert np.allclose(mom.per_source_rewards(packed), direct, atol=1e-10)


def test_moments_require_squared_error():
    data = make_data()
    f, g = specs()
    baselines = fit_all_baselines(g, "squared_error", data)
    with pytest.raises(UsageError):
        quadratic_moments_from_data(data, f, g, baselines, kind="logistic")


def audit_stub(q, rewards):
    return SimpleNamespace(
        q_hat=np.asarray(q, float),
        breakdown=SimpleNamespace(per_source_reward=np.asarray(rewards, float)))


def test_gap_audit_single_source_is_zero():
    assert minimax_gap_audit(audit_stub([1.0], [3.7])) == pytest.approx(0.0)


def test_gap_audit_measures_active_spread():
    assert minimax_gap_audit(audit_stub([0.5, 0.5], [1.2, 0.8])) == \
        pytest.approx(0.2, abs=1e-12)
    assert minimax_gap_audit(audit_stub([0.5, 0.5], [1.0, 1.0])) == \
        pytest.approx(0.0, abs=1e-12)


def test_gap_audit_ignores_inactive_sources():
    gap = minimax_gap_audit(audit_stub([1.0 - 1e-9, 1e-9], [1.0, 50.0]))
    assert gap == pytest.approx(0.0, abs=1e-6)


def test_gap_audit_grows_with_perturbation():
    gaps = [minimax_gap_audit(audit_stub([0.5, 0.5], [1.0 + e, 1.0 - e]))
            for e in (0.0, 0.01, 0.1, 0.5)]
    assert all(np.diff(gaps) > 0)


def test_monte_carlo_truth_guards_sample_size():
    with pytest.raises(UsageError):
        monte_carlo_truth(lambda n, s: None, 10 ** 4, None)
