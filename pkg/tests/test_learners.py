import numpy as np
import pytest

from mimal.data import MultiSourceDataset, SourceDataset
from mimal.errors import ShapeError, UsageError
from mimal.learners import (FittedModel, LearnerSpec, ModelBundle,
                            baseline_predictions, bspline_block,
                            bundle_predict, design_matrix, fit_all_baselines,
                            fit_baseline, mlp_backprop, mlp_forward, mlp_init,
                            mlp_param_count, predict, reward_param_grad)
from mimal.losses import loss_value


def linear_spec(**kw):
    return LearnerSpec(family="linear_basis", basis="identity", **kw)


def make_data(ns=(25, 35), p=2, k=1, seed=0):
    rng = np.random.default_rng(seed)
    sources = [SourceDataset(source_id=m, y=rng.normal(size=n),
                             X=rng.normal(size=(n, p)),
                             Z=rng.normal(size=(n, k)))
               for m, n in enumerate(ns)]
    return MultiSourceDataset(sources=sources)


# --- design matrices ---------------------------------------------------


def test_identity_design():
    X = np.arange(6.0).reshape(3, 2)
    Phi = design_matrix(linear_spec(), X)
    assert np.array_equal(Phi, X)
    Phi = design_matrix(linear_spec(include_intercept=True), X)
    assert Phi.shape == (3, 3)
    assert np.allclose(Phi[:, -1], 1.0)


def test_interactions_design():
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    Z = np.array([[5.0], [6.0]])
    spec = LearnerSpec(family="linear_basis", basis="interactions")
    Phi = design_matrix(spec, X, Z)
    want = np.array([[1, 2, 5, 10], [3, 4, 18, 24]], dtype=float)
    assert np.allclose(Phi, want)
    with pytest.raises(ShapeError):
        design_matrix(spec, X)


def test_bspline_block_is_24_columns_partition_of_unity():
    spec = LearnerSpec(family="linear_basis", basis="cubic_bspline")
    x = np.linspace(-2.0, 2.0, 101)
    B = bspline_block(spec, x)
    assert B.shape == (101, 24)
    assert np.allclose(B.sum(axis=1), 1.0)
    assert np.all(B >= 0.0)


def test_bspline_clamps_and_counts():
    spec = LearnerSpec(family="linear_basis", basis="cubic_bspline")
    diag = {}
    B = bspline_block(spec, np.array([-5.0, 0.0, 9.0]), diagnostics=diag)
    assert diag["bspline_clamped"] == 2
    edge = bspline_block(spec, np.array([-2.0, 0.0, 2.0]))
    assert np.allclose(B, edge)


def test_bspline_design_one_block_per_column():
    spec = LearnerSpec(family="linear_basis", basis="cubic_bspline",
                       include_intercept=True)
    X = np.random.default_rng(0).uniform(-2, 2, size=(10, 3))
    Phi = design_matrix(spec, X)
    assert Phi.shape == (10, 3 * 24 + 1)


def test_empty_design():
    Phi = design_matrix(linear_spec(), np.empty((4, 0)))
    assert Phi.shape == (4, 0)


# --- mlp ---------------------------------------------------------------


def mlp_spec(widths=(3, 6, 4, 1), output="identity", seed=11):
    return LearnerSpec(family="mlp", hyper={
        "widths": list(widths), "output": output, "init_seed": seed})


def test_mlp_param_count():
    assert mlp_param_count([3, 6, 4, 1]) == 3 * 6 + 6 + 6 * 4 + 4 + 4 * 1 + 1
    assert mlp_param_count([3, 6, 4, 1]) == 57
    assert mlp_param_count([2, 1]) == 3


def test_mlp_init_deterministic_zero_bias():
    spec = mlp_spec()
    a = mlp_init(spec)
    b = mlp_init(spec)
    assert np.array_equal(a, b)
    assert a.size == 57
    # biases of the first layer sit right after the 18 weights
    assert np.allclose(a[18:24], 0.0)
    c = mlp_init(spec, seed=99)
    assert not np.array_equal(a, c)


def test_mlp_forward_hand_computed():
    spec = mlp_spec(widths=(2, 2, 1))
    # W1 = [[1, 0], [0, -1]], b1 = [0, 0.5], W2 = [[1], [2]], b2 = [0.25]
    params = np.array([1.0, 0.0, 0.0, -1.0, 0.0, 0.5, 1.0, 2.0, 0.25])
    x = np.array([[2.0, 3.0]])
    # hidden pre = [2, -2.5], relu = [2, 0]; out = 2*1 + 0*2 + 0.25
    out, cache = mlp_forward(spec, params, x)
    assert out[0] == pytest.approx(2.25, abs=1e-12)
    assert len(cache) == 3


def test_mlp_sigmoid_output_tag():
    spec = mlp_spec(widths=(2, 2, 1), output="sigmoid")
    params = np.zeros(mlp_param_count([2, 2, 1]))
    out, _ = mlp_forward(spec, params, np.zeros((5, 2)))
    assert np.allclose(out, 0.5)
    raw, _ = mlp_forward(spec, params, np.zeros((5, 2)), output="identity")
    assert np.allclose(raw, 0.0)


def test_mlp_backprop_matches_finite_difference():
    spec = mlp_spec()
    rng = np.random.default_rng(5)
    params = mlp_init(spec) + 0.01 * rng.normal(size=57)
    X = rng.normal(size=(12, 3))
    dout = rng.normal(size=12)

    def value(p):
        out, _ = mlp_forward(spec, p, X)
        return float(dout @ out)

    _, cache = mlp_forward(spec, params, X)
    grad = mlp_backprop(spec, params, cache, dout)
    eps = 1e-6
    fd = np.empty_like(grad)
    for j in range(params.size):
        e = np.zeros_like(params)
        e[j] = eps
        fd[j] = (value(params + e) - value(params - e)) / (2 * eps)
    assert np.max(np.abs(grad - fd)) < 1e-5


# --- prediction and the packed reward gradient --------------------------


def test_predict_rejects_width_mismatch():
    model = FittedModel(linear_spec(), np.array([1.0, 2.0, 3.0]))
    with pytest.raises(ShapeError):
        predict(model, np.zeros((4, 2)))


def test_bundle_rejects_intercept_in_f_and_nonlinear_g():
    f = FittedModel(linear_spec(include_intercept=True), np.zeros(3))
    g = FittedModel(linear_spec(include_intercept=True), np.zeros(2))
    with pytest.raises(UsageError):
        ModelBundle(f=f, g=[g])
    f2 = FittedModel(linear_spec(), np.zeros(2))
    bad_g = FittedModel(LearnerSpec(family="krr", hyper={"sigma": 0.1,
                                                         "ridge": 0.1}),
                        np.zeros(2))
    with pytest.raises(UsageError):
        ModelBundle(f=f2, g=[bad_g])


def packed_linear_bundle(data, seed=1):
    rng = np.random.default_rng(seed)
    f = FittedModel(linear_spec(), rng.normal(size=data.p))
    g = [FittedModel(linear_spec(include_intercept=True),
                     rng.normal(size=data.k + 1))
         for _ in range(data.M)]
    return ModelBundle(f=f, g=g)


def set_packed(bundle, packed):
    sizes = [bundle.f.params.size] + [gm.params.size for gm in bundle.g]
    parts = np.split(np.asarray(packed, dtype=float), np.cumsum(sizes)[:-1])
    f = FittedModel(bundle.f.spec, parts[0], anchors=bundle.f.anchors)
    g = [FittedModel(gm.spec, part) for gm, part in zip(bundle.g, parts[1:])]
    return ModelBundle(f=f, g=g)


def get_packed(bundle):
    return np.concatenate([bundle.f.params] + [gm.params for gm in bundle.g])


@pytest.mark.parametrize("kind", ["squared_error", "logistic", "poisson"])
def test_reward_param_grad_matches_finite_difference(kind):
    data = make_data(seed=4)
    if kind == "logistic":
        data = MultiSourceDataset(sources=[
            SourceDataset(source_id=s.source_id,
                          y=(s.y > 0).astype(float), X=s.X, Z=s.Z)
            for s in data.sources])
    if kind == "poisson":
        data = MultiSourceDataset(sources=[
            SourceDataset(source_id=s.source_id,
                          y=np.abs(np.round(s.y)), X=s.X, Z=s.Z)
            for s in data.sources])
    bundle = packed_linear_bundle(data)
    q = np.array([0.3, 0.7])

    def value(p):
        b = set_packed(bundle, p)
        us = bundle_predict(b, data)
        return sum(q[m] * np.mean(loss_value(kind, s.y, us[m]))
                   for m, s in enumerate(data.sources))

    packed = get_packed(bundle)
    grad = reward_param_grad(bundle, kind, q, data)
    eps = 1e-6
    fd = np.empty_like(packed)
    for j in range(packed.size):
        e = np.zeros_like(packed)
        e[j] = eps
        fd[j] = (value(packed + e) - value(packed - e)) / (2 * eps)
    assert np.max(np.abs(grad - fd)) < 1e-5


def test_reward_param_grad_mlp_block():
    data = make_data(ns=(20, 20), p=2, k=1, seed=8)
    spec = mlp_spec(widths=(3, 4, 1))
    f = FittedModel(spec, mlp_init(spec) + 0.05)
    g = [FittedModel(linear_spec(include_intercept=True),
                     np.array([0.1, -0.2])) for _ in range(2)]
    bundle = ModelBundle(f=f, g=g)
    q = np.array([0.5, 0.5])

    def value(p):
        b = set_packed(bundle, p)
        us = bundle_predict(b, data)
        return sum(q[m] * np.mean(loss_value("squared_error", s.y, us[m]))
                   for m, s in enumerate(data.sources))

    packed = get_packed(bundle)
    grad = reward_param_grad(bundle, "squared_error", q, data)
    eps = 1e-6
    fd = np.empty_like(packed)
    for j in range(packed.size):
        e = np.zeros_like(packed)
        e[j] = eps
        fd[j] = (value(packed + e) - value(packed - e)) / (2 * eps)
    assert np.max(np.abs(grad - fd)) < 1e-5


# --- baselines ----------------------------------------------------------


def test_baseline_ols_closed_form():
    rng = np.random.default_rng(2)
    Z = rng.normal(size=(60, 2))
    y = Z @ np.array([1.5, -0.5]) + 0.1 * rng.normal(size=60)
    spec = linear_spec(include_intercept=True)
    model = fit_baseline(spec, "squared_error", y, Z)
    Phi = np.column_stack([Z, np.ones(60)])
    beta = np.linalg.lstsq(Phi, y, rcond=None)[0]
    assert np.allclose(model.params, beta, atol=1e-10)


def test_baseline_null_model_is_link_of_mean():
    y = np.array([0.0, 1.0, 1.0, 1.0])
    spec = linear_spec(include_intercept=True)
    m_sq = fit_baseline(spec, "squared_error", y, np.empty((4, 0)))
    assert m_sq.params[-1] == pytest.approx(0.75, abs=1e-10)
    m_lg = fit_baseline(spec, "logistic", y, np.empty((4, 0)))
    assert m_lg.params[-1] == pytest.approx(np.log(3.0), abs=1e-7)
    y_p = np.array([1.0, 2.0, 3.0, 6.0])
    m_po = fit_baseline(spec, "poisson", y_p, np.empty((4, 0)))
    assert m_po.params[-1] == pytest.approx(np.log(3.0), abs=1e-7)


def test_baseline_logistic_newton_matches_gradient_zero():
    rng = np.random.default_rng(3)
    Z = rng.normal(size=(200, 2))
    p = 1 / (1 + np.exp(-(0.5 * Z[:, 0] - Z[:, 1])))
    y = (rng.uniform(size=200) < p).astype(float)
    spec = linear_spec(include_intercept=True)
    model = fit_baseline(spec, "logistic", y, Z)
    Phi = np.column_stack([Z, np.ones(200)])
    u = Phi @ model.params
    score = Phi.T @ (y - 1 / (1 + np.exp(-u))) / 200
    assert np.max(np.abs(score)) < 1e-7


def test_baseline_lasso_shrinks_to_zero():
    rng = np.random.default_rng(9)
    Z = rng.normal(size=(80, 3))
    y = Z @ np.array([2.0, 0.0, 0.0]) + 0.05 * rng.normal(size=80)
    spec = LearnerSpec(family="lasso", hyper={"penalty": 50.0})
    model = fit_baseline(spec, "squared_error", y, Z)
    assert np.allclose(model.params, 0.0)
    tiny = LearnerSpec(family="lasso", hyper={"penalty": 1e-10})
    m2 = fit_baseline(tiny, "squared_error", y, Z)
    ols = np.linalg.lstsq(Z, y, rcond=None)[0]
    assert np.allclose(m2.params, ols, atol=1e-4)


def test_baseline_krr_smooths_toward_function():
    rng = np.random.default_rng(4)
    Z = rng.uniform(-1, 1, size=(150, 1))
    y = np.sin(2.0 * Z[:, 0])
    spec = LearnerSpec(family="krr", hyper={"sigma": 2.0, "ridge": 1e-4})
    model = fit_baseline(spec, "squared_error", y, Z)
    pred = predict(model, Z)
    assert np.mean((pred - y) ** 2) < 1e-3


def test_baseline_rejections():
    y = np.zeros(4)
    Z = np.zeros((4, 1))
    with pytest.raises(UsageError):
        fit_baseline(LearnerSpec(family="mlp", hyper={"widths": [1, 1]}),
                     "squared_error", y, Z)
    with pytest.raises(UsageError):
        fit_baseline(LearnerSpec(family="lasso", hyper={"penalty": 0.1}),
                     "logistic", np.array([0.0, 1.0, 0.0, 1.0]), Z)


def test_fit_all_baselines_and_predictions():
    data = make_data()
    spec = linear_spec(include_intercept=True)
    models = fit_all_baselines(spec, "squared_error", data)
    preds = baseline_predictions(models, data)
    assert len(models) == data.M and len(preds) == data.M
    for m, s in enumerate(data.sources):
        Phi = np.column_stack([s.Z, np.ones(s.n)])
        assert np.allclose(preds[m], Phi @ models[m].params)


def test_spec_validation_and_roundtrip():
    with pytest.raises(UsageError):
        LearnerSpec(family="forest")
    with pytest.raises(UsageError):
        LearnerSpec(family="krr", hyper={"sigma": -1.0, "ridge": 0.1})
    with pytest.raises(UsageError):
        LearnerSpec(family="mlp", hyper={"widths": [4]})
    spec = LearnerSpec(family="lasso", basis="cubic_bspline",
                       hyper={"penalty": 0.2},
                       basis_params={"num_knots": 20, "range": (-2, 2)})
    again = LearnerSpec.from_dict(spec.to_dict())
    assert again.to_dict() == spec.to_dict()
