"""Model families for f(X, Z), g^(m)(Z), and baselines b^(m)(Z).

Four families: linear_basis (possibly with a feature expansion), lasso
(same designs, l1-penalized), krr (RBF kernel ridge in dual form), and
mlp (small dense net trained by manual backprop). The exposure model f
is shared across sources; each source gets its own adjustment g^(m) and
baseline b^(m), and g/b must live in the same family so the reward
difference is nonnegative at the population saddle.

Bases never overlap between f and g: f's design always involves X
(no intercept, no pure-Z columns), g's design is Z-only.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.spatial.distance import cdist

from .errors import NumericError, ShapeError, UsageError
from .losses import baseline_link, loss_grad_u, loss_value
from .rng import make_rng

FAMILIES = ("linear_basis", "lasso", "krr", "mlp")
BASES = ("identity", "interactions", "cubic_bspline")


@dataclass
class LearnerSpec:
    """Declarative family description; hyper holds the family's tuning knobs.

    hyper keys by family:
      lasso: penalty (l1 coefficient, default 1/n_1)
      krr:   sigma (RBF exponent coefficient), ridge (penalty on a^T K a)
      mlp:   widths (layer sizes incl. input and output), output
             ("identity" or "sigmoid"), init_seed
    basis_params: num_knots and range for cubic_bspline.
    """

    family: str = "linear_basis"
    basis: str = "identity"
    hyper: dict = field(default_factory=dict)
    include_intercept: bool = False
    basis_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UsageError(f"unknown family {self.family!r}", expected=FAMILIES)
        if self.basis not in BASES:
            raise UsageError(f"unknown basis {self.basis!r}", expected=BASES)
        if self.family == "lasso" and self.hyper.get("penalty", 0.0) < 0:
            raise UsageError("lasso penalty must be nonnegative")
        if self.family == "krr":
            if self.hyper.get("sigma", 0.1) <= 0 or self.hyper.get("ridge", 0.1) <= 0:
                raise UsageError("krr sigma and ridge must be positive")
        if self.family == "mlp":
            widths = self.hyper.get("widths", [])
            if len(widths) < 2 or any(w < 1 for w in widths):
                raise UsageError("mlp widths must be >= 1 with at least 2 layers")

    def to_dict(self):
        return {
            "family": self.family, "basis": self.basis, "hyper": dict(self.hyper),
            "include_intercept": self.include_intercept,
            "basis_params": dict(self.basis_params),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            family=d.get("family", "linear_basis"), basis=d.get("basis", "identity"),
            hyper=dict(d.get("hyper", {})),
            include_intercept=bool(d.get("include_intercept", False)),
            basis_params=dict(d.get("basis_params", {})),
        )


@dataclass
class FittedModel:
    spec: LearnerSpec
    params: np.ndarray
    anchors: np.ndarray = None  # krr training inputs; kernel queries go here
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float).ravel()
        if self.params.size and not np.all(np.isfinite(self.params)):
            raise NumericError("non-finite model parameters")

    def to_dict(self):
        d = {"spec": self.spec.to_dict(), "params": self.params.tolist()}
        if self.anchors is not None:
            d["anchors"] = self.anchors.tolist()
        if self.warnings:
            d["warnings"] = list(self.warnings)
        return d


@dataclass
class ModelBundle:
    """Shared f plus per-source g models; rejects overlapping bases."""

    f: FittedModel
    g: list

    def __post_init__(self):
        if self.f.spec.family in ("linear_basis", "lasso") and self.f.spec.include_intercept:
            raise UsageError(
                "f may not include an intercept: the constant column belongs "
                "to the per-source g basis")
        for gm in self.g:
            if gm.spec.family not in ("linear_basis", "lasso"):
                raise UsageError("adjustment models must be linear in a Z basis",
                                 family=gm.spec.family)


def _bspline_knots(spec):
    params = spec.basis_params
    num_knots = int(params.get("num_knots", 20))
    lo, hi = params.get("range", (-2.0, 2.0))
    if not hi > lo:
        raise UsageError("bspline range must have hi > lo", range=(lo, hi))
    interior = np.linspace(lo, hi, num_knots + 2)[1:-1]
    t = np.concatenate([np.full(4, lo), interior, np.full(4, hi)])
    return t, lo, hi


def bspline_block(spec, x, diagnostics=None):
    """Cubic B-spline basis for one column; out-of-range inputs are clamped."""
    t, lo, hi = _bspline_knots(spec)
    x = np.asarray(x, dtype=float)
    n_clamped = int(np.sum((x < lo) | (x > hi)))
    if n_clamped and diagnostics is not None:
        diagnostics["bspline_clamped"] = diagnostics.get("bspline_clamped", 0) + n_clamped
    xc = np.clip(x, lo, hi)
    B = BSpline.design_matrix(xc, t, 3, extrapolate=False).toarray()
    return B


def design_matrix(spec, X, Z=None, diagnostics=None):
    """Feature map for a linear-in-parameters family.

    identity        -> [X]
    interactions    -> [X, X_i * Z_j for all i, j]
    cubic_bspline   -> one 24-column block per X column (num_knots=20)
    plus a trailing intercept column when include_intercept.
    For adjustment/baseline models pass the Z block as X (their design
    is Z-only) and leave Z=None.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    blocks = []
    if spec.basis == "identity":
        if X.shape[1]:
            blocks.append(X)
    elif spec.basis == "interactions":
        if Z is None:
            raise ShapeError("interactions basis requires a Z block")
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        blocks.append(X)
        for i in range(X.shape[1]):
            for j in range(Z.shape[1]):
                blocks.append((X[:, i] * Z[:, j])[:, None])
    else:
        for i in range(X.shape[1]):
            blocks.append(bspline_block(spec, X[:, i], diagnostics))
    if spec.include_intercept:
        blocks.append(np.ones((n, 1)))
    if not blocks:
        return np.empty((n, 0))
    return np.hstack(blocks)


def _as2d(A):
    A = np.asarray(A, dtype=float)
    return A[:, None] if A.ndim == 1 else A


def rbf_kernel(A, B, sigma):
    """K(a, b) = exp(-sigma * ||a - b||^2)."""
    return np.exp(-sigma * cdist(_as2d(A), _as2d(B), "sqeuclidean"))


# ---------------------------------------------------------------------------
# MLP: packed-parameter dense net with manual backprop


def mlp_widths(spec):
    return [int(w) for w in spec.hyper["widths"]]


def mlp_param_count(widths):
    return sum(widths[i] * widths[i + 1] + widths[i + 1] for i in range(len(widths) - 1))


def mlp_init(spec, seed=None):
    """Glorot-uniform weights, zero biases, deterministic given the seed."""
    widths = mlp_widths(spec)
    rng = make_rng(spec.hyper.get("init_seed", 0) if seed is None else seed)
    parts = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        parts.append(np.zeros(fan_out))
    return np.concatenate(parts)


def _mlp_unpack(params, widths):
    layers = []
    pos = 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        W = params[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = params[pos:pos + fan_out]
        pos += fan_out
        layers.append((W, b))
    return layers


def mlp_forward(spec, params, inputs, output=None):
    """Forward pass; returns (n,) outputs and the per-layer cache for backprop.

    ReLU on hidden layers. The output activation defaults to the spec's
    tag; the saddle objective always trains on the identity scale (the
    loss supplies the link), so callers there pass output="identity".
    """
    widths = mlp_widths(spec)
    layers = _mlp_unpack(np.asarray(params, dtype=float), widths)
    A = np.atleast_2d(np.asarray(inputs, dtype=float))
    cache = [A]
    for i, (W, b) in enumerate(layers):
        A = A @ W + b
        if i < len(layers) - 1:
            A = np.maximum(A, 0.0)
        cache.append(A)
    out = A[:, 0]
    tag = spec.hyper.get("output", "identity") if output is None else output
    if tag == "sigmoid":
        out = 0.5 * (1.0 + np.tanh(0.5 * out))
    return out, cache

def mlp_backprop(spec, params, cache, dout):
    """Gradient of sum(dout * net_output) in the packed parameters.

    dout is d objective / d pre-activation output, shape (n,).
    """
    widths = mlp_widths(spec)
    layers = _mlp_unpack(np.asarray(params, dtype=float), widths)
    grads = [None] * len(layers)
    delta = np.asarray(dout, dtype=float)[:, None]
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        A_prev = cache[i]
        if i < len(layers) - 1:
            delta = delta * (cache[i + 1] > 0.0)
        gW = A_prev.T @ delta
        gb = delta.sum(axis=0)
        grads[i] = (gW, gb)
        if i > 0:
            delta = delta @ W.T
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


# ---------------------------------------------------------------------------
# Prediction and reward gradients


def _f_inputs(X, Z):
    Z = np.empty((len(X), 0)) if Z is None else np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    return np.column_stack([X, Z]) if Z.shape[1] else np.asarray(X, dtype=float)


def predict(model, X, Z=None, diagnostics=None):
    """Evaluate a fitted model on new rows."""
    spec = model.spec
    if spec.family in ("linear_basis", "lasso"):
        Phi = design_matrix(spec, X, Z, diagnostics)
        if Phi.shape[1] != model.params.size:
            raise ShapeError("design width does not match parameter count",
                             width=Phi.shape[1], params=model.params.size)
        if Phi.shape[1] == 0:
            return np.zeros(Phi.shape[0])
        return Phi @ model.params
    if spec.family == "krr":
        if model.anchors is None:
            raise ShapeError("krr model has no stored anchors")
        Kq = rbf_kernel(X, model.anchors, spec.hyper.get("sigma", 0.1))
        return Kq @ model.params
    u, _ = mlp_forward(spec, model.params, _f_inputs(X, Z))
    return u


def bundle_predict(bundle, data, diagnostics=None):
    """Per-source full predictions f(X, Z) + g^(m)(Z) on the link scale.

    mlp outputs are taken pre-activation here regardless of the spec's
    output tag: the loss supplies the link in the reward.
    """
    out = []
    for m, s in enumerate(data.sources):
        if bundle.f.spec.family == "mlp":
            u, _ = mlp_forward(bundle.f.spec, bundle.f.params,
                               _f_inputs(s.X, s.Z), output="identity")
        else:
            u = predict(bundle.f, s.X, s.Z, diagnostics)
        gm = bundle.g[m]
        if gm.params.size:
            u = u + predict(gm, s.Z, None, diagnostics)
        out.append(u)
    return out


def reward_param_grad(bundle, kind, q, data, diagnostics=None):
    """Gradient of sum_m q_m mean_m ell(y, f+g^(m)) over (theta_f, theta_g(1..M)).

    The baseline term of the reward has no learner parameters, so it
    does not appear. For lasso this is the smooth part only; the l1
    piece is the optimizer's proximal step.
    """
    q = np.asarray(q, dtype=float)
    fspec = bundle.f.spec
    grads_g = []
    grad_f = np.zeros(bundle.f.params.size)
    us = bundle_predict(bundle, data, diagnostics)
    for m, s in enumerate(data.sources):
        w = (q[m] / s.n) * loss_grad_u(kind, s.y, us[m])
        if fspec.family in ("linear_basis", "lasso"):
            Phi = design_matrix(fspec, s.X, s.Z, diagnostics)
            grad_f += Phi.T @ w
        elif fspec.family == "krr":
            Kq = rbf_kernel(s.X, bundle.f.anchors, fspec.hyper.get("sigma", 0.1))
            grad_f += Kq.T @ w
        else:
            _, cache = mlp_forward(fspec, bundle.f.params, _f_inputs(s.X, s.Z),
                                   output="identity")
            grad_f += mlp_backprop(fspec, bundle.f.params, cache, w)
        gm = bundle.g[m]
        if gm.params.size:
            Phi_g = design_matrix(gm.spec, s.Z, None, diagnostics)
            grads_g.append(Phi_g.T @ w)
        else:
            grads_g.append(np.zeros(0))
    if not np.all(np.isfinite(grad_f)):
        raise NumericError("non-finite gradient", block="f")
    return np.concatenate([grad_f] + grads_g)


# ---------------------------------------------------------------------------
# Baseline fitting (single source, Z-only design)


def _newton_glm(kind, Phi, y, tol=1e-8, max_iter=200):
    """Damped Newton ascent of mean ell(y, Phi b) to gradient norm < tol."""
    n, p = Phi.shape
    beta = np.zeros(p)
    # start logistic/poisson at the intercept link when available
    if p and np.allclose(Phi[:, -1], 1.0):
        beta[-1] = baseline_link(kind, y.mean())
    obj = loss_value(kind, y, Phi @ beta).mean()
    for _ in range(max_iter):
        u = Phi @ beta
        g = Phi.T @ loss_grad_u(kind, y, u) / n
        if np.linalg.norm(g) < tol:
            break
        if kind == "logistic":
            s = 0.5 * (1.0 + np.tanh(0.5 * u))
            wts = s * (1.0 - s)
        else:
            wts = np.exp(np.minimum(u, 30.0))
        H = (Phi * wts[:, None]).T @ Phi / n
        try:
            step = np.linalg.solve(H + 1e-10 * np.eye(p), g)
        except np.linalg.LinAlgError:
            step = g
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            cand_obj = loss_value(kind, y, Phi @ cand).mean()
            if cand_obj >= obj:
                beta, obj = cand, cand_obj
                break
            t *= 0.5
        else:
            break
    return beta


def _ista_lasso(Phi, y, lam, tol=1e-8, max_iter=5000):
    """Proximal gradient for max -mean (y - Phi b)^2 - lam * |b|_1."""
    n, p = Phi.shape
    beta = np.zeros(p)
    L = 2.0 * np.linalg.eigvalsh(Phi.T @ Phi / n).max() + 1e-12
    step = 1.0 / L
    for _ in range(max_iter):
        g = 2.0 * Phi.T @ (y - Phi @ beta) / n
        cand = beta + step * g
        cand = np.sign(cand) * np.maximum(np.abs(cand) - step * lam, 0.0)
        if np.max(np.abs(cand - beta)) < tol * step * L:
            beta = cand
            break
        beta = cand
    return beta


def fit_baseline(spec, kind, y, Z, diagnostics=None):
    """Fit b^(m) on one source by maximizing mean ell(y, b(Z)).

    Closed form for squared_error with linear_basis (normal equations,
    ridge 1e-8 retry on singularity) and krr; damped Newton for
    logistic/poisson; proximal gradient for lasso. k = 0 with an
    intercept reduces to the null model b = link(mean(y)).
    """
    y = np.asarray(y, dtype=float)
    warnings = []
    if spec.family == "mlp":
        raise UsageError("mlp baselines are not supported; use a linear family "
                         "or krr for g and b")
    if spec.family == "krr":
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        sigma = spec.hyper.get("sigma", 0.1)
        ridge = spec.hyper.get("ridge", 0.1)
        K = rbf_kernel(Z, Z, sigma)
        alpha = np.linalg.solve(K + len(y) * ridge * np.eye(len(y)), y)
        return FittedModel(spec, alpha, anchors=Z.copy(), warnings=warnings)

    Phi = design_matrix(spec, Z, None, diagnostics)
    if Phi.shape[1] == 0:
        return FittedModel(spec, np.zeros(0), warnings=warnings)
    if spec.family == "lasso":
        lam = spec.hyper.get("penalty", 0.0)
        beta = _ista_lasso(Phi, y, lam) if kind == "squared_error" else None
        if beta is None:
            raise UsageError("lasso baselines support squared_error only",
                             kind=kind)
        return FittedModel(spec, beta, warnings=warnings)
    if kind == "squared_error":
        A = Phi.T @ Phi
        b = Phi.T @ y
        try:
            beta = np.linalg.solve(A, b)
            if not np.all(np.isfinite(beta)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            warnings.append("singular normal equations; ridge 1e-8 retry")
            beta = np.linalg.solve(A + 1e-8 * np.eye(A.shape[0]), b)
        return FittedModel(spec, beta, warnings=warnings)
    beta = _newton_glm(kind, Phi, y, tol=1e-8)
    return FittedModel(spec, beta, warnings=warnings)


def fit_all_baselines(spec_b, kind, data, diagnostics=None):
    return [fit_baseline(spec_b, kind, s.y, s.Z, diagnostics) for s in data.sources]


def baseline_predictions(baselines, data, diagnostics=None):
    out = []
    for model, s in zip(baselines, data.sources):
        if model.spec.family == "krr":
            out.append(predict(model, s.Z, None, diagnostics))
        elif model.params.size:
            Phi = design_matrix(model.spec, s.Z, None, diagnostics)
            out.append(Phi @ model.params)
        else:
            out.append(np.zeros(s.n))
    return out
