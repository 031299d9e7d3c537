"""Per-observation objectives ell(y, u) and their u-derivatives.

The reward maximized by the saddle solver averages differences
ell(y, u_full) - ell(y, u_base), so each loss is a log-likelihood-style
quantity that is larger when the fit is better:

    squared_error  ell(y, u) = -(y - u)^2
    logistic       ell(y, u) = y*u - log(1 + e^u),  y in {0, 1}
    poisson        ell(y, u) = y*u - e^u,           y >= 0 (log link)

The poisson form drops the log(y!) term, which cancels in every reward
difference. All functions accept scalars or numpy arrays.
"""

import numpy as np

from .errors import InputError

LOSS_KINDS = ("squared_error", "logistic", "poisson")

# exp() overflows past ~709; poisson linear predictors beyond this are
# clamped so that a diverging iterate yields a huge finite penalty
# instead of an inf that would poison the whole gradient.
_EXP_CLAMP = 700.0


def _check_kind(kind):
    if kind not in LOSS_KINDS:
        raise InputError(f"unknown loss kind {kind!r}", expected=LOSS_KINDS)


def _check_domain(kind, y):
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise InputError("non-finite outcome", kind=kind)
    if kind == "logistic":
        if not np.all((y == 0.0) | (y == 1.0)):
            raise InputError("logistic outcomes must be coded 0/1", kind=kind)
    elif kind == "poisson":
        if np.any(y < 0.0):
            raise InputError("poisson outcomes must be nonnegative", kind=kind)
    return y


def _log1pexp(u):
    # log(1 + e^u) = max(u, 0) + log1p(e^{-|u|}), stable for |u| ~ 700
    return np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))


def loss_value(kind, y, u):
    """ell(y, u) elementwise; returns a scalar for scalar inputs."""
    _check_kind(kind)
    y = _check_domain(kind, y)
    u = np.asarray(u, dtype=float)
    if kind == "squared_error":
        out = -((y - u) ** 2)
    elif kind == "logistic":
        out = y * u - _log1pexp(u)
    else:
        out = y * u - np.exp(np.minimum(u, _EXP_CLAMP))
    return out if out.ndim else float(out)


def loss_grad_u(kind, y, u):
    """d ell / d u elementwise."""
    _check_kind(kind)
    y = _check_domain(kind, y)
    u = np.asarray(u, dtype=float)
    if kind == "squared_error":
        out = 2.0 * (y - u)
    elif kind == "logistic":
        # sigmoid via tanh keeps both tails accurate
        out = y - 0.5 * (1.0 + np.tanh(0.5 * u))
    else:
        out = y - np.exp(np.minimum(u, _EXP_CLAMP))
    return out if out.ndim else float(out)


def baseline_link(kind, ybar):
    """Intercept-only maximizer of mean ell(y, c): the canonical link at ybar."""
    _check_kind(kind)
    ybar = float(ybar)
    if kind == "squared_error":
        return ybar
    eps = 1e-12
    ybar = min(max(ybar, eps), 1.0 - eps) if kind == "logistic" else max(ybar, eps)
    if kind == "logistic":
        return float(np.log(ybar / (1.0 - ybar)))
    return float(np.log(ybar))
