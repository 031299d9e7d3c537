"""Independent ground-truth machinery for validating the saddle solver.

The linear squared-error game has a closed inner maximization: for
fixed weights q the best coefficient vector solves the q-mixed normal
equations, so the outer problem reduces to minimizing a convex function
of q alone. This module solves that reduced problem by projected
gradient plus grid polish, entirely apart from the two-timescale
solver, so the two routes can be compared against each other.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, UsageError
from .learners import baseline_predictions, bundle_predict, design_matrix
from .optimizer import project_simplex
from .rewards import empirical_reward
from .rng import derive_seed

FLATNESS_RANGE = 1e-8


@dataclass
class QuadraticReward:
    """Per-source second-moment pairs of a shared design.

    R_m(theta) = 2 theta' c_m - theta' A_m theta + offset_m, the exact
    squared-error reward gain over a fixed baseline. A_m must be
    symmetric positive semidefinite.
    """

    A: list
    c: list
    offsets: np.ndarray = None

    def __post_init__(self):
        self.A = [np.asarray(a, dtype=float) for a in self.A]
        self.c = [np.asarray(v, dtype=float).ravel() for v in self.c]
        if len(self.A) != len(self.c) or not self.A:
            raise UsageError("need matched non-empty A/c lists",
                             n_A=len(self.A), n_c=len(self.c))
        d = self.c[0].size
        for m, (a, v) in enumerate(zip(self.A, self.c)):
            if a.shape != (d, d) or v.size != d:
                raise UsageError("moment dimensions disagree", source=m)
            if not np.allclose(a, a.T, atol=1e-10):
                raise UsageError("A_m must be symmetric", source=m)
            if np.min(np.linalg.eigvalsh((a + a.T) / 2.0)) < -1e-8:
                raise UsageError("A_m must be positive semidefinite", source=m)
        if self.offsets is None:
            self.offsets = np.zeros(len(self.A))
        self.offsets = np.asarray(self.offsets, dtype=float).ravel()

    @property
    def M(self):
        return len(self.A)

    @property
    def d(self):
        return self.c[0].size

    def per_source_rewards(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.array([2.0 * theta @ cm - theta @ am @ theta + om
                         for am, cm, om in zip(self.A, self.c, self.offsets)])

    def value_at(self, q, theta):
        return float(np.asarray(q, float) @ self.per_source_rewards(theta))

    def inner_argmax(self, q):
        """theta*(q): solve the q-mixed normal equations.

        Singular mixtures (vertex q zeroes the inactive g blocks) fall
        back to the min-norm solution, valid whenever c-bar lies in the
        range of A-bar; otherwise the inner sup is infinite and the
        instance is rejected.
        """
        q = np.asarray(q, dtype=float)
        Abar = sum(qm * am for qm, am in zip(q, self.A))
        cbar = sum(qm * cm for qm, cm in zip(q, self.c))
        try:
            theta = np.linalg.solve(Abar, cbar)
            if np.all(np.isfinite(theta)):
                return theta
        except np.linalg.LinAlgError:
            pass
        theta, *_ = np.linalg.lstsq(Abar, cbar, rcond=None)
        scale = max(1.0, float(np.linalg.norm(cbar)))
        if np.linalg.norm(Abar @ theta - cbar) > 1e-8 * scale:
            raise NumericError("unbounded inner maximization in oracle",
                               q=np.round(q, 6).tolist())
        return theta

    def outer_value(self, q, delta=0.0):
        """lambda*(q) (+ optional ridge): the value after the inner max."""
        q = np.asarray(q, dtype=float)
        theta = self.inner_argmax(q)
        return self.value_at(q, theta) + delta * float(q @ q)

    def outer_grad(self, q, delta=0.0):
        # envelope theorem: d lambda*/dq_m is the per-source reward at
        # the inner optimum
        q = np.asarray(q, dtype=float)
        theta = self.inner_argmax(q)
        return self.per_source_rewards(theta) + 2.0 * delta * q


@dataclass
class OracleSolution:
    q_star: np.ndarray
    theta_star: np.ndarray
    value: float
    flat: bool
    iterations: int
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "q_star": np.asarray(self.q_star).tolist(),
            "theta_star": np.asarray(self.theta_star).tolist(),
            "value": self.value,
            "flat": self.flat,
            "iterations": self.iterations,
        }


def simplex_grid(M, resolution):
    """All simplex points with coordinates on a grid of the given spacing."""
    if M not in (2, 3):
        raise UsageError("grid search supports M in {2, 3}", M=M)
    N = int(round(1.0 / resolution))
    if M == 2:
        i = np.arange(N + 1)
        return np.column_stack([i / N, 1.0 - i / N])
    ii, jj = np.meshgrid(np.arange(N + 1), np.arange(N + 1), indexing="ij")
    mask = ii + jj <= N
    i, j = ii[mask], jj[mask]
    return np.column_stack([i / N, j / N, (N - i - j) / N])


def brute_force_simplex_min(value_fn, M, resolution):
    """Exhaustive grid minimization of value_fn over the simplex.

    value_fn may be vectorized (accepting an (G, M) array) or scalar;
    the vectorized path is tried first.
    """
    if resolution > 1e-2 + 1e-12:
        raise UsageError("grid resolution must be <= 1e-2",
                         resolution=resolution)
    Q = simplex_grid(M, resolution)
    vals = None
    try:
        out = np.asarray(value_fn(Q), dtype=float)
        if out.shape == (len(Q),):
            vals = out
    except Exception:
        vals = None
    if vals is None:
        vals = np.array([float(value_fn(q)) for q in Q])
    i = int(np.argmin(vals))
    return Q[i], float(vals[i])


def _local_grid_polish(moments, q0, delta, levels=(1e-2, 1e-3, 1e-4)):
    """Refine q by nested axis-pair grids of shrinking spacing."""
    M = moments.M
    q_best = np.asarray(q0, dtype=float)
    v_best = moments.outer_value(q_best, delta)
    for h in levels:
        offsets = np.arange(-10, 11) * h
        if M == 2:
            cand1 = np.clip(q_best[0] + offsets, 0.0, 1.0)
            Q = np.column_stack([cand1, 1.0 - cand1])
        else:
            a = np.clip(q_best[0] + offsets, 0.0, 1.0)
            b = np.clip(q_best[1] + offsets, 0.0, 1.0)
            aa, bb = np.meshgrid(a, b, indexing="ij")
            keep = aa + bb <= 1.0 + 1e-12
            Q = np.column_stack([aa[keep], bb[keep],
                                 np.maximum(1.0 - aa[keep] - bb[keep], 0.0)])
        for q in Q:
            v = moments.outer_value(q, delta)
            if v < v_best - 1e-15:
                v_best, q_best = v, q
    return q_best, v_best


def linear_l2_saddle_oracle(moments, delta=0.0, max_iter=20000, tol=1e-12):
    """Certified saddle of the linear squared-error game.

    Projected gradient on q with the exact inner solve at every step,
    then grid polish at spacing down to 1e-4 for M <= 3. The flatness
    flag marks outer objectives whose local grid range is below 1e-8,
    where q is not unique (duplicated sources).
    """
    M = moments.M
    q = np.full(M, 1.0 / M)
    value = moments.outer_value(q, delta)
    step = 1.0 / (1.0 + float(np.max(np.abs(moments.outer_grad(q, delta)))))
    it = 0
    for it in range(1, max_iter + 1):
        g = moments.outer_grad(q, delta)
        q_new = project_simplex(q - step * g)
        v_new = moments.outer_value(q_new, delta)
        if v_new <= value - 1e-16:
            q, value = q_new, v_new
            step *= 1.2
        else:
            step *= 0.5
            if step < 1e-14:
                break
        if np.max(np.abs(q - project_simplex(q - moments.outer_grad(q, delta)))) < tol:
            break
    if M <= 3:
        q, value = _local_grid_polish(moments, q, delta)
        flat = _flatness_probe(moments, q, delta)
    else:
        flat = _flatness_probe(moments, q, delta, spacing=1e-3)
    theta = moments.inner_argmax(q)
    return OracleSolution(q_star=q, theta_star=theta, value=float(value),
                          flat=bool(flat), iterations=it)


def _flatness_probe(moments, q, delta, spacing=1e-3):
    """Outer-objective range over a small simplex neighborhood of q."""
    M = moments.M
    vals = [moments.outer_value(q, delta)]
    for a in range(M):
        for b in range(M):
            if a == b:
                continue
            qq = q.copy()
            move = min(spacing, qq[a])
            if move <= 0:
                continue
            qq[a] -= move
            qq[b] += move
            vals.append(moments.outer_value(qq, delta))
    return (max(vals) - min(vals)) < FLATNESS_RANGE


def quadratic_moments_from_data(data, spec_f, spec_g, baselines, kind="squared_error"):
    """Empirical QuadraticReward of a dataset under a packed linear design.

    Mirrors the packed parameterization [theta_f | theta_g^1 .. theta_g^M]
    so oracle coefficients align with the solver's. Offsets carry the
    baseline term mean[(y - b)^2] - mean[y^2].
    """
    if kind != "squared_error":
        raise UsageError("closed-form moments exist only for squared_error")
    M = data.M
    blocks_f = [design_matrix(spec_f, s.X, s.Z) for s in data.sources]
    blocks_g = [design_matrix(spec_g, s.Z) for s in data.sources]
    pf = blocks_f[0].shape[1]
    pg = blocks_g[0].shape[1]
    d = pf + M * pg
    A, c, offs = [], [], []
    b_preds = baseline_predictions(baselines, data)
    for m, s in enumerate(data.sources):
        n = s.y.size
        Psi = np.zeros((n, d))
        Psi[:, :pf] = blocks_f[m]
        if pg:
            lo = pf + m * pg
            Psi[:, lo:lo + pg] = blocks_g[m]
        A.append(Psi.T @ Psi / n)
        c.append(Psi.T @ s.y / n)
        offs.append(float(np.mean((s.y - b_preds[m]) ** 2) - np.mean(s.y ** 2)))
    return QuadraticReward(A=A, c=c, offsets=np.asarray(offs))


def finite_diff_check(fn, point, step):
    """Worst relative error of analytic gradients vs central differences.

    fn(x) must return (value, gradient). Errors are scaled by
    max(1, ||gradient||_inf) at the point.
    """
    if not 1e-7 <= step <= 1e-3:
        raise UsageError("step must lie in [1e-7, 1e-3]", step=step)
    x = np.asarray(point, dtype=float).ravel()
    _, g = fn(x)
    g = np.asarray(g, dtype=float).ravel()
    scale = max(1.0, float(np.max(np.abs(g))) if g.size else 0.0)
    worst = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        vp, _ = fn(x + e)
        vm, _ = fn(x - e)
        fd = (vp - vm) / (2.0 * step)
        worst = max(worst, abs(fd - g[i]) / scale)
    return float(worst)


def minimax_gap_audit(saddle, data=None, kind=None, baselines=None):
    """Equilibrium certificate: spread of active per-source rewards.

    Returns max over sources with q_m > 1e-6 of (reward_m - q'reward).
    Near zero certifies that the weight player cannot improve. When
    data and baselines are supplied the rewards are recomputed from raw
    predictions rather than read off the stored breakdown.
    """
    if data is not None and baselines is not None:
        u_full = bundle_predict(saddle.bundle, data)
        u_base = baseline_predictions(baselines, data)
        _, breakdown = empirical_reward(kind, saddle.q_hat, u_full, u_base,
                                        [s.y for s in data.sources])
        r = breakdown.per_source_reward
    else:
        r = saddle.breakdown.per_source_reward
    q = np.asarray(saddle.q_hat, dtype=float)
    active = q > 1e-6
    value = float(q @ r)
    return float(np.max(r[active] - value))


@dataclass
class TruthEstimate:
    value: float
    mc_se: float
    per_rep: list

    def to_dict(self):
        return {"value": self.value, "mc_se": self.mc_se,
                "per_rep": list(self.per_rep)}


def monte_carlo_truth(generator, n_large, spec, seed=0, reps=5):
    """Large-sample estimate of the population maximin reward.

    Draws `reps` independent datasets of n_large rows per source, solves
    each saddle on the full draw (no cross-fitting), and reports the
    mean with its Monte Carlo standard error.
    """
    if n_large < 10 ** 5:
        raise UsageError("n_large must be at least 1e5", n_large=n_large)
    from .inference import _fit_and_eval_fold, _g_spec_for  # local: avoid cycle
    values = []
    for i in range(reps):
        data = generator(n_large, derive_seed(seed, i, stream=4))
        art = _fit_and_eval_fold(spec.loss_kind, spec, data, data, i,
                                 derive_seed(seed, i, stream=5))
        values.append(art.holdout_reward_value)
    values = np.asarray(values)
    se = float(np.std(values, ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0
    return TruthEstimate(value=float(np.mean(values)), mc_se=se,
                         per_rep=values.tolist())
