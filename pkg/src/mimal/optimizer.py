"""Two-timescale GDA for the empirical maximin problem.

The saddle objective is

    max_{theta_f, theta_g}  min_{q in simplex}
        sum_m q_m * mean_m [ ell(y, f + g^m) - ell(y, b^m) ]  + delta ||q||^2

solved by simultaneous ascent on the learner parameters and projected
descent on q, with the q step dominating:

    eta_q(t)  = a_q  / sqrt(1 + t/t0)
    eta_fg(t) = a_fg / (1 + t/t0)^(3/2)

Three practical devices sit on top of the raw schedule, all of which
leave the saddle fixed points unchanged:

  * a warm-start phase: backtracking ascent on the learner parameters
    at the initial q, so the slow timescale starts near its best
    response (for squared-error KRR the warm start is a closed-form
    ridge solve);
  * per-family preconditioning of the ascent direction (identity for
    parametric families, block-Lipschitz scaling for KRR, the final
    warm-start step for mlp), applied as a constant factor engine.kappa
    so the schedule invariants stay intact;
  * doubling-window tail averaging of (theta, q): the running mean is
    reset whenever t doubles, so it always spans [t/2, t].

Convergence is declared on the averaged candidate: both the simplex
optimality gap ||q - P(q - dir/s)||_inf and the (preconditioned)
parameter residual, normalized by s = max(1, |value|), must stay below
grad_tol for 25 consecutive iterations.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, OptimizerError, UsageError
from .learners import (FittedModel, ModelBundle, baseline_predictions,
                       bundle_predict, design_matrix, mlp_backprop,
                       mlp_forward, mlp_init, mlp_param_count, mlp_widths,
                       _f_inputs, rbf_kernel)
from .losses import loss_grad_u, loss_value
from .rewards import RewardBreakdown, empirical_reward
from .rng import make_rng


def check_simplex(q, tol=1e-12):
    q = np.asarray(q, dtype=float)
    if np.any(q < -tol) or abs(q.sum() - 1.0) > max(tol, 1e-12 * q.size):
        raise NumericError("not a simplex point", q=q.tolist())
    return q


def project_simplex(v):
    """Euclidean projection onto the probability simplex (sort-threshold)."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise NumericError("non-finite input to simplex projection")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, v.size + 1)
    k = j[u - (css - 1.0) / j > 0][-1]
    tau = (css[k - 1] - 1.0) / k
    return np.maximum(v - tau, 0.0)


def q_ascent_direction(breakdown, q, delta):
    """Gradient in q of R(q, .) + delta ||q||^2: per-source rewards + 2 delta q.

    The minimizing player applies it as q <- P(q - eta_q * direction).
    """
    r = breakdown.per_source_reward if isinstance(breakdown, RewardBreakdown) \
        else np.asarray(breakdown, dtype=float)
    return r + 2.0 * float(delta) * np.asarray(q, dtype=float)


@dataclass
class OptimizerSchedule:
    """Step-size schedule and stopping rule for one saddle solve.

    a_fg <= a_q keeps the q timescale dominant for every t (the decay
    exponents 1/2 vs 3/2 preserve eta_fg ~ eta_q^3 up to constants).
    warm_iters bounds the warm-start phase; consecutive is the number
    of iterations the stationarity conditions must hold; checks run
    every check_every iterations on the averaged candidate. minibatch
    (rows per source, 0 = full batch) only affects mlp solves.
    """

    T: int = 5000
    a_q: float = 0.1
    a_fg: float = 0.05
    t0: float = 200.0
    grad_tol: float = 1e-6
    ridge_delta: float = 0.0
    q_init: np.ndarray = None
    warm_iters: int = 300
    consecutive: int = 25
    check_every: int = 1
    minibatch: int = 0

    def __post_init__(self):
        if self.T < 1:
            raise UsageError("schedule needs T >= 1", T=self.T)
        if self.a_q <= 0 or self.a_fg <= 0 or self.t0 <= 0:
            raise UsageError("schedule constants must be positive")
        if self.a_fg > self.a_q + 1e-15:
            raise UsageError("timescale separation requires a_fg <= a_q",
                             a_q=self.a_q, a_fg=self.a_fg)
        if self.ridge_delta < 0:
            raise UsageError("ridge_delta must be >= 0")

    def eta_q(self, t):
        return self.a_q / np.sqrt(1.0 + t / self.t0)

    def eta_fg(self, t):
        return self.a_fg / (1.0 + t / self.t0) ** 1.5

    def to_dict(self):
        d = {
            "T": self.T, "a_q": self.a_q, "a_fg": self.a_fg, "t0": self.t0,
            "grad_tol": self.grad_tol, "ridge_delta": self.ridge_delta,
            "warm_iters": self.warm_iters, "consecutive": self.consecutive,
            "check_every": self.check_every, "minibatch": self.minibatch,
        }
        if self.q_init is not None:
            d["q_init"] = np.asarray(self.q_init, dtype=float).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "q_init" in d and d["q_init"] is not None:
            d["q_init"] = np.asarray(d["q_init"], dtype=float)
        return cls(**d)


def default_schedule(family, **overrides):
    """Per-family defaults: parametric solves are tighter than krr/mlp."""
    if family in ("linear_basis", "lasso"):
        base = dict(T=5000, a_q=0.1, a_fg=0.05, t0=200.0, grad_tol=1e-6,
                    warm_iters=300, check_every=1)
    elif family == "krr":
        base = dict(T=5000, a_q=0.1, a_fg=0.1, t0=200.0, grad_tol=1e-4,
                    warm_iters=300, check_every=5)
    elif family == "mlp":
        base = dict(T=5000, a_q=0.1, a_fg=0.1, t0=200.0, grad_tol=1e-4,
                    warm_iters=300, check_every=10)
    else:
        raise UsageError(f"unknown family {family!r}")
    base.update(overrides)
    return OptimizerSchedule(**base)


@dataclass
class SaddlePoint:
    q_hat: np.ndarray
    bundle: ModelBundle
    reward_at_solution: float
    iterations_used: int
    converged: bool
    trajectory_summary: list
    breakdown: RewardBreakdown
    diagnostics: dict = field(default_factory=dict)
    trajectory: list = None


# ---------------------------------------------------------------------------
# Family engines: flat parameter vector + preconditioned ascent directions


class _ParametricEngine:
    """linear_basis / lasso families, any loss; moment fast path for l2.

    For squared_error the per-source reward and gradient reduce to the
    sufficient statistics A_m = Psi_m' Psi_m / n_m, c_m = Psi_m' y / n_m
    where Psi_m is the packed design [Phi_f | 0 .. Phi_g^m .. 0]; the
    row-wise and moment computations agree to machine precision and the
    moment path makes each iteration O(P^2) instead of O(n P).
    """

    kappa = 1.0

    def __init__(self, kind, data, spec_f, spec_g, baselines, diagnostics):
        self.kind = kind
        self.data = data
        self.spec_f = spec_f
        self.spec_g = spec_g
        self.M = data.M
        self.Phi_f = [design_matrix(spec_f, s.X, s.Z, diagnostics)
                      for s in data.sources]
        self.Phi_g = [design_matrix(spec_g, s.Z, None, diagnostics)
                      for s in data.sources]
        self.pf = self.Phi_f[0].shape[1]
        self.pg = self.Phi_g[0].shape[1]
        self.P = self.pf + self.M * self.pg
        self.ns = data.n_per_source.astype(float)
        b_pred = baseline_predictions(baselines, data, diagnostics)
        self.base_mean = np.array([
            float(np.mean(loss_value(kind, s.y, b)))
            for s, b in zip(data.sources, b_pred)])
        self.lasso_lam = spec_f.hyper.get("penalty", 0.0) \
            if spec_f.family == "lasso" else 0.0
        self.moment = kind == "squared_error"
        if self.moment:
            self.A = np.zeros((self.M, self.P, self.P))
            self.c = np.zeros((self.M, self.P))
            self.offs = np.zeros(self.M)
            for m, s in enumerate(data.sources):
                Psi = self._packed_design(m)
                self.A[m] = Psi.T @ Psi / s.n
                self.c[m] = Psi.T @ s.y / s.n
                self.offs[m] = float(np.mean((s.y - b_pred[m]) ** 2)
                                     - np.mean(s.y ** 2))

    def _packed_design(self, m):
        n = self.data.sources[m].n
        Psi = np.zeros((n, self.P))
        Psi[:, :self.pf] = self.Phi_f[m]
        if self.pg:
            j = self.pf + m * self.pg
            Psi[:, j:j + self.pg] = self.Phi_g[m]
        return Psi

    def init_state(self, seed):
        return np.zeros(self.P)

    def rewards_dirs(self, theta, q):
        if self.moment:
            r = np.empty(self.M)
            g = np.zeros(self.P)
            for m in range(self.M):
                Ath = self.A[m] @ theta
                r[m] = 2.0 * theta @ self.c[m] - theta @ Ath + self.offs[m]
                g += q[m] * 2.0 * (self.c[m] - Ath)
            return r, g
        r = np.empty(self.M)
        g = np.zeros(self.P)
        for m, s in enumerate(self.data.sources):
            u = self.Phi_f[m] @ theta[:self.pf]
            if self.pg:
                j = self.pf + m * self.pg
                u = u + self.Phi_g[m] @ theta[j:j + self.pg]
            r[m] = float(np.mean(loss_value(self.kind, s.y, u))) - self.base_mean[m]
            w = (q[m] / s.n) * loss_grad_u(self.kind, s.y, u)
            g[:self.pf] += self.Phi_f[m].T @ w
            if self.pg:
                g[j:j + self.pg] += self.Phi_g[m].T @ w
        return r, g

    def objective(self, theta, q):
        r, _ = self.rewards_dirs(theta, q)
        val = float(q @ r)
        if self.lasso_lam:
            val -= self.lasso_lam * float(np.abs(theta[:self.pf]).sum())
        return val

    def apply_step(self, theta, dirs, step):
        theta = theta + step * dirs
        if self.lasso_lam:
            thr = step * self.lasso_lam
            f = theta[:self.pf]
            theta[:self.pf] = np.sign(f) * np.maximum(np.abs(f) - thr, 0.0)
        return theta

    def resid_norm(self, theta, grad):
        """Stationarity residual; prox residual at unit step for lasso."""
        if not self.lasso_lam:
            return float(np.max(np.abs(grad))) if grad.size else 0.0
        f = theta[:self.pf] + grad[:self.pf]
        f = np.sign(f) * np.maximum(np.abs(f) - self.lasso_lam, 0.0)
        rf = np.max(np.abs(theta[:self.pf] - f)) if self.pf else 0.0
        rest = np.max(np.abs(grad[self.pf:])) if self.P > self.pf else 0.0
        return float(max(rf, rest))

    def make_bundle(self, theta):
        f = FittedModel(self.spec_f, theta[:self.pf])
        g = []
        for m in range(self.M):
            j = self.pf + m * self.pg
            g.append(FittedModel(self.spec_g, theta[j:j + self.pg]))
        return ModelBundle(f, g)


def _power_lmax(matvec, n, iters=30, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = matvec(v)
        lam = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return abs(lam)


class _KrrEngine:
    """RBF kernel ridge f in dual form plus linear g blocks.

    State is [alpha (N), theta_g (M blocks)]. The alpha direction is the
    preconditioned residual D ell'(y, u) - 2 omega alpha (one factor of
    the PD Gram dropped from the exact gradient K (D ell' - 2 omega a)),
    which shares its zero set with the exact gradient and costs one Gram
    matvec per iteration. Blocks are scaled by Lipschitz estimates from
    a power iteration on K and the g Grams.
    """

    def __init__(self, kind, data, spec_f, spec_g, baselines, diagnostics):
        self.kind = kind
        self.data = data
        self.spec_f = spec_f
        self.spec_g = spec_g
        self.M = data.M
        self.sigma = spec_f.hyper.get("sigma", 0.1)
        self.omega = spec_f.hyper.get("ridge", 0.1)
        self.anchors = np.vstack([s.X for s in data.sources])
        self.N = self.anchors.shape[0]
        self.K = rbf_kernel(self.anchors, self.anchors, self.sigma)
        ends = np.cumsum(data.n_per_source)
        self.idx = [slice(e - n, e) for e, n in zip(ends, data.n_per_source)]
        self.Phi_g = [design_matrix(spec_g, s.Z, None, diagnostics)
                      for s in data.sources]
        self.pg = self.Phi_g[0].shape[1]
        self.P = self.N + self.M * self.pg
        self.ns = data.n_per_source.astype(float)
        b_pred = baseline_predictions(baselines, data, diagnostics)
        self.base_mean = np.array([
            float(np.mean(loss_value(kind, s.y, b)))
            for s, b in zip(data.sources, b_pred)])
        curv = {"squared_error": 2.0, "logistic": 0.25, "poisson": 2.0}[kind]
        lmax_K = _power_lmax(lambda v: self.K @ v, self.N)
        self.Lf = curv * (lmax_K / self.ns.min()) + 2.0 * self.omega
        self.Lg = np.array([
            max(curv * np.linalg.eigvalsh(G.T @ G / n).max(), 1e-12)
            if self.pg else 1.0
            for G, n in zip(self.Phi_g, self.ns)])
        self.kappa = 8.0

    def init_state(self, seed):
        return np.zeros(self.P)

    def _predictions(self, theta):
        u_f = self.K @ theta[:self.N]
        us = []
        for m in range(self.M):
            u = u_f[self.idx[m]]
            if self.pg:
                j = self.N + m * self.pg
                u = u + self.Phi_g[m] @ theta[j:j + self.pg]
            us.append(u)
        return us

    def rewards_dirs(self, theta, q):
        us = self._predictions(theta)
        r = np.empty(self.M)
        d = np.zeros(self.P)
        for m, s in enumerate(self.data.sources):
            r[m] = float(np.mean(loss_value(self.kind, s.y, us[m]))) \
                - self.base_mean[m]
            w = (q[m] / s.n) * loss_grad_u(self.kind, s.y, us[m])
            d[:self.N][self.idx[m]] = w
            if self.pg:
                j = self.N + m * self.pg
                d[j:j + self.pg] = (self.Phi_g[m].T @ w) / self.Lg[m]
        d[:self.N] = (d[:self.N] - 2.0 * self.omega * theta[:self.N]) / self.Lf
        return r, d

    def objective(self, theta, q):
        us = self._predictions(theta)
        val = sum(q[m] * (float(np.mean(loss_value(self.kind, s.y, us[m])))
                          - self.base_mean[m])
                  for m, s in enumerate(self.data.sources))
        alpha = theta[:self.N]
        return float(val - self.omega * alpha @ self.K @ alpha)

    def apply_step(self, theta, dirs, step):
        return theta + step * dirs

    def resid_norm(self, theta, dirs):
        # dirs are already the preconditioned residuals; undo the block
        # scaling so the tolerance retains gradient units
        rn = np.max(np.abs(dirs[:self.N])) * self.Lf if self.N else 0.0
        if self.pg:
            for m in range(self.M):
                j = self.N + m * self.pg
                rn = max(rn, np.max(np.abs(dirs[j:j + self.pg])) * self.Lg[m])
        return float(rn)

    def closed_form_warm(self, theta, q):
        """Exact joint ridge solve at fixed q for squared_error."""
        alpha = theta[:self.N].copy()
        thg = [theta[self.N + m * self.pg: self.N + (m + 1) * self.pg].copy()
               for m in range(self.M)]
        dvec = np.concatenate([np.full(s.n, q[m] / s.n)
                               for m, s in enumerate(self.data.sources)])
        Dh = np.sqrt(dvec)
        ys = [s.y for s in self.data.sources]
        for _ in range(2 if self.pg else 1):
            u_f = self.K @ alpha
            if self.pg:
                thg = [np.linalg.lstsq(self.Phi_g[m], ys[m] - u_f[self.idx[m]],
                                       rcond=None)[0] for m in range(self.M)]
            resid = np.concatenate([
                ys[m] - (self.Phi_g[m] @ thg[m] if self.pg else 0.0)
                for m in range(self.M)])
            S = (Dh[:, None] * self.K) * Dh[None, :]
            S[np.diag_indices(self.N)] += self.omega
            alpha = Dh * np.linalg.solve(S, Dh * resid)
        out = np.concatenate([alpha] + [t for t in thg]) if self.pg \
            else alpha
        return out

    def make_bundle(self, theta):
        f = FittedModel(self.spec_f, theta[:self.N], anchors=self.anchors.copy())
        g = []
        for m in range(self.M):
            j = self.N + m * self.pg
            g.append(FittedModel(self.spec_g, theta[j:j + self.pg]))
        return ModelBundle(f, g)


class _MlpEngine:
    """Dense net f trained by backprop, identity output in the objective."""

    def __init__(self, kind, data, spec_f, spec_g, baselines, diagnostics,
                 seed, minibatch):
        self.kind = kind
        self.data = data
        self.spec_f = spec_f
        self.spec_g = spec_g
        self.M = data.M
        widths = mlp_widths(spec_f)
        if widths[0] != data.p + data.k:
            raise UsageError("mlp input width must equal p + k",
                             width=widths[0], p=data.p, k=data.k)
        self.n_net = mlp_param_count(widths)
        self.Phi_g = [design_matrix(spec_g, s.Z, None, diagnostics)
                      for s in data.sources]
        self.pg = self.Phi_g[0].shape[1]
        self.P = self.n_net + self.M * self.pg
        self.inputs = [_f_inputs(s.X, s.Z) for s in data.sources]
        b_pred = baseline_predictions(baselines, data, diagnostics)
        self.base_mean = np.array([
            float(np.mean(loss_value(kind, s.y, b)))
            for s, b in zip(data.sources, b_pred)])
        self.init_seed = spec_f.hyper.get("init_seed", None)
        self.solve_seed = seed
        self.kappa = 1.0
        self.minibatch = int(minibatch)
        self.batch_rng = make_rng(seed ^ 0x5bd1e995)

    def init_state(self, seed):
        net = mlp_init(self.spec_f,
                       self.init_seed if self.init_seed is not None else seed)
        return np.concatenate([net, np.zeros(self.M * self.pg)])

    def _source_terms(self, theta, m, rows=None):
        A = self.inputs[m]
        y = self.data.sources[m].y
        G = self.Phi_g[m]
        if rows is not None:
            A, y = A[rows], y[rows]
            G = G[rows] if self.pg else G
        u, cache = mlp_forward(self.spec_f, theta[:self.n_net], A,
                               output="identity")
        if self.pg:
            j = self.n_net + m * self.pg
            u = u + G @ theta[j:j + self.pg]
        return u, cache, y, G

    def rewards_dirs(self, theta, q, rows_per_source=None):
        r = np.empty(self.M)
        d = np.zeros(self.P)
        for m in range(self.M):
            rows = None if rows_per_source is None else rows_per_source[m]
            u, cache, y, G = self._source_terms(theta, m, rows)
            r[m] = float(np.mean(loss_value(self.kind, y, u))) - self.base_mean[m]
            w = (q[m] / y.size) * loss_grad_u(self.kind, y, u)
            d[:self.n_net] += mlp_backprop(self.spec_f, theta[:self.n_net],
                                           cache, w)
            if self.pg:
                j = self.n_net + m * self.pg
                d[j:j + self.pg] = G.T @ w
        return r, d

    def sample_rows(self):
        if self.minibatch <= 0:
            return None
        return [self.batch_rng.choice(s.n, size=min(self.minibatch, s.n),
                                      replace=False)
                for s in self.data.sources]

    def objective(self, theta, q):
        r, _ = self.rewards_dirs(theta, q)
        return float(q @ r)

    def apply_step(self, theta, dirs, step):
        return theta + step * dirs

    def resid_norm(self, theta, dirs):
        return float(np.max(np.abs(dirs))) if dirs.size else 0.0

    def make_bundle(self, theta):
        f = FittedModel(self.spec_f, theta[:self.n_net])
        g = []
        for m in range(self.M):
            j = self.n_net + m * self.pg
            g.append(FittedModel(self.spec_g, theta[j:j + self.pg]))
        return ModelBundle(f, g)


def _build_engine(kind, data, spec_f, spec_g, baselines, diagnostics, seed,
                  schedule):
    if spec_f.family in ("linear_basis", "lasso"):
        return _ParametricEngine(kind, data, spec_f, spec_g, baselines,
                                 diagnostics)
    if spec_f.family == "krr":
        return _KrrEngine(kind, data, spec_f, spec_g, baselines, diagnostics)
    return _MlpEngine(kind, data, spec_f, spec_g, baselines, diagnostics,
                      seed, schedule.minibatch)


def _warm_start(engine, theta, q, schedule):
    """Backtracking ascent on the learner parameters at fixed q.

    Returns (theta, final_step). The step grows 1.26x after each accepted
    iterate so it settles near the largest stable value, which the mlp
    engine reuses to scale its TTUR direction.
    """
    if schedule.warm_iters <= 0:
        return theta, 0.5
    if isinstance(engine, _KrrEngine) and engine.kind == "squared_error":
        return engine.closed_form_warm(theta, q), 0.5
    step = 0.5
    J = engine.objective(theta, q)
    for _ in range(schedule.warm_iters):
        _, d = engine.rewards_dirs(theta, q)
        if not np.all(np.isfinite(d)):
            raise OptimizerError("non-finite warm-start direction")
        accepted = theta
        while step > 1e-12:
            cand = engine.apply_step(theta.copy(), d, step)
            Jc = engine.objective(cand, q)
            if np.isfinite(Jc) and Jc >= J - 1e-12:
                accepted, J = cand, Jc
                break
            step *= 0.5
        if accepted is theta:
            break
        theta = accepted
        step = min(step * 1.26, 1e6)
        if np.max(np.abs(d)) < 1e-11:
            break
    return theta, step


def solve_saddle(kind, data, specs, schedule, baselines, seed=0,
                 record_trajectory=False):
    """Run warm start + TTUR-GDA and return the averaged saddle candidate.

    specs is the (learner_f, learner_g) pair. baselines must already be
    fitted on the same training rows. Deterministic given seed.
    """
    spec_f, spec_g = (specs.learner_f, specs.learner_g) \
        if hasattr(specs, "learner_f") else specs
    diagnostics = {}
    engine = _build_engine(kind, data, spec_f, spec_g, baselines, diagnostics,
                           seed, schedule)
    M = data.M
    delta = float(schedule.ridge_delta)
    q = np.ones(M) / M if schedule.q_init is None \
        else check_simplex(schedule.q_init).copy()
    theta = engine.init_state(seed)

    theta, warm_step = _warm_start(engine, theta, q, schedule)
    if isinstance(engine, _MlpEngine):
        engine.kappa = float(np.clip(10.0 * warm_step, 1e-3, 1e3))
    diagnostics["warm_step"] = warm_step

    q_sum = q.copy()
    th_sum = theta.copy()
    cnt = 1
    t_restart = 1
    need = max(1, int(np.ceil(schedule.consecutive / schedule.check_every)))
    streak = 0
    converged = False
    summary = []
    trajectory = [] if record_trajectory else None
    t = 0
    for t in range(1, schedule.T + 1):
        eq = schedule.eta_q(t)
        ef = schedule.eta_fg(t) * engine.kappa
        rows = engine.sample_rows() if isinstance(engine, _MlpEngine) else None
        if rows is None:
            r, d = engine.rewards_dirs(theta, q)
        else:
            r, d = engine.rewards_dirs(theta, q, rows)
        val = float(q @ r)
        if not np.isfinite(val) or abs(val) > 1e12:
            raise OptimizerError("saddle solve diverged", iteration=t,
                                 value=val, summary=summary[-3:])
        theta = engine.apply_step(theta, d, ef)
        q = project_simplex(q - eq * q_ascent_direction(r, q, delta))

        q_sum += q
        th_sum += theta
        cnt += 1
        if t == 2 * t_restart:
            t_restart = t
            q_sum = q.copy()
            th_sum = theta.copy()
            cnt = 1

        if t % schedule.check_every == 0:
            qa = q_sum / cnt
            tha = th_sum / cnt
            ra, da = engine.rewards_dirs(tha, qa)
            va = float(qa @ ra)
            if not np.all(np.isfinite(tha)) or not np.isfinite(va):
                raise OptimizerError("saddle solve diverged", iteration=t,
                                     value=va, summary=summary[-3:])
            s = max(1.0, abs(va))
            qgap = float(np.max(np.abs(
                qa - project_simplex(qa - q_ascent_direction(ra, qa, delta) / s))))
            resid = engine.resid_norm(tha, da) / s
            summary.append({"iteration": t, "q_gap": qgap, "grad_norm": resid})
            if len(summary) > 25:
                summary.pop(0)
            if record_trajectory:
                trajectory.append((t, va + delta * float(qa @ qa), qa.copy()))
            if qgap < schedule.grad_tol and resid < schedule.grad_tol:
                streak += 1
                if streak >= need:
                    converged = True
                    break
            else:
                streak = 0

    q_hat = q_sum / cnt
    theta_hat = th_sum / cnt
    bundle = engine.make_bundle(theta_hat)

    # reward recomputed through the public prediction path; this is the
    # value the SaddlePoint reports (plus the q-ridge when delta > 0)
    us = bundle_predict(bundle, data, diagnostics)
    b_pred = baseline_predictions(baselines, data, diagnostics)
    raw, breakdown = empirical_reward(kind, q_hat, us, b_pred,
                                      [s.y for s in data.sources])
    value = raw + delta * float(q_hat @ q_hat)
    engine_r, _ = engine.rewards_dirs(theta_hat, q_hat)
    if abs(float(q_hat @ engine_r) - raw) > 1e-8 * max(1.0, abs(raw)):
        raise NumericError("engine/prediction reward mismatch",
                           engine=float(q_hat @ engine_r), recomputed=raw)

    if np.any(q_hat < 1e-4):
        diagnostics["q_boundary"] = [int(i) for i in np.where(q_hat < 1e-4)[0]]
    return SaddlePoint(
        q_hat=q_hat, bundle=bundle, reward_at_solution=value,
        iterations_used=t, converged=converged, trajectory_summary=summary,
        breakdown=breakdown, diagnostics=diagnostics, trajectory=trajectory,
    )


def trajectory_csv(saddle, path):
    """Dump a recorded trajectory as CSV (iteration, reward, q components)."""
    import csv

    if saddle.trajectory is None:
        raise UsageError("solve was run without record_trajectory")
    M = saddle.q_hat.size
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "reward"] + [f"q_{m + 1}" for m in range(M)])
        for t, val, qa in saddle.trajectory:
            writer.writerow([t, repr(float(val))] + [repr(float(x)) for x in qa])
    return path
