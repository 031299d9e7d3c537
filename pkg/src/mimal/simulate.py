"""Simulation scenarios and replication studies with coverage accounting.

Six registered generators: lasso regression on 50 uniform covariates,
kernel ridge with baseline covariates, a small classification net,
an exactly-null linear design, and logistic/Poisson variants that
exercise the GLM and spline code paths. Replications are seeded per
index so studies are resumable and order-independent.
"""

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ProblemSpec
from .data import MultiSourceDataset, SourceDataset
from .errors import DataError, UsageError
from .inference import estimate_importance
from .learners import LearnerSpec
from .rng import derive_seed, make_rng

SIM1_THETA = np.array([
    [5.78, -4.45, 1.26, 1.58, -1.14],
    [2.26, -1.05, 5.78, 6.43, -1.26],
    [1.83, -2.35, 1.34, 2.59, -6.45],
])

SIM2_THETA = np.array([[0.9, 0.3, 0.3], [0.3, 0.9, 0.3], [0.3, 0.3, 0.9]])
SIM2_GAMMA = np.array([[0.4, 0.3], [-0.3, 0.2], [0.0, 0.0]])

SIM3_THETA = np.array([[0.2, 0.6, 0.6], [0.6, 0.2, 0.6], [0.6, 0.6, 0.2]])
SIM3_INIT_SEED = 20260815

SIM4_THETA = np.array([[1.0, 1.0, 1.0, 1.0], [-1.0, -1.0, -1.0, -1.0]])
SIM4_GAMMA = np.array([[0.4, 0.3], [-0.3, 0.2]])

SIM5_THETA = np.array([[0.8, -0.5, 0.3], [0.3, -0.8, 0.5]])
SIM5_GAMMA = np.array([[0.2, 0.4], [-0.2, 0.3]])  # per source: intercept, slope

SIM6_GAMMA = np.array([[0.3, 0.4], [0.1, -0.3]])


def _sim1_generate(n, seed):
    rng = make_rng(seed)
    theta = np.zeros((3, 50))
    theta[:, :5] = SIM1_THETA
    sources = []
    for m in range(3):
        X = rng.uniform(-3.0, 3.0, size=(n, 50))
        y = X @ theta[m] + rng.standard_normal(n)
        sources.append(SourceDataset(source_id=m, y=y, X=X, Z=np.empty((n, 0))))
    return MultiSourceDataset(sources=sources)


def _sim2_generate(n, seed):
    rng = make_rng(seed)
    sources = []
    for m in range(3):
        X = rng.uniform(-3.0, 3.0, size=(n, 3))
        Z = rng.uniform(-3.0, 3.0, size=(n, 2))
        y = X @ SIM2_THETA[m] + Z @ SIM2_GAMMA[m] + 0.5 * rng.standard_normal(n)
        sources.append(SourceDataset(source_id=m, y=y, X=X, Z=Z))
    return MultiSourceDataset(sources=sources)


def _sim3_generate(n, seed):
    rng = make_rng(seed)
    sources = []
    for m in range(3):
        X = rng.uniform(-2.0, 2.0, size=(n, 3))
        p = 1.0 / (1.0 + np.exp(-(X ** 3) @ SIM3_THETA[m]))
        y = rng.binomial(1, p).astype(float)
        sources.append(SourceDataset(source_id=m, y=y, X=X, Z=np.empty((n, 0))))
    return MultiSourceDataset(sources=sources)


def _sim4_generate(n, seed):
    rng = make_rng(seed)
    sources = []
    for m in range(2):
        W = rng.uniform(-3.0, 3.0, size=(n, 6))
        X, Z = W[:, :4], W[:, 4:]
        y = X @ SIM4_THETA[m] + Z @ SIM4_GAMMA[m] + rng.standard_normal(n)
        sources.append(SourceDataset(source_id=m, y=y, X=X, Z=Z))
    return MultiSourceDataset(sources=sources)


def _sim5_generate(n, seed):
    rng = make_rng(seed)
    sources = []
    for m in range(2):
        X = rng.uniform(-2.0, 2.0, size=(n, 3))
        Z = rng.uniform(-2.0, 2.0, size=(n, 1))
        logit = X @ SIM5_THETA[m] + SIM5_GAMMA[m, 0] + Z[:, 0] * SIM5_GAMMA[m, 1]
        y = rng.binomial(1, 1.0 / (1.0 + np.exp(-logit))).astype(float)
        sources.append(SourceDataset(source_id=m, y=y, X=X, Z=Z))
    return MultiSourceDataset(sources=sources)


def _sim6_signal(m, x):
    if m == 0:
        return 0.9 * np.sin(1.3 * x)
    return 0.9 * np.sin(1.3 * (x - 0.4))


def _sim6_generate(n, seed):
    rng = make_rng(seed)
    sources = []
    for m in range(2):
        X = rng.uniform(-2.0, 2.0, size=(n, 1))
        Z = rng.uniform(-1.0, 1.0, size=(n, 1))
        eta = _sim6_signal(m, X[:, 0]) + SIM6_GAMMA[m, 0] + Z[:, 0] * SIM6_GAMMA[m, 1]
        y = rng.poisson(np.exp(eta)).astype(float)
        sources.append(SourceDataset(source_id=m, y=y, X=X, Z=Z))
    return MultiSourceDataset(sources=sources)


def _linear_spec(**kw):
    return ProblemSpec(
        loss_kind=kw.pop("loss_kind", "squared_error"),
        learner_f=LearnerSpec(family="linear_basis", basis="identity",
                              include_intercept=False),
        learner_g=LearnerSpec(family="linear_basis", basis="identity",
                              include_intercept=True),
        **kw)


def _sim1_spec(n1=800):
    return ProblemSpec(
        loss_kind="squared_error",
        learner_f=LearnerSpec(family="lasso", basis="identity",
                              hyper={"penalty": 1.0 / n1}),
        learner_g=LearnerSpec(family="linear_basis", basis="identity",
                              include_intercept=True),
        cross_fit=False)


def _sim2_spec(n1=600):
    return ProblemSpec(
        loss_kind="squared_error",
        learner_f=LearnerSpec(family="krr",
                              hyper={"sigma": 0.1, "ridge": 1.0 / (10 * n1)}),
        learner_g=LearnerSpec(family="linear_basis", basis="identity",
                              include_intercept=True),
        K=5, cross_fit=True)


def _sim3_spec(n1=700):
    return ProblemSpec(
        loss_kind="logistic",
        learner_f=LearnerSpec(family="mlp",
                              hyper={"widths": [3, 6, 4, 1], "output": "sigmoid",
                                     "init_seed": SIM3_INIT_SEED}),
        learner_g=LearnerSpec(family="linear_basis", basis="identity",
                              include_intercept=True),
        K=5, cross_fit=True)


def _sim4_spec(n1=2000):
    return _linear_spec(K=10, cross_fit=True)


def _sim5_spec(n1=1000):
    return _linear_spec(loss_kind="logistic", K=5, cross_fit=True)


def _sim6_spec(n1=1200):
    return ProblemSpec(
        loss_kind="poisson",
        learner_f=LearnerSpec(family="linear_basis", basis="cubic_bspline",
                              include_intercept=False),
        learner_g=LearnerSpec(family="linear_basis", basis="identity",
                              include_intercept=True),
        K=5, cross_fit=True)


@dataclass
class SimulationScenario:
    """One registered generator with its estimation recipe and truth.

    truth_value is the coverage target: the exact population value where
    it has a closed form, otherwise a cached large-sample estimate whose
    Monte Carlo SE is recorded alongside. canonical marks the core
    validation scenarios; the extra loss-menu scenarios are flagged False.
    """

    id: str
    M: int
    n_per_source: int
    loss_kind: str
    generate: callable
    make_spec: callable
    truth_value: float
    truth_source: str
    truth_mc_se: float = 0.0
    truth_q: list = None
    truth_theta: list = None
    canonical: bool = True
    truth_spec: callable = None

    def spec(self, **overrides):
        base = self.make_spec(self.n_per_source)
        if not overrides:
            return base
        d = base.to_dict()
        for key, val in overrides.items():
            if key not in d:
                raise UsageError("unknown spec override", key=key)
            d[key] = val
        return ProblemSpec.from_dict(d)


SCENARIOS = {
    "sim1_lasso": SimulationScenario(
        id="sim1_lasso", M=3, n_per_source=800, loss_kind="squared_error",
        generate=_sim1_generate, make_spec=_sim1_spec,
        truth_value=135.2426506941414, truth_source="population-moments",
        truth_q=[0.430534, 0.162006, 0.40746],
        truth_theta=[3.60027, -3.043512, 2.024865, 2.777265, -3.323054]),
    "sim2_krr": SimulationScenario(
        id="sim2_krr", M=3, n_per_source=600, loss_kind="squared_error",
        generate=_sim2_generate, make_spec=_sim2_spec,
        truth_value=2.25, truth_source="population-moments",
        truth_q=[1 / 3, 1 / 3, 1 / 3], truth_theta=[0.5, 0.5, 0.5],
        truth_spec=lambda n: _linear_spec(cross_fit=False)),
    "sim3_mlp": SimulationScenario(
        id="sim3_mlp", M=3, n_per_source=700, loss_kind="logistic",
        generate=_sim3_generate, make_spec=_sim3_spec,
        # monte_carlo_truth(n_large=1e5, reps=5, seed=90210)
        truth_value=0.22014931499874685, truth_source="cached-large-sample",
        truth_mc_se=0.0004012248899981225),
    "sim4_null": SimulationScenario(
        id="sim4_null", M=2, n_per_source=2000, loss_kind="squared_error",
        generate=_sim4_generate, make_spec=_sim4_spec,
        truth_value=0.0, truth_source="population-moments",
        truth_q=[0.5, 0.5], truth_theta=[0.0, 0.0, 0.0, 0.0]),
    "sim5_logistic_glm": SimulationScenario(
        id="sim5_logistic_glm", M=2, n_per_source=1000, loss_kind="logistic",
        generate=_sim5_generate, make_spec=_sim5_spec,
        # monte_carlo_truth(n_large=1e5, reps=5, seed=90210)
        truth_value=0.10334253303697552, truth_source="cached-large-sample",
        truth_mc_se=0.0003844542030760277, canonical=False),
    "sim6_poisson_spline": SimulationScenario(
        id="sim6_poisson_spline", M=2, n_per_source=1200, loss_kind="poisson",
        generate=_sim6_generate, make_spec=_sim6_spec,
        # monte_carlo_truth(n_large=1e5, reps=5, seed=90210)
        truth_value=0.26022003616827466, truth_source="cached-large-sample",
        truth_mc_se=0.0008737522649182944, canonical=False),
}


def generate_scenario(scenario_id, seed, n=None):
    """Draw one dataset from a registered generator."""
    sc = SCENARIOS.get(scenario_id)
    if sc is None:
        raise UsageError("unknown scenario id", scenario=scenario_id,
                         known=sorted(SCENARIOS))
    return sc.generate(sc.n_per_source if n is None else int(n), seed)


@dataclass
class CoverageReport:
    scenario: str
    R: int
    truth: float
    coverage: float
    mean_i_hat: float
    sd_i_hat: float
    mean_se: float
    mean_q: list
    records: list
    failures: int
    runtime_total: float
    master_seed: int
    spec: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "scenario": self.scenario, "R": self.R, "truth": self.truth,
            "coverage": self.coverage, "mean_i_hat": self.mean_i_hat,
            "sd_i_hat": self.sd_i_hat, "mean_se": self.mean_se,
            "mean_q": self.mean_q, "records": self.records,
            "failures": self.failures, "runtime_total": self.runtime_total,
            "master_seed": self.master_seed, "spec": self.spec,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _replicate_once(scenario_id, spec_dict, master_seed, r):
    sc = SCENARIOS[scenario_id]
    spec = ProblemSpec.from_dict(spec_dict)
    t0 = time.perf_counter()
    record = {"replication": r}
    try:
        data = sc.generate(sc.n_per_source, derive_seed(master_seed, r))
        est = estimate_importance(data, spec,
                                  seed=derive_seed(master_seed, r, stream=7))
        q_mean = np.mean(np.asarray(est.q_hat_per_fold), axis=0)
        record.update({
            "i_hat": est.i_hat, "se": est.se, "se_inflated": est.se_inflated,
            "ci_lo": est.ci_lo, "ci_hi": est.ci_hi,
            "q_hat": [float(v) for v in q_mean],
            "converged": bool(all(est.converged_flags)),
            "error": None,
        })
    except Exception as exc:
        record.update({"i_hat": None, "se": None, "se_inflated": None,
                       "ci_lo": None, "ci_hi": None, "q_hat": None,
                       "converged": False, "error": str(exc)})
    record["elapsed"] = time.perf_counter() - t0
    return record


def run_replications(scenario_id, R, overrides=None, master_seed=0, jobs=1,
                     truth=None):
    """Replicated coverage study for one scenario.

    Each replication draws its own dataset and runs the full estimation
    pipeline under an index-derived seed, so results are bit-identical
    for a fixed (scenario, R, master_seed) regardless of worker count.
    Individual failures are recorded in place, never fatal.
    """
    if R < 1:
        raise UsageError("need at least one replication", R=R)
    sc = SCENARIOS.get(scenario_id)
    if sc is None:
        raise UsageError("unknown scenario id", scenario=scenario_id,
                         known=sorted(SCENARIOS))
    spec = sc.spec(**(overrides or {}))
    spec_dict = spec.to_dict()
    if truth is None:
        truth = sc.truth_value
    if truth is None:
        raise UsageError("scenario has no cached truth; pass one explicitly",
                         scenario=scenario_id)
    t0 = time.perf_counter()
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=int(jobs)) as pool:
            records = list(pool.map(
                _replicate_once, [scenario_id] * R, [spec_dict] * R,
                [master_seed] * R, range(R)))
    else:
        records = [_replicate_once(scenario_id, spec_dict, master_seed, r)
                   for r in range(R)]
    records.sort(key=lambda rec: rec["replication"])
    for rec in records:
        if rec["error"] is None:
            rec["covered"] = bool(rec["ci_lo"] <= truth <= rec["ci_hi"])
        else:
            rec["covered"] = None
    good = [rec for rec in records if rec["error"] is None]
    failures = R - len(good)
    ihats = np.array([rec["i_hat"] for rec in good], dtype=float)
    ses = np.array([rec["se"] for rec in good], dtype=float)
    qs = np.array([rec["q_hat"] for rec in good], dtype=float) \
        if good else np.zeros((0, sc.M))
    return CoverageReport(
        scenario=scenario_id, R=R, truth=float(truth),
        coverage=float(np.mean([rec["covered"] for rec in good])) if good else 0.0,
        mean_i_hat=float(np.mean(ihats)) if good else float("nan"),
        sd_i_hat=float(np.std(ihats, ddof=1)) if len(good) > 1 else 0.0,
        mean_se=float(np.mean(ses)) if good else float("nan"),
        mean_q=[float(v) for v in qs.mean(axis=0)] if good else [],
        records=records, failures=failures,
        runtime_total=time.perf_counter() - t0,
        master_seed=int(master_seed), spec=spec_dict)


def standardized_moments(report):
    """Skewness and excess kurtosis of (i_hat - truth) / se."""
    from scipy.stats import kurtosis, skew
    z = np.array([(rec["i_hat"] - report.truth) / rec["se"]
                  for rec in report.records if rec["error"] is None])
    return float(skew(z)), float(kurtosis(z))


CSV_SUMMARY_KEYS = ("scenario", "R", "truth", "coverage", "mean_i_hat",
                    "sd_i_hat", "mean_se", "failures", "runtime_total",
                    "master_seed")


def emit_report(report, fmt, path):
    """Write a coverage report as plot-ready CSV or round-trippable JSON."""
    if fmt not in ("json", "csv"):
        raise UsageError("format must be json or csv", format=fmt)
    try:
        if fmt == "json":
            with open(path, "w") as fh:
                json.dump(report.to_dict(), fh, indent=2)
            return path
        import csv as _csv
        M = len(report.mean_q) if report.mean_q else \
            SCENARIOS[report.scenario].M if report.scenario in SCENARIOS else 0
        header = ["replication", "i_hat", "se", "ci_lo", "ci_hi", "covered"] + \
                 [f"q_{m + 1}" for m in range(M)]
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(header)
            rows = 0
            for rec in report.records:
                if rec["error"] is not None:
                    continue
                w.writerow([rec["replication"], repr(rec["i_hat"]),
                            repr(rec["se"]), repr(rec["ci_lo"]),
                            repr(rec["ci_hi"]), int(rec["covered"])] +
                           [repr(v) for v in rec["q_hat"]])
                rows += 1
            if rows:
                w.writerow([])
                w.writerow(["# summary"])
                for key in CSV_SUMMARY_KEYS:
                    w.writerow([f"# {key}", getattr(report, key)])
        return path
    except OSError as exc:
        raise DataError("cannot write report", path=str(path)) from exc


def load_report(path):
    try:
        with open(path) as fh:
            return CoverageReport.from_dict(json.load(fh))
    except OSError as exc:
        raise DataError("cannot read report", path=str(path)) from exc
