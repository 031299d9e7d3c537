"""Cross-fitted importance estimation, standard errors, and intervals.

Pipeline per fold k: fit baselines on the complement, solve the saddle
on the complement, evaluate the reward difference on fold k with the
trained (q_hat, f, g). The point estimate averages the K fold values;
the standard error plugs fold-wise sample variances (or, for paired
designs, cross-source covariances) into the weights q_hat.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .config import ProblemSpec
from .data import split_kfolds
from .errors import InputError, PairingError, VarianceError
from .learners import (LearnerSpec, baseline_predictions, bundle_predict,
                       fit_all_baselines)
from .optimizer import solve_saddle
from .rewards import empirical_reward, reward_samples
from .rng import derive_seed

log = logging.getLogger(__name__)


@dataclass
class FoldArtifacts:
    fold: int
    baselines: list
    saddle: object
    holdout_reward_value: float
    per_source_samples: list  # reward-difference vectors on fold-k rows

    @property
    def q_hat(self):
        return self.saddle.q_hat


@dataclass
class ImportanceEstimate:
    i_hat: float
    se: float
    se_inflated: float
    ci_lo: float
    ci_hi: float
    alpha: float
    folds: list
    design: str
    target: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def ci(self):
        return (self.ci_lo, self.ci_hi)

    @property
    def q_hat_per_fold(self):
        return [f.q_hat.tolist() for f in self.folds]

    @property
    def converged_flags(self):
        return [bool(f.saddle.converged) for f in self.folds]

    def to_dict(self):
        return {
            "target": self.target,
            "i_hat": self.i_hat,
            "se": self.se,
            "se_inflated": self.se_inflated,
            "ci": [self.ci_lo, self.ci_hi],
            "alpha": self.alpha,
            "q_hat_per_fold": self.q_hat_per_fold,
            "converged_flags": self.converged_flags,
            "design": self.design,
        }


def inflate_variance(se, tau, n_min):
    """sqrt(se^2 + tau / n_min): CI-validity guard near a zero importance."""
    if tau < 0 or n_min < 1:
        raise VarianceError("need tau >= 0 and n_min >= 1", tau=tau, n_min=n_min)
    return float(np.sqrt(se * se + tau / n_min))


def normal_quantile(p):
    return float(ndtri(p))


def confidence_interval(i_hat, se, alpha):
    """i_hat +/- z_{1-alpha/2} * se."""
    z = normal_quantile(1.0 - alpha / 2.0)
    return float(i_hat - z * se), float(i_hat + z * se)


def standard_error_independent(folds, n_per_source):
    """SE^2 = K^-1 sum_k q_k' diag(V_m,k / n_m) q_k.

    V_m,k is the ddof=1 sample variance of the fold-k source-m samples;
    n_m is the full source size, not the fold size.
    """
    n = np.asarray(n_per_source, dtype=float)
    acc = 0.0
    for art in folds:
        V = np.empty(len(art.per_source_samples))
        for m, d in enumerate(art.per_source_samples):
            if len(d) < 2:
                raise VarianceError("need >= 2 holdout rows per source",
                                    fold=art.fold, source=m, rows=len(d))
            V[m] = float(np.var(d, ddof=1))
        q = art.q_hat
        acc += float(q @ (V / n * q))
    return float(np.sqrt(acc / len(folds)))


def standard_error_paired(folds, n1):
    """SE^2 = (n_1 K)^-1 sum_k q_k' Cov_k q_k over time-aligned samples."""
    acc = 0.0
    for art in folds:
        lengths = {len(d) for d in art.per_source_samples}
        if len(lengths) != 1:
            raise PairingError("fold samples are not aligned across sources",
                               fold=art.fold, lengths=sorted(lengths))
        nk = lengths.pop()
        if nk < 2:
            raise VarianceError("need >= 2 holdout rows per source",
                                fold=art.fold, rows=nk)
        D = np.column_stack(art.per_source_samples)
        C = np.cov(D, rowvar=False, ddof=1)
        C = np.atleast_2d(C)
        q = art.q_hat
        acc += float(q @ C @ q)
    return float(np.sqrt(acc / (len(folds) * n1)))


def _g_spec_for(data, spec):
    # with no adjustment columns the per-source shift is absorbed by the
    # baseline, so g is the empty function
    if data.k == 0:
        return LearnerSpec(family="linear_basis", basis="identity",
                           include_intercept=False)
    return spec.learner_g


def _fit_and_eval_fold(kind, spec, train, evaldata, fold_id, seed):
    baselines = fit_all_baselines(spec.learner_b, kind, train)
    saddle = solve_saddle(kind, train, (spec.learner_f, _g_spec_for(train, spec)),
                          spec.optimizer, baselines, seed=seed)
    u_full = bundle_predict(saddle.bundle, evaldata)
    u_base = baseline_predictions(baselines, evaldata)
    value, _ = empirical_reward(kind, saddle.q_hat, u_full, u_base,
                                [s.y for s in evaldata.sources])
    samples = [reward_samples(kind, s.y, uf, ub)
               for s, uf, ub in zip(evaldata.sources, u_full, u_base)]
    return FoldArtifacts(fold=fold_id, baselines=baselines, saddle=saddle,
                         holdout_reward_value=float(value),
                         per_source_samples=samples)


def estimate_importance(data, spec, seed=0, target=None, jobs=1):
    """Algorithm-1 estimate on one exposure block.

    cross_fit=True: K-fold split, fit on complements, evaluate held out.
    cross_fit=False (parametric/krr only): one full-data fit-and-evaluate,
    K treated as 1. Optimizer non-convergence in a fold is logged and
    flagged, never fatal; baseline failures propagate.
    """
    if target is None:
        target = "+".join(data.x_names)
    kind = spec.loss_kind
    folds_art = []
    if spec.cross_fit:
        assignment = split_kfolds(data, spec.K, derive_seed(seed, 0, stream=1))
        for k in range(spec.K):
            train = data.take([assignment.train_indices(m, k)
                               for m in range(data.M)])
            evaldata = data.take([assignment.folds[m][k]
                                  for m in range(data.M)])
            folds_art.append(_fit_and_eval_fold(
                kind, spec, train, evaldata, k, derive_seed(seed, k, stream=2)))
    else:
        folds_art.append(_fit_and_eval_fold(
            kind, spec, data, data, 0, derive_seed(seed, 0, stream=2)))

    for art in folds_art:
        if not art.saddle.converged:
            log.warning("saddle solve did not converge (fold %d, target %s)",
                        art.fold, target)

    i_hat = float(np.mean([a.holdout_reward_value for a in folds_art]))
    design = "paired" if data.paired else "independent"
    if data.paired:
        se = standard_error_paired(folds_art, int(data.n_per_source[0]))
    else:
        se = standard_error_independent(folds_art, data.n_per_source)
    se_infl = inflate_variance(se, spec.inflation_tau,
                               int(data.n_per_source.min()))
    # the reported CI always uses the inflated SE (equal to se when tau=0)
    lo, hi = confidence_interval(i_hat, se_infl, spec.alpha)
    diagnostics = {
        "converged_all": all(a.saddle.converged for a in folds_art),
        "q_boundary": any("q_boundary" in a.saddle.diagnostics
                          for a in folds_art),
    }
    return ImportanceEstimate(
        i_hat=i_hat, se=se, se_inflated=se_infl, ci_lo=lo, ci_hi=hi,
        alpha=spec.alpha, folds=folds_art, design=design, target=target,
        diagnostics=diagnostics,
    )


def source_specific_importance(data, m, spec, seed=0, target=None):
    """Single-source LOCO importance I^(m): the same pipeline with q = [1]."""
    sub = data.single_source(m) if data.M > 1 else data
    if target is None:
        target = "+".join(data.x_names)
    return estimate_importance(sub, spec, seed=seed,
                               target=f"{target}@source={data.source_labels[m]}")


def loco_scan(data, spec, seed=0, groups=None, include_sources=True):
    """Rotate every predictor (or declared group) through the exposure slot.

    groups maps a block name to its member column names; ungrouped
    predictors scan individually. Returns a list of dicts with the
    pooled estimate, optional per-source estimates, and any per-target
    error (collected, not fatal). Ordering follows input column order.
    """
    names = list(data.x_names) + list(data.z_names)
    groups = dict(groups or {})
    for gname, cols in groups.items():
        missing = [c for c in cols if c not in names]
        if missing:
            raise InputError("scan group references unknown columns",
                             group=gname, missing=missing)
    covered = set()
    targets = []
    for gname, cols in groups.items():
        targets.append((gname, [names.index(c) for c in cols]))
        covered.update(cols)
    for j, name in enumerate(names):
        if name not in covered:
            targets.append((name, [j]))
    targets.sort(key=lambda t: min(t[1]))

    results = []
    for i, (tname, x_cols) in enumerate(targets):
        z_cols = [j for j in range(len(names)) if j not in x_cols]
        entry = {"target": tname, "estimate": None, "sources": [], "error": None}
        try:
            view = data.with_exposure(x_cols, z_cols)
            tseed = derive_seed(seed, i, stream=3)
            entry["estimate"] = estimate_importance(view, spec, seed=tseed,
                                                    target=tname)
            if include_sources:
                for m in range(data.M):
                    entry["sources"].append(
                        source_specific_importance(view, m, spec, seed=tseed,
                                                   target=tname))
        except Exception as exc:  # per-target failures are reported, not fatal
            log.warning("scan target %s failed: %s", tname, exc)
            entry["error"] = str(exc)
        results.append(entry)
    return results


def scan_csv_rows(results):
    """Flatten scan output to (target, i_hat, se, se_inflated, lo, hi) rows."""
    rows = []
    for entry in results:
        est = entry["estimate"]
        if est is None:
            continue
        rows.append([entry["target"], est.i_hat, est.se, est.se_inflated,
                     est.ci_lo, est.ci_hi])
    return rows
