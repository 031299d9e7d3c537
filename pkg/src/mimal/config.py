"""Declarative problem specification shared by inference, harness, and CLI."""

from dataclasses import dataclass, field

from .errors import UsageError
from .learners import LearnerSpec
from .losses import LOSS_KINDS
from .optimizer import OptimizerSchedule, default_schedule


@dataclass
class ProblemSpec:
    """Everything needed to turn a MultiSourceDataset into an estimate.

    learner_g and learner_b must describe the same function family so
    the full model nests the baseline. cross_fit=False (single
    full-data fit, K treated as 1) is only allowed for parametric or
    krr exposure families.
    """

    loss_kind: str = "squared_error"
    learner_f: LearnerSpec = None
    learner_g: LearnerSpec = None
    learner_b: LearnerSpec = None
    K: int = 5
    ridge_delta: float = 0.0
    inflation_tau: float = 0.1
    alpha: float = 0.05
    cross_fit: bool = True
    optimizer: OptimizerSchedule = None

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise UsageError(f"unknown loss kind {self.loss_kind!r}",
                             expected=LOSS_KINDS)
        if self.learner_f is None:
            self.learner_f = LearnerSpec(family="linear_basis", basis="identity")
        if self.learner_g is None:
            self.learner_g = LearnerSpec(family="linear_basis", basis="identity",
                                         include_intercept=True)
        if self.learner_b is None:
            self.learner_b = LearnerSpec(
                family=self.learner_g.family, basis=self.learner_g.basis,
                hyper=dict(self.learner_g.hyper),
                include_intercept=self.learner_g.include_intercept,
                basis_params=dict(self.learner_g.basis_params))
        if self.learner_g.family != self.learner_b.family \
                or self.learner_g.basis != self.learner_b.basis:
            raise UsageError(
                "learner_g and learner_b must describe the same family "
                "(the full model has to nest the baseline)",
                g=self.learner_g.family, b=self.learner_b.family)
        if not 0.0 < self.alpha < 1.0:
            raise UsageError("alpha must lie in (0, 1)", alpha=self.alpha)
        if self.K < 1:
            raise UsageError("K must be >= 1", K=self.K)
        if self.ridge_delta < 0 or self.inflation_tau < 0:
            raise UsageError("ridge_delta and inflation_tau must be >= 0")
        if not self.cross_fit and self.learner_f.family == "mlp":
            raise UsageError("cross_fit=false requires a parametric or krr "
                             "exposure family")
        if self.optimizer is None:
            self.optimizer = default_schedule(
                self.learner_f.family,
                ridge_delta=self.ridge_delta)
        elif self.optimizer.ridge_delta != self.ridge_delta:
            # ridge_delta is stated once on the ProblemSpec; keep the
            # schedule in sync rather than carrying two copies
            d = self.optimizer.to_dict()
            d["ridge_delta"] = self.ridge_delta
            self.optimizer = OptimizerSchedule.from_dict(d)

    @property
    def specs_pair(self):
        return (self.learner_f, self.learner_g)

    def to_dict(self):
        return {
            "loss_kind": self.loss_kind,
            "learner_f": self.learner_f.to_dict(),
            "learner_g": self.learner_g.to_dict(),
            "learner_b": self.learner_b.to_dict(),
            "K": self.K,
            "ridge_delta": self.ridge_delta,
            "inflation_tau": self.inflation_tau,
            "alpha": self.alpha,
            "cross_fit": self.cross_fit,
            "optimizer": self.optimizer.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        kwargs = dict(d)
        for key in ("learner_f", "learner_g", "learner_b"):
            if kwargs.get(key) is not None:
                kwargs[key] = LearnerSpec.from_dict(kwargs[key])
        if kwargs.get("optimizer") is not None:
            kwargs["optimizer"] = OptimizerSchedule.from_dict(kwargs["optimizer"])
        return cls(**kwargs)
