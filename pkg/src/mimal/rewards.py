"""Weighted empirical reward R(q, f, g; b).

The objective of the adversarial game: per source m, the mean gain of
the full model over the baseline, mixed by the simplex weights q. The
optional ridge penalty on q is deliberately not added here; it belongs
to the optimizer.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .losses import loss_value


@dataclass
class RewardBreakdown:
    """Per-source mean reward differences and the row counts behind them."""

    per_source_reward: np.ndarray
    per_source_n: np.ndarray

    def __post_init__(self):
        self.per_source_reward = np.asarray(self.per_source_reward, dtype=float)
        self.per_source_n = np.asarray(self.per_source_n, dtype=int)
        if self.per_source_reward.shape != self.per_source_n.shape:
            raise ShapeError("breakdown fields disagree in length")
        if not np.all(np.isfinite(self.per_source_reward)):
            raise ShapeError("non-finite per-source reward")


def reward_samples(kind, y, u_full, u_base):
    """Per-row reward differences ell(y, u_full) - ell(y, u_base)."""
    return loss_value(kind, y, u_full) - loss_value(kind, y, u_base)


def empirical_reward(kind, q, u_full, u_base, ys):
    """Sum_m q_m * mean_m [ell(y, u_full) - ell(y, u_base)].

    u_full, u_base, ys are per-source lists of aligned vectors. Returns
    the weighted value together with the per-source breakdown.
    """
    q = np.asarray(q, dtype=float)
    if not (len(u_full) == len(u_base) == len(ys) == q.size):
        raise ShapeError("per-source list lengths disagree",
                         M=q.size, full=len(u_full), base=len(u_base), y=len(ys))
    rewards = np.empty(q.size)
    ns = np.empty(q.size, dtype=int)
    for m, (uf, ub, y) in enumerate(zip(u_full, u_base, ys)):
        uf = np.asarray(uf, dtype=float)
        ub = np.asarray(ub, dtype=float)
        y = np.asarray(y, dtype=float)
        if uf.shape != y.shape or ub.shape != y.shape:
            raise ShapeError("prediction/outcome length mismatch", source=m,
                             n_y=y.shape, n_full=uf.shape, n_base=ub.shape)
        rewards[m] = float(np.mean(reward_samples(kind, y, uf, ub)))
        ns[m] = y.size
    return float(q @ rewards), RewardBreakdown(rewards, ns)
