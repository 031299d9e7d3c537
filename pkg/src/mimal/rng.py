"""Seed plumbing.

All randomness flows through numpy's PCG64 generator. Derived seeds
(per replication, per fold shuffle, per scan target) are produced by a
SplitMix64 finalizer on (master_seed, index) so that nearby indices get
statistically unrelated streams and runs are resumable at any index.
"""

import os

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x):
    """One SplitMix64 avalanche round; maps uint64 -> uint64."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return (x ^ (x >> 31)) & MASK64


def derive_seed(master_seed, index, stream=0):
    """Deterministic child seed for a numbered subtask.

    The master seed is xored with a mixed counter so child streams do
    not collide even when master seeds are small consecutive integers.
    """
    h = splitmix64((int(index) & MASK64) ^ (int(stream) << 32 & MASK64))
    return (int(master_seed) ^ h) & MASK64


def make_rng(seed):
    return np.random.default_rng(int(seed) & MASK64)


def resolve_seed(explicit=None, env_var="MIMAL_SEED", fallback=0):
    """CLI seed resolution: flag beats env var beats fallback."""
    if explicit is not None:
        return int(explicit) & MASK64
    env = os.environ.get(env_var)
    if env is not None and env.strip() != "":
        return int(env) & MASK64
    return int(fallback) & MASK64
