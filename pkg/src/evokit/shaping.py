"""Fitness transforms and the N x 3 token matrix consumed by the learned strategy.

Token columns, in frozen order: z-scored fitness, centered rank in
[-0.5, 0.5], and a strict-improvement flag against the best fitness of all
earlier generations.
"""

from __future__ import annotations

import numpy as np

ZSCORE_EPS = 1e-10


def zscore(fitness) -> np.ndarray:
    """(f - mean(f)) / (std_pop(f) + eps); all zeros for constant input."""
    f = np.asarray(fitness, dtype=float).ravel()
    if f.shape[0] < 2:
        raise ValueError(f"need at least 2 fitness values, got {f.shape[0]}")
    return (f - f.mean()) / (f.std() + ZSCORE_EPS)


def centered_rank(fitness) -> np.ndarray:
    """Map ranks linearly onto [-0.5, 0.5]: best -> -0.5, worst -> +0.5.

    Ties break by lower index.
    """
    f = np.asarray(fitness, dtype=float).ravel()
    n = f.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 fitness values, got {n}")
    order = np.argsort(f, kind="stable")
    ranks = np.empty(n)
    ranks[order] = np.arange(n, dtype=float)
    return ranks / (n - 1) - 0.5


def improvement_flags(fitness, best_so_far: float) -> np.ndarray:
    """1.0 where fitness strictly beats the best of all earlier generations."""
    f = np.asarray(fitness, dtype=float).ravel()
    return (f < best_so_far).astype(float)


def fitness_features(fitness, best_so_far: float) -> np.ndarray:
    """Stack the three transforms into the (N, 3) token matrix."""
    return np.column_stack(
        [zscore(fitness), centered_rank(fitness), improvement_flags(fitness, best_so_far)]
    )
