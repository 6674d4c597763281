"""Closed-form evolution strategy with softmax-of-sigmoid rank weights.

A fixed-weight distillation of the learned strategy: recombination weight
decays smoothly with fitness rank under a temperature beta, the mean update
is a full replacement (alpha_m = 1) and sigma moves slowly (alpha_sigma = 0.1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    DEFAULT_CLIP,
    Population,
    SearchState,
    UpdateWeights,
    gaussian_update,
    sort_population,
)

DEFAULT_BETA = 12.5


@dataclass(frozen=True)
class DesConfig:
    beta: float = DEFAULT_BETA
    alpha_m: float = 1.0
    alpha_sigma: float = 0.1
    sigma0: np.ndarray = field(default_factory=lambda: np.ones(1))
    clip: float = DEFAULT_CLIP

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")


def des_weights(popsize: int, beta: float = DEFAULT_BETA) -> np.ndarray:
    """Recombination weights in rank order (best first).

    softmax(-20 * sigmoid(beta * r)) over centered ranks r_k = k/(N-1) - 0.5,
    which equals softmax(20 * (1 - sigmoid(...))) by softmax shift invariance.
    """
    if popsize < 2:
        raise ValueError(f"popsize must be at least 2, got {popsize}")
    ranks = np.arange(popsize, dtype=float) / (popsize - 1) - 0.5
    logits = -20.0 / (1.0 + np.exp(-beta * ranks))
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def des_step(state: SearchState, pop: Population, cfg: DesConfig = DesConfig()) -> SearchState:
    """One tell: rank the population, apply des_weights, update mean and sigma."""
    pop = sort_population(pop)
    w = des_weights(pop.size, cfg.beta)
    dims = state.dims
    uw = UpdateWeights(w, np.full(dims, cfg.alpha_m), np.full(dims, cfg.alpha_sigma))
    return gaussian_update(state, pop, uw, clip=cfg.clip)
