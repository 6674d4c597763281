"""Diagonal Gaussian search distribution with ask/tell semantics.

Holds the search state shared by every strategy in this package and the
fitness-weighted exponential moving-average update of its mean and
per-dimension standard deviation. Minimization convention throughout:
lower fitness is better.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

# Epsilon inside the sqrt of the sigma update; keeps the update finite when
# the population collapses onto the mean.
SIGMA_EPS = 1e-10

# Default clip bound for the updated mean and sigma; large enough to be
# effectively off while still preventing float overflow in objective values.
DEFAULT_CLIP = 1e10

N_TIMESCALES = 3


class ContractViolation(ValueError):
    """An invariant that callers promised to uphold was broken."""


@dataclass(frozen=True)
class SearchState:
    """Immutable per-run state of a diagonal Gaussian search distribution.

    Attributes:
        mean: distribution mean, shape (D,).
        sigma: per-dimension standard deviation, shape (D,), elementwise >= 0.
        gen_counter: number of tell updates applied so far.
        best_fitness: lowest fitness seen in any earlier generation (+inf at init).
        path_c: mean-shift evolution paths, shape (D, 3), one column per timescale.
        path_sigma: noise-scaled evolution paths, shape (D, 3).
    """

    mean: np.ndarray
    sigma: np.ndarray
    gen_counter: int
    best_fitness: float
    path_c: np.ndarray
    path_sigma: np.ndarray

    @property
    def dims(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class Population:
    """A batch of evaluated candidates; row j of candidates owns fitness[j]."""

    candidates: np.ndarray  # (N, D)
    fitness: np.ndarray  # (N,)

    def __post_init__(self):
        cand = np.atleast_2d(np.asarray(self.candidates, dtype=float))
        fit = np.asarray(self.fitness, dtype=float).ravel()
        if cand.shape[0] < 2:
            raise ValueError(f"population needs at least 2 members, got {cand.shape[0]}")
        if cand.shape[0] != fit.shape[0]:
            raise ValueError(
                f"candidate rows ({cand.shape[0]}) and fitness length ({fit.shape[0]}) differ"
            )
        object.__setattr__(self, "candidates", cand)
        object.__setattr__(self, "fitness", fit)

    @property
    def size(self) -> int:
        return self.candidates.shape[0]


@dataclass(frozen=True)
class UpdateWeights:
    """Recombination weights plus per-dimension learning rates for one update."""

    w: np.ndarray  # (N,), simplex
    alpha_m: np.ndarray  # (D,), in [0, 1]
    alpha_sigma: np.ndarray  # (D,), in [0, 1]

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float).ravel())
        object.__setattr__(self, "alpha_m", np.asarray(self.alpha_m, dtype=float).ravel())
        object.__setattr__(self, "alpha_sigma", np.asarray(self.alpha_sigma, dtype=float).ravel())


def init_state(dims: int, m0, sigma0) -> SearchState:
    """Create a fresh search state with zeroed paths and +inf best fitness."""
    m0 = np.asarray(m0, dtype=float).ravel()
    sigma0 = np.asarray(sigma0, dtype=float).ravel()
    if dims < 1:
        raise ValueError(f"dims must be positive, got {dims}")
    if m0.shape[0] != dims or sigma0.shape[0] != dims:
        raise ValueError(
            f"m0 ({m0.shape[0]}) and sigma0 ({sigma0.shape[0]}) must both have length dims={dims}"
        )
    if not np.all(sigma0 > 0):
        raise ValueError("sigma0 must be strictly positive elementwise")
    return SearchState(
        mean=m0.copy(),
        sigma=sigma0.copy(),
        gen_counter=0,
        best_fitness=float("inf"),
        path_c=np.zeros((dims, N_TIMESCALES)),
        path_sigma=np.zeros((dims, N_TIMESCALES)),
    )


def ask(state: SearchState, rng: np.random.Generator, popsize: int, clip=None) -> np.ndarray:
    """Sample a candidate matrix (popsize, D) from N(mean, diag(sigma^2)).

    Args:
        clip: optional (lo, hi) bounds applied elementwise to the candidates.
    """
    if popsize < 2:
        raise ValueError(f"popsize must be at least 2, got {popsize}")
    z = rng.standard_normal((popsize, state.dims))
    cand = state.mean + state.sigma * z
    if clip is not None:
        cand = np.clip(cand, clip[0], clip[1])
    return cand


def canonical_order(candidates: np.ndarray, fitness: np.ndarray) -> np.ndarray:
    """Permutation sorting rows by fitness, ties broken by candidate coordinates.

    Applying a tell in this order makes every floating-point reduction
    independent of how the caller happened to order the population, which is
    what gives bit-identical updates under row permutations.
    """
    keys = np.concatenate([candidates.T[::-1], fitness[None, :]], axis=0)
    return np.lexsort(keys)


def sort_population(pop: Population) -> Population:
    order = canonical_order(pop.candidates, pop.fitness)
    return Population(pop.candidates[order], pop.fitness[order])


def gaussian_update(
    state: SearchState,
    pop: Population,
    uw: UpdateWeights,
    clip: float = DEFAULT_CLIP,
) -> SearchState:
    """Fitness-weighted EMA update of mean and sigma.

    m' = (1 - alpha_m) * m + alpha_m * sum_j w_j x_j
    s' = (1 - alpha_s) * s + alpha_s * sqrt(sum_j w_j (x_j - m)^2 + eps)

    The new mean is clipped to [-clip, clip], sigma to [0, clip]. The
    generation counter advances by one and best_fitness takes the running
    minimum over this population's fitness.
    """
    w = uw.w
    if w.shape[0] != pop.size:
        raise ContractViolation(f"weight length {w.shape[0]} != population size {pop.size}")
    if not np.all(w >= 0) or abs(float(w.sum()) - 1.0) > 1e-6:
        raise ContractViolation("recombination weights must be nonnegative and sum to 1")
    if uw.alpha_m.shape[0] != state.dims or uw.alpha_sigma.shape[0] != state.dims:
        raise ContractViolation("learning-rate vectors must have length D")

    x = pop.candidates
    m = state.mean
    weighted_mean = w @ x
    weighted_var = w @ (x - m) ** 2
    new_mean = (1.0 - uw.alpha_m) * m + uw.alpha_m * weighted_mean
    new_sigma = (1.0 - uw.alpha_sigma) * state.sigma + uw.alpha_sigma * np.sqrt(
        weighted_var + SIGMA_EPS
    )
    new_mean = np.clip(new_mean, -clip, clip)
    new_sigma = np.clip(new_sigma, 0.0, clip)
    return replace(
        state,
        mean=new_mean,
        sigma=new_sigma,
        gen_counter=state.gen_counter + 1,
        best_fitness=min(state.best_fitness, float(np.min(pop.fitness))),
    )


def fixed_rank_weights(fitness: np.ndarray, elite_fraction: float) -> np.ndarray:
    """Uniform weight 1/E on the E = ceil(elite_fraction * N) best members.

    Returned in the same order as the input fitness. Ties on the elite
    boundary go to the lower index.
    """
    fitness = np.asarray(fitness, dtype=float).ravel()
    n = fitness.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 fitness values, got {n}")
    if not 0.0 < elite_fraction <= 1.0:
        raise ValueError(f"elite_fraction must be in (0, 1], got {elite_fraction}")
    n_elite = int(np.ceil(elite_fraction * n))
    order = np.argsort(fitness, kind="stable")
    w = np.zeros(n)
    w[order[:n_elite]] = 1.0 / n_elite
    return w
