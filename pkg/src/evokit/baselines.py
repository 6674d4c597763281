"""Hand-crafted comparison strategies sharing the ask/tell shape of the core.

Includes full CMA-ES (also used as the meta-optimizer), OpenES, PGPE, SNES,
separable CMA-ES, and the Adam step the gradient-estimating strategies use.
Constants not fixed elsewhere follow the standard published defaults
(Hansen's CMA-ES tutorial; Ros & Hansen for the separable variant;
Wierstra et al. for NES utilities; Sehnke et al. for PGPE).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .core import canonical_order

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Adam

@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(dims: int, lr: float) -> AdamState:
    return AdamState(m=np.zeros(dims), v=np.zeros(dims), t=0, lr=lr)


def adam_update(adam: AdamState, grad: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """Return the step to subtract for a descent move, plus the new state."""
    grad = np.asarray(grad, dtype=float).ravel()
    if grad.shape[0] != adam.m.shape[0]:
        raise ValueError(f"gradient length {grad.shape[0]} != moment length {adam.m.shape[0]}")
    t = adam.t + 1
    m = adam.beta1 * adam.m + (1.0 - adam.beta1) * grad
    v = adam.beta2 * adam.v + (1.0 - adam.beta2) * grad**2
    m_hat = m / (1.0 - adam.beta1**t)
    v_hat = v / (1.0 - adam.beta2**t)
    step = adam.lr * m_hat / (np.sqrt(v_hat) + adam.eps)
    return step, replace(adam, m=m, v=v, t=t)


# ---------------------------------------------------------------------------
# Rank-based fitness shaping shared by the gradient estimators.
#
# Exact fitness ties get the average of the shaped values they span, so a
# constant population produces exactly zero gradients.

def tie_averaged_centered_ranks(fitness: np.ndarray) -> np.ndarray:
    from scipy.stats import rankdata

    f = np.asarray(fitness, dtype=float).ravel()
    n = f.shape[0]
    ranks = rankdata(f, method="average") - 1.0
    return ranks / (n - 1) - 0.5


def tie_averaged_utilities(sorted_fitness: np.ndarray) -> np.ndarray:
    """NES log-rank utilities for an ascending-sorted fitness vector.

    u_k = max(0, ln(n/2 + 1) - ln(k)) normalized to sum 1, then shifted by
    -1/n so the vector sums to zero. Tied entries share their group mean.
    """
    f = np.asarray(sorted_fitness, dtype=float).ravel()
    n = f.shape[0]
    u = np.maximum(0.0, np.log(n / 2.0 + 1.0) - np.log(np.arange(1, n + 1, dtype=float)))
    u = u / u.sum() - 1.0 / n
    out = np.empty(n)
    i = 0
    while i < n:
        j = i + 1
        while j < n and f[j] == f[i]:
            j += 1
        out[i:j] = u[i:j].mean()
        i = j
    return out


def _canonical(candidates: np.ndarray, fitness: np.ndarray):
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    fitness = np.asarray(fitness, dtype=float).ravel()
    order = canonical_order(candidates, fitness)
    return candidates[order], fitness[order]


# ---------------------------------------------------------------------------
# OpenES: plain ES gradient estimate, Adam on the mean, decaying scalar sigma.

@dataclass(frozen=True)
class OpenEsState:
    mean: np.ndarray
    sigma0: float
    t: int = 0
    sigma_decay: float = 0.999
    sigma_floor: float = 0.01

    @property
    def sigma(self) -> float:
        return max(self.sigma_floor, self.sigma0 * self.sigma_decay**self.t)


def init_openes(m0, sigma0: float = 1.0, lr: float = 0.05) -> tuple[OpenEsState, AdamState]:
    m0 = np.asarray(m0, dtype=float).ravel()
    return OpenEsState(mean=m0.copy(), sigma0=float(sigma0)), init_adam(m0.shape[0], lr)


def ask_openes(state: OpenEsState, rng: np.random.Generator, popsize: int) -> np.ndarray:
    if popsize < 2:
        raise ValueError(f"popsize must be at least 2, got {popsize}")
    return state.mean + state.sigma * rng.standard_normal((popsize, state.mean.shape[0]))


def openes_step(
    state: OpenEsState, candidates, fitness, adam: AdamState
) -> tuple[OpenEsState, AdamState]:
    x, f = _canonical(candidates, fitness)
    n = x.shape[0]
    sigma = state.sigma
    shaped = tie_averaged_centered_ranks(f)
    z = (x - state.mean) / sigma
    grad = (shaped @ z) / (n * sigma)
    step, adam = adam_update(adam, grad)
    return replace(state, mean=state.mean - step, t=state.t + 1), adam


# ---------------------------------------------------------------------------
# PGPE: mirrored pairs, Adam on the mean, clipped per-dimension sigma step.

@dataclass(frozen=True)
class PgpeState:
    mean: np.ndarray
    sigma: np.ndarray
    sigma_lr: float = 0.1
    max_sigma_change: float = 0.2


def init_pgpe(m0, sigma0, lr: float = 0.02) -> tuple[PgpeState, AdamState]:
    m0 = np.asarray(m0, dtype=float).ravel()
    sigma0 = np.broadcast_to(np.asarray(sigma0, dtype=float), m0.shape).copy()
    return PgpeState(mean=m0.copy(), sigma=sigma0), init_adam(m0.shape[0], lr)


def ask_pgpe(state: PgpeState, rng: np.random.Generator, popsize: int) -> np.ndarray:
    if popsize < 2 or popsize % 2 != 0:
        raise ValueError(f"popsize must be even and at least 2, got {popsize}")
    half = rng.standard_normal((popsize // 2, state.mean.shape[0])) * state.sigma
    return np.concatenate([state.mean + half, state.mean - half], axis=0)


def _match_pairs(deviations: np.ndarray) -> list[tuple[int, int]]:
    # Mirrored partners are recovered geometrically (nearest negated deviation)
    # because float rounding breaks exact sign symmetry of x - mean; greedy
    # matching in canonical order keeps the result permutation-independent.
    n = deviations.shape[0]
    used = np.zeros(n, dtype=bool)
    pairs = []
    for i in range(n):
        if used[i]:
            continue
        used[i] = True
        rest = np.flatnonzero(~used)
        dist = np.sum((deviations[rest] + deviations[i]) ** 2, axis=1)
        j = int(rest[np.argmin(dist)])
        used[j] = True
        pairs.append((i, j))
    return pairs


def pgpe_step(state: PgpeState, candidates, fitness, adam: AdamState) -> tuple[PgpeState, AdamState]:
    x, f = _canonical(candidates, fitness)
    n = x.shape[0]
    if n % 2 != 0:
        raise ValueError(f"PGPE needs an even population, got {n}")
    shaped = tie_averaged_centered_ranks(f)
    dev = x - state.mean
    pairs = _match_pairs(dev)
    # The first-in-canonical-order member of each pair plays the positive
    # perturbation; the pair formulas are symmetric under swapping roles.
    eps = np.stack([dev[a] for a, _ in pairs])
    s_plus = np.array([shaped[a] for a, _ in pairs])
    s_minus = np.array([shaped[b] for _, b in pairs])
    grad_mean = ((s_plus - s_minus) / 2.0) @ eps / len(pairs)
    pair_avg = (s_plus + s_minus) / 2.0
    baseline = pair_avg.mean()
    grad_sigma = (pair_avg - baseline) @ ((eps**2 - state.sigma**2) / state.sigma) / len(pairs)
    step, adam = adam_update(adam, grad_mean)
    new_sigma = state.sigma - state.sigma_lr * grad_sigma
    lo = (1.0 - state.max_sigma_change) * state.sigma
    hi = (1.0 + state.max_sigma_change) * state.sigma
    new_sigma = np.clip(new_sigma, lo, hi)
    return replace(state, mean=state.mean - step, sigma=new_sigma), adam


# ---------------------------------------------------------------------------
# SNES: separable natural evolution strategy with log-rank utilities.

@dataclass(frozen=True)
class SnesState:
    mean: np.ndarray
    sigma: np.ndarray


def init_snes(m0, sigma0) -> SnesState:
    m0 = np.asarray(m0, dtype=float).ravel()
    sigma0 = np.broadcast_to(np.asarray(sigma0, dtype=float), m0.shape).copy()
    return SnesState(mean=m0.copy(), sigma=sigma0)


def ask_snes(state: SnesState, rng: np.random.Generator, popsize: int) -> np.ndarray:
    if popsize < 2:
        raise ValueError(f"popsize must be at least 2, got {popsize}")
    return state.mean + state.sigma * rng.standard_normal((popsize, state.mean.shape[0]))


def snes_step(state: SnesState, candidates, fitness) -> SnesState:
    x, f = _canonical(candidates, fitness)
    d = state.mean.shape[0]
    u = tie_averaged_utilities(f)
    z = (x - state.mean) / state.sigma
    grad_mean = u @ z
    grad_sigma = u @ (z**2 - 1.0)
    eta_sigma = (3.0 + np.log(d)) / (5.0 * np.sqrt(d))
    new_mean = state.mean + state.sigma * grad_mean
    new_sigma = state.sigma * np.exp(0.5 * eta_sigma * grad_sigma)
    return SnesState(mean=new_mean, sigma=new_sigma)


# ---------------------------------------------------------------------------
# CMA-ES (full covariance) and its separable variant.

@dataclass(frozen=True)
class CmaConstants:
    mu: int
    weights: np.ndarray
    mueff: float
    c_sigma: float
    d_sigma: float
    c_c: float
    c_1: float
    c_mu: float
    chi_n: float


def cma_constants(popsize: int, dims: int, separable: bool = False) -> CmaConstants:
    """Default cumulation and learning-rate constants.

    separable=True applies the (D + 2) / 3 speedup factor to the covariance
    learning rates and selects elites as exactly half the population.
    """
    mu = popsize // 2
    w = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1, dtype=float))
    w = w / w.sum()
    mueff = 1.0 / np.sum(w**2)
    c_sigma = (mueff + 2.0) / (dims + mueff + 5.0)
    d_sigma = 1.0 + 2.0 * max(0.0, np.sqrt((mueff - 1.0) / (dims + 1.0)) - 1.0) + c_sigma
    c_c = (4.0 + mueff / dims) / (dims + 4.0 + 2.0 * mueff / dims)
    c_1 = 2.0 / ((dims + 1.3) ** 2 + mueff)
    c_mu = 2.0 * (mueff - 2.0 + 1.0 / mueff) / ((dims + 2.0) ** 2 + mueff)
    if separable:
        boost = (dims + 2.0) / 3.0
        c_1 *= boost
        c_mu *= boost
    c_mu = min(1.0 - c_1, c_mu)
    chi_n = np.sqrt(dims) * (1.0 - 1.0 / (4.0 * dims) + 1.0 / (21.0 * dims**2))
    return CmaConstants(mu, w, float(mueff), float(c_sigma), float(d_sigma), float(c_c),
                        float(c_1), float(c_mu), float(chi_n))


@dataclass(frozen=True)
class CmaState:
    mean: np.ndarray
    step_size: float
    cov: np.ndarray  # (D, D), symmetric positive definite
    p_sigma: np.ndarray
    p_c: np.ndarray
    t: int = 0
    n_regularized: int = 0


def init_cma(m0, sigma0: float) -> CmaState:
    m0 = np.asarray(m0, dtype=float).ravel()
    d = m0.shape[0]
    return CmaState(mean=m0.copy(), step_size=float(sigma0), cov=np.eye(d),
                    p_sigma=np.zeros(d), p_c=np.zeros(d))


def _cov_eigh(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] <= 0.0:
        logger.warning("covariance lost positive-definiteness (min eig %.3e); regularizing", vals[0])
        vals, vecs = np.linalg.eigh(cov + 1e-12 * np.eye(cov.shape[0]))
        vals = np.maximum(vals, 1e-30)
        return vals, vecs, True
    return vals, vecs, False


def ask_cma(state: CmaState, rng: np.random.Generator, popsize: int) -> np.ndarray:
    if popsize < 2:
        raise ValueError(f"popsize must be at least 2, got {popsize}")
    vals, vecs, _ = _cov_eigh(state.cov)
    z = rng.standard_normal((popsize, state.mean.shape[0]))
    return state.mean + state.step_size * (z * np.sqrt(vals)) @ vecs.T


def cmaes_step(state: CmaState, candidates, fitness) -> CmaState:
    x, f = _canonical(candidates, fitness)
    n, d = x.shape
    k = cma_constants(n, d)
    y = (x[: k.mu] - state.mean) / state.step_size
    y_w = k.weights @ y
    new_mean = state.mean + state.step_size * y_w

    vals, vecs, regularized = _cov_eigh(state.cov)
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T
    p_sigma = (1.0 - k.c_sigma) * state.p_sigma + np.sqrt(
        k.c_sigma * (2.0 - k.c_sigma) * k.mueff
    ) * (inv_sqrt @ y_w)
    t = state.t + 1
    ps_norm2 = float(p_sigma @ p_sigma)
    h_sigma = ps_norm2 / d / (1.0 - (1.0 - k.c_sigma) ** (2 * t)) < 2.0 + 4.0 / (d + 1.0)
    p_c = (1.0 - k.c_c) * state.p_c + (
        np.sqrt(k.c_c * (2.0 - k.c_c) * k.mueff) * y_w if h_sigma else 0.0
    )
    delta_h = (1.0 - float(h_sigma)) * k.c_c * (2.0 - k.c_c)
    rank_mu = (k.weights * y.T) @ y
    cov = (
        (1.0 - k.c_1 - k.c_mu) * state.cov
        + k.c_1 * (np.outer(p_c, p_c) + delta_h * state.cov)
        + k.c_mu * rank_mu
    )
    cov = (cov + cov.T) / 2.0
    # Exponent capped at 1 so a single degenerate population cannot blow up
    # the step size.
    step_size = state.step_size * np.exp(
        min(1.0, (k.c_sigma / k.d_sigma) * (np.sqrt(ps_norm2) / k.chi_n - 1.0))
    )
    return CmaState(mean=new_mean, step_size=float(step_size), cov=cov, p_sigma=p_sigma,
                    p_c=p_c, t=t, n_regularized=state.n_regularized + int(regularized))


@dataclass(frozen=True)
class SepCmaState:
    mean: np.ndarray
    step_size: float
    diag: np.ndarray  # (D,) variances
    p_sigma: np.ndarray
    p_c: np.ndarray
    t: int = 0


def init_sepcma(m0, sigma0: float) -> SepCmaState:
    m0 = np.asarray(m0, dtype=float).ravel()
    d = m0.shape[0]
    return SepCmaState(mean=m0.copy(), step_size=float(sigma0), diag=np.ones(d),
                       p_sigma=np.zeros(d), p_c=np.zeros(d))


def ask_sepcma(state: SepCmaState, rng: np.random.Generator, popsize: int) -> np.ndarray:
    if popsize < 2:
        raise ValueError(f"popsize must be at least 2, got {popsize}")
    z = rng.standard_normal((popsize, state.mean.shape[0]))
    return state.mean + state.step_size * np.sqrt(state.diag) * z


def sepcma_step(state: SepCmaState, candidates, fitness) -> SepCmaState:
    x, f = _canonical(candidates, fitness)
    n, d = x.shape
    k = cma_constants(n, d, separable=True)
    y = (x[: k.mu] - state.mean) / state.step_size
    y_w = k.weights @ y
    new_mean = state.mean + state.step_size * y_w
    p_sigma = (1.0 - k.c_sigma) * state.p_sigma + np.sqrt(
        k.c_sigma * (2.0 - k.c_sigma) * k.mueff
    ) * (y_w / np.sqrt(state.diag))
    t = state.t + 1
    ps_norm2 = float(p_sigma @ p_sigma)
    h_sigma = ps_norm2 / d / (1.0 - (1.0 - k.c_sigma) ** (2 * t)) < 2.0 + 4.0 / (d + 1.0)
    p_c = (1.0 - k.c_c) * state.p_c + (
        np.sqrt(k.c_c * (2.0 - k.c_c) * k.mueff) * y_w if h_sigma else 0.0
    )
    delta_h = (1.0 - float(h_sigma)) * k.c_c * (2.0 - k.c_c)
    diag = (
        (1.0 - k.c_1 - k.c_mu) * state.diag
        + k.c_1 * (p_c**2 + delta_h * state.diag)
        + k.c_mu * (k.weights @ y**2)
    )
    step_size = state.step_size * np.exp(
        min(1.0, (k.c_sigma / k.d_sigma) * (np.sqrt(ps_norm2) / k.chi_n - 1.0))
    )
    return SepCmaState(mean=new_mean, step_size=float(step_size), diag=diag,
                       p_sigma=p_sigma, p_c=p_c, t=t)
