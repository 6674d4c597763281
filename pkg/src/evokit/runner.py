"""Uniform ask/tell wrappers over every strategy plus a generic run loop.

Each wrapper owns its hyperparameters and threads an opaque state value
through initialize/ask/tell, so benchmark and evolve code never branches on
the strategy kind.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Callable

import numpy as np

from . import baselines as bl
from .core import (
    Population,
    SearchState,
    UpdateWeights,
    ask,
    fixed_rank_weights,
    gaussian_update,
    init_state,
    sort_population,
)
from .des import DEFAULT_BETA, DesConfig, des_step
from .les import LesConfig, LesParams, les_tell, load_checkpoint, zero_params
from .tasks import TaskSpec, circles_task_batch, eval_task_batch


def _as_vectors(m0, sigma0) -> tuple[np.ndarray, np.ndarray]:
    m0 = np.asarray(m0, dtype=float).ravel()
    sigma0 = np.broadcast_to(np.asarray(sigma0, dtype=float), m0.shape).astype(float)
    return m0, sigma0


class LesStrategy:
    """Learned strategy; zero parameters reduce to uniform weights with 0.5 rates."""

    name = "les"

    def __init__(self, params: LesParams | None = None, cfg: LesConfig | None = None):
        self.cfg = cfg if cfg is not None else LesConfig()
        self.params = params if params is not None else zero_params(self.cfg)

    def initialize(self, m0, sigma0) -> SearchState:
        m0, sigma0 = _as_vectors(m0, sigma0)
        return init_state(m0.shape[0], m0, sigma0)

    def ask(self, state, rng, popsize):
        return ask(state, rng, popsize)

    def tell(self, state, candidates, fitness):
        return les_tell(state, Population(candidates, fitness), self.params, self.cfg)


class DesStrategy:
    name = "des"

    def __init__(self, cfg: DesConfig | None = None):
        self.cfg = cfg if cfg is not None else DesConfig()

    def initialize(self, m0, sigma0) -> SearchState:
        m0, sigma0 = _as_vectors(m0, sigma0)
        return init_state(m0.shape[0], m0, sigma0)

    def ask(self, state, rng, popsize):
        return ask(state, rng, popsize)

    def tell(self, state, candidates, fitness):
        return des_step(state, Population(candidates, fitness), self.cfg)


class FixedWeightStrategy:
    """Uniform weight on the elite fraction of the population."""

    name = "fixed"

    def __init__(self, elite_fraction: float = 0.5, alpha_m: float = 1.0, alpha_sigma: float = 0.1):
        self.elite_fraction = elite_fraction
        self.alpha_m = alpha_m
        self.alpha_sigma = alpha_sigma

    def initialize(self, m0, sigma0) -> SearchState:
        m0, sigma0 = _as_vectors(m0, sigma0)
        return init_state(m0.shape[0], m0, sigma0)

    def ask(self, state, rng, popsize):
        return ask(state, rng, popsize)

    def tell(self, state, candidates, fitness):
        pop = sort_population(Population(candidates, fitness))
        w = fixed_rank_weights(pop.fitness, self.elite_fraction)
        d = state.dims
        uw = UpdateWeights(w, np.full(d, self.alpha_m), np.full(d, self.alpha_sigma))
        return gaussian_update(state, pop, uw)


class OpenEsStrategy:
    name = "openes"

    def __init__(self, lr: float = 0.05):
        self.lr = lr

    def initialize(self, m0, sigma0):
        m0, sigma0 = _as_vectors(m0, sigma0)
        return bl.init_openes(m0, float(sigma0.mean()), self.lr)

    def ask(self, state, rng, popsize):
        return bl.ask_openes(state[0], rng, popsize)

    def tell(self, state, candidates, fitness):
        return bl.openes_step(state[0], candidates, fitness, state[1])


class PgpeStrategy:
    name = "pgpe"

    def __init__(self, lr: float = 0.02):
        self.lr = lr

    def initialize(self, m0, sigma0):
        m0, sigma0 = _as_vectors(m0, sigma0)
        return bl.init_pgpe(m0, sigma0, self.lr)

    def ask(self, state, rng, popsize):
        return bl.ask_pgpe(state[0], rng, popsize)

    def tell(self, state, candidates, fitness):
        return bl.pgpe_step(state[0], candidates, fitness, state[1])


class SnesStrategy:
    name = "snes"

    def initialize(self, m0, sigma0):
        m0, sigma0 = _as_vectors(m0, sigma0)
        return bl.init_snes(m0, sigma0)

    def ask(self, state, rng, popsize):
        return bl.ask_snes(state, rng, popsize)

    def tell(self, state, candidates, fitness):
        return bl.snes_step(state, candidates, fitness)


class SepCmaStrategy:
    name = "sep-cma-es"

    def initialize(self, m0, sigma0):
        m0, sigma0 = _as_vectors(m0, sigma0)
        step = float(sigma0.mean())
        state = bl.init_sepcma(m0, step)
        return replace(state, diag=(sigma0 / step) ** 2)

    def ask(self, state, rng, popsize):
        return bl.ask_sepcma(state, rng, popsize)

    def tell(self, state, candidates, fitness):
        return bl.sepcma_step(state, candidates, fitness)


class CmaStrategy:
    name = "cma-es"

    def initialize(self, m0, sigma0):
        m0, sigma0 = _as_vectors(m0, sigma0)
        step = float(sigma0.mean())
        state = bl.init_cma(m0, step)
        return replace(state, cov=np.diag((sigma0 / step) ** 2))

    def ask(self, state, rng, popsize):
        return bl.ask_cma(state, rng, popsize)

    def tell(self, state, candidates, fitness):
        return bl.cmaes_step(state, candidates, fitness)


STRATEGY_NAMES = ("les", "des", "fixed", "openes", "pgpe", "snes", "sep-cma-es", "cma-es")


def make_strategy(name: str, checkpoint: str | None = None, beta: float = DEFAULT_BETA):
    """Build a strategy by registry name; les loads its checkpoint if given."""
    if name == "les":
        if checkpoint is not None:
            params, cfg, _ = load_checkpoint(checkpoint)
            return LesStrategy(params, cfg)
        return LesStrategy()
    if name == "des":
        return DesStrategy(DesConfig(beta=beta))
    if name == "fixed":
        return FixedWeightStrategy()
    if name == "openes":
        return OpenEsStrategy()
    if name == "pgpe":
        return PgpeStrategy()
    if name == "snes":
        return SnesStrategy()
    if name == "sep-cma-es":
        return SepCmaStrategy()
    if name == "cma-es":
        return CmaStrategy()
    raise ValueError(f"unknown strategy {name!r}; known: {', '.join(STRATEGY_NAMES)}")


@dataclass(frozen=True)
class RunResult:
    best: np.ndarray  # per-generation population minimum
    mean: np.ndarray  # per-generation population mean
    best_so_far: np.ndarray  # running minimum
    final_state: Any


def task_objective(spec: TaskSpec) -> Callable[[np.ndarray, int], np.ndarray]:
    return lambda candidates, gen: eval_task_batch(spec, candidates, eval_seed=gen)


def circles_objective() -> Callable[[np.ndarray, int], np.ndarray]:
    return lambda candidates, gen: circles_task_batch(candidates)


def run_strategy(
    strategy,
    objective: Callable[[np.ndarray, int], np.ndarray],
    m0,
    sigma0,
    generations: int,
    popsize: int,
    seed,
) -> RunResult:
    """Run one strategy for a fixed horizon; objective(candidates, gen) -> fitness."""
    rng = np.random.default_rng(seed)
    state = strategy.initialize(m0, sigma0)
    best = np.empty(generations)
    mean = np.empty(generations)
    best_so_far = np.empty(generations)
    running = np.inf
    for g in range(generations):
        candidates = strategy.ask(state, rng, popsize)
        fitness = np.asarray(objective(candidates, g), dtype=float)
        best[g] = fitness.min()
        mean[g] = fitness.mean()
        running = min(running, best[g])
        best_so_far[g] = running
        state = strategy.tell(state, candidates, fitness)
    return RunResult(best=best, mean=mean, best_so_far=best_so_far, final_state=state)
