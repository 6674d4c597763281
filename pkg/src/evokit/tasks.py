"""Benchmark objective functions, the task sampler, and a small
neuroevolution task.

All objectives are minimized and every function evaluates to exactly 0.0 at
its canonical optimum (some closed forms are rearranged so the cancellation
is exact in floats, not just in algebra). Functions are the raw structural
forms: no random rotations and no smoothing transforms, since task variety
comes from sampled offsets and noise levels.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable

import numpy as np

# Classic scaled Schwefel optimum coordinate (w* = 100 * this).
SCHWEFEL_OPT = 4.209687462275036

WEIERSTRASS_TERMS = 12


def _sum(v: np.ndarray) -> np.ndarray:
    return np.sum(v, axis=-1)


def _boundary_penalty(x: np.ndarray) -> np.ndarray:
    return _sum(np.maximum(0.0, np.abs(x) - 5.0) ** 2)


def sphere(x: np.ndarray) -> np.ndarray:
    return _sum(x**2)


def rosenbrock(x: np.ndarray) -> np.ndarray:
    a, b = x[..., :-1], x[..., 1:]
    return _sum(100.0 * (a**2 - b) ** 2 + (a - 1.0) ** 2)


def discus(x: np.ndarray) -> np.ndarray:
    return 1e6 * x[..., 0] ** 2 + _sum(x[..., 1:] ** 2)


def rastrigin(x: np.ndarray) -> np.ndarray:
    d = x.shape[-1]
    return 10.0 * (d - _sum(np.cos(2.0 * np.pi * x))) + _sum(x**2)


def _schwefel_h(w: np.ndarray) -> np.ndarray:
    return w * np.sin(np.sqrt(np.abs(w)))


_SCHWEFEL_HREF = float(_schwefel_h(np.array([100.0 * SCHWEFEL_OPT]))[0])


def schwefel(x: np.ndarray) -> np.ndarray:
    d = x.shape[-1]
    w = 100.0 * x
    core = _sum(_SCHWEFEL_HREF - _schwefel_h(w)) / (100.0 * d)
    # Outside [-5, 5] the second sine lobe drops below the optimum value;
    # the boundary penalty keeps the global minimum at the canonical point.
    return core + (100.0 / d) * _boundary_penalty(x)


def bueche_rastrigin(x: np.ndarray) -> np.ndarray:
    d = x.shape[-1]
    if d == 1:
        s = np.ones_like(x)
    else:
        exp = 0.5 * np.arange(d) / (d - 1)
        odd = np.arange(d) % 2 == 1
        s = np.where(odd & (x > 0), 10.0 ** (exp + 1.0), 10.0**exp)
    z = s * x
    return 10.0 * (d - _sum(np.cos(2.0 * np.pi * z))) + _sum(z**2) + 100.0 * _boundary_penalty(x)


def attractive_sector(x: np.ndarray) -> np.ndarray:
    s = np.where(x > 0, 100.0, 1.0)
    return _sum((s * x) ** 2) ** 0.9


def _weierstrass_w(t: np.ndarray) -> np.ndarray:
    k = np.arange(WEIERSTRASS_TERMS)
    return np.sum(0.5**k * np.cos(2.0 * np.pi * 3.0**k * (t[..., None] + 0.5)), axis=-1)


_WEIERSTRASS_W0 = float(_weierstrass_w(np.array([0.0]))[0])


def weierstrass(x: np.ndarray) -> np.ndarray:
    d = x.shape[-1]
    return 10.0 * (_sum(_weierstrass_w(x) - _WEIERSTRASS_W0) / d) ** 3


def schaffers_f7(x: np.ndarray) -> np.ndarray:
    d = x.shape[-1]
    if d == 1:
        s = np.abs(x[..., 0:1])
        denom = 1.0
    else:
        s = np.sqrt(x[..., :-1] ** 2 + x[..., 1:] ** 2)
        denom = d - 1.0
    term = np.sqrt(s) * (1.0 + np.sin(50.0 * s**0.2) ** 2)
    return (_sum(term) / denom) ** 2


def griewank_rosenbrock(x: np.ndarray) -> np.ndarray:
    d = x.shape[-1]
    if d == 1:
        return np.zeros(x.shape[:-1])
    a, b = x[..., :-1], x[..., 1:]
    r = 100.0 * (a**2 - b) ** 2 + (a - 1.0) ** 2
    return (10.0 / (d - 1.0)) * _sum(r / 4000.0 + (1.0 - np.cos(r)))


FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sphere": sphere,
    "rosenbrock": rosenbrock,
    "discus": discus,
    "rastrigin": rastrigin,
    "schwefel": schwefel,
    "bueche_rastrigin": bueche_rastrigin,
    "attractive_sector": attractive_sector,
    "weierstrass": weierstrass,
    "schaffers_f7": schaffers_f7,
    "griewank_rosenbrock": griewank_rosenbrock,
}

_ONES_OPTIMUM = {"rosenbrock", "griewank_rosenbrock"}


def canonical_optimum(function_id: str, dims: int) -> np.ndarray:
    """The point where the noiseless function is exactly 0."""
    if function_id not in FUNCTIONS:
        raise ValueError(f"unknown function id {function_id!r}")
    if function_id == "schwefel":
        return np.full(dims, SCHWEFEL_OPT)
    if function_id in _ONES_OPTIMUM:
        return np.ones(dims)
    return np.zeros(dims)


def eval_function(function_id: str, x) -> float | np.ndarray:
    """Noiseless objective value; accepts a single point or a batch (..., D)."""
    if function_id not in FUNCTIONS:
        raise ValueError(f"unknown function id {function_id!r}")
    x = np.asarray(x, dtype=float)
    out = FUNCTIONS[function_id](x)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Task sampling

@dataclass(frozen=True)
class TaskSpec:
    """One sampled inner-loop problem instance.

    The candidate x is scored as f(x + offset) plus noise_level times a
    standard normal draw keyed by (noise_seed, eval_seed, candidate index),
    so identical keys give identical noise regardless of who evaluates.
    """

    function_id: str
    dims: int
    offset: np.ndarray
    noise_level: float
    m0: np.ndarray
    t0: int
    sigma0: float = 1.0
    noise_seed: int = 0

    def __post_init__(self):
        if self.function_id not in FUNCTIONS:
            raise ValueError(f"unknown function id {self.function_id!r}")
        offset = np.asarray(self.offset, dtype=float).ravel()
        m0 = np.asarray(self.m0, dtype=float).ravel()
        if offset.shape[0] != self.dims or m0.shape[0] != self.dims:
            raise ValueError("offset and m0 must have length dims")
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "m0", m0)

    def to_dict(self) -> dict:
        return {
            "function_id": self.function_id,
            "dims": self.dims,
            "offset": [float(v) for v in self.offset],
            "noise_level": float(self.noise_level),
            "m0": [float(v) for v in self.m0],
            "t0": int(self.t0),
            "sigma0": float(self.sigma0),
            "noise_seed": int(self.noise_seed),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TaskSpec":
        return cls(
            function_id=doc["function_id"],
            dims=int(doc["dims"]),
            offset=np.asarray(doc["offset"], dtype=float),
            noise_level=float(doc["noise_level"]),
            m0=np.asarray(doc["m0"], dtype=float),
            t0=int(doc["t0"]),
            sigma0=float(doc["sigma0"]),
            noise_seed=int(doc["noise_seed"]),
        )


@dataclass(frozen=True)
class TaskSet:
    name: str
    functions: tuple[str, ...]
    dim_range: tuple[int, int]
    horizon: int


TASK_SETS: dict[str, TaskSet] = {
    "small": TaskSet("small", ("sphere",), (2, 2), 25),
    "medium": TaskSet(
        "medium", ("sphere", "rosenbrock", "discus", "rastrigin", "schwefel"), (1, 5), 25
    ),
    "large": TaskSet("large", tuple(FUNCTIONS), (1, 10), 50),
}


def sample_task(rng: np.random.Generator, task_set: TaskSet, max_dims: int | None = None) -> TaskSpec:
    """Draw one task uniformly within the set's ranges.

    Draw order is fixed (function, dims, offset, noise level, m0, t0, noise
    seed) so a seeded generator always yields the same spec.
    """
    function_id = task_set.functions[int(rng.integers(0, len(task_set.functions)))]
    lo, hi = task_set.dim_range
    if max_dims is not None:
        hi = min(hi, max_dims)
    dims = int(rng.integers(lo, hi + 1))
    offset = rng.uniform(-5.0, 5.0, dims)
    noise_level = float(rng.uniform(0.0, 0.1))
    m0 = rng.uniform(-5.0, 5.0, dims)
    t0 = int(rng.integers(0, 2001))
    noise_seed = int(rng.integers(0, 2**63))
    return TaskSpec(
        function_id=function_id,
        dims=dims,
        offset=offset,
        noise_level=noise_level,
        m0=m0,
        t0=t0,
        noise_seed=noise_seed,
    )


def _noise_stream(spec: TaskSpec, eval_seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((spec.noise_seed, eval_seed))))


def eval_task(spec: TaskSpec, x, eval_seed: int = 0, index: int = 0) -> float:
    """Noisy objective for one candidate; index is its population position."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != spec.dims:
        raise ValueError(f"candidate length {x.shape[0]} != task dims {spec.dims}")
    value = float(eval_function(spec.function_id, x + spec.offset))
    if spec.noise_level > 0.0:
        value += spec.noise_level * float(_noise_stream(spec, eval_seed).standard_normal(index + 1)[index])
    return value


def eval_task_batch(spec: TaskSpec, candidates: np.ndarray, eval_seed: int = 0) -> np.ndarray:
    """Vectorized eval_task over population rows; row j uses noise index j."""
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if candidates.shape[1] != spec.dims:
        raise ValueError(f"candidate length {candidates.shape[1]} != task dims {spec.dims}")
    values = eval_function(spec.function_id, candidates + spec.offset)
    if spec.noise_level > 0.0:
        values = values + spec.noise_level * _noise_stream(spec, eval_seed).standard_normal(
            candidates.shape[0]
        )
    return values


# ---------------------------------------------------------------------------
# Two-concentric-circles MLP classification

CIRCLES_N_POINTS = 512
CIRCLES_DATA_SEED = 711
_MLP_SHAPES = ((2, 16), (16,), (16, 16), (16,), (16, 1), (1,))
CIRCLES_PARAM_COUNT = sum(int(np.prod(s)) for s in _MLP_SHAPES)  # 337


@functools.cache
def circles_dataset() -> tuple[np.ndarray, np.ndarray]:
    """Fixed 512-point dataset: inner circle labeled 1, outer circle labeled 0."""
    rng = np.random.default_rng(CIRCLES_DATA_SEED)
    half = CIRCLES_N_POINTS // 2
    angles = rng.uniform(0.0, 2.0 * np.pi, CIRCLES_N_POINTS)
    radii = np.concatenate(
        [1.0 + 0.1 * rng.standard_normal(half), 2.0 + 0.1 * rng.standard_normal(half)]
    )
    points = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
    labels = np.concatenate([np.ones(half), np.zeros(half)])
    return points, labels


def _mlp_logits(params: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Forward pass for a batch of parameter vectors: (B, 337) -> (B, n_points)."""
    chunks = []
    pos = 0
    for shape in _MLP_SHAPES:
        size = int(np.prod(shape))
        chunks.append(params[:, pos : pos + size].reshape((params.shape[0],) + shape))
        pos += size
    w1, b1, w2, b2, w3, b3 = chunks
    h = np.tanh(np.einsum("ni,bij->bnj", points, w1) + b1[:, None, :])
    h = np.tanh(np.einsum("bnj,bjk->bnk", h, w2) + b2[:, None, :])
    return np.einsum("bnk,bko->bno", h, w3)[..., 0] + b3


def circles_loss(params: np.ndarray, points: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Mean binary cross-entropy of the sigmoid MLP; batched over params rows."""
    params = np.atleast_2d(np.asarray(params, dtype=float))
    if params.shape[1] != CIRCLES_PARAM_COUNT:
        raise ValueError(
            f"parameter vector length {params.shape[1]} != expected {CIRCLES_PARAM_COUNT}"
        )
    logits = _mlp_logits(params, points)
    return np.mean(np.logaddexp(0.0, logits) - logits * labels, axis=-1)


def circles_task(params, eval_seed: int = 0) -> float:
    """Classification loss of one flat parameter vector on the fixed dataset.

    eval_seed is accepted for interface symmetry with eval_task; the loss is
    deterministic.
    """
    points, labels = circles_dataset()
    return float(circles_loss(np.asarray(params, dtype=float).ravel()[None, :], points, labels)[0])


def circles_task_batch(param_matrix: np.ndarray, eval_seed: int = 0) -> np.ndarray:
    points, labels = circles_dataset()
    return circles_loss(param_matrix, points, labels)
