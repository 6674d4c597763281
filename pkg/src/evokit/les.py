"""Learned evolution strategy.

Recombination weights come from a tiny self-attention block over the
population's fitness tokens; per-dimension learning rates come from an MLP
over evolution paths and a multi-timescale timestamp embedding. The whole
parameter set is a flat vector of a few hundred floats, which is what the
meta-training loop optimizes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .core import (
    DEFAULT_CLIP,
    SIGMA_EPS,
    ContractViolation,
    Population,
    SearchState,
    UpdateWeights,
    gaussian_update,
    sort_population,
)
from .shaping import fitness_features

N_TOKEN_FEATURES = 3
DEFAULT_TIMESCALES = (0.1, 0.5, 0.9)
DEFAULT_GAMMAS = (1, 3, 10, 30, 50, 100, 250, 500, 750, 1000, 1250, 1500, 2000)
CHECKPOINT_VERSION = 1
ATTENTION_SCALES = ("sqrt_dk", "sqrt_n")


@dataclass(frozen=True)
class LesConfig:
    """Architecture and update conventions, frozen into checkpoints.

    attention_scale: "sqrt_dk" scales attention logits by sqrt(d_k) (default),
        "sqrt_n" by sqrt(popsize).
    literal_appendix_path: switch the evolution-path update from the standard
        EMA p' = (1-a)p + a*delta to the alternative p' = (1-a)p + a*(delta-p).
    """

    d_k: int = 8
    hidden: int = 8
    attention_scale: str = "sqrt_dk"
    literal_appendix_path: bool = False
    timescales: tuple = DEFAULT_TIMESCALES
    gammas: tuple = DEFAULT_GAMMAS
    clip: float = DEFAULT_CLIP

    def __post_init__(self):
        if self.attention_scale not in ATTENTION_SCALES:
            raise ValueError(f"attention_scale must be one of {ATTENTION_SCALES}")
        if self.d_k < 1 or self.hidden < 1:
            raise ValueError("d_k and hidden must be positive")

    @property
    def mlp_in(self) -> int:
        return 2 * len(self.timescales) + len(self.gammas)


@dataclass(frozen=True)
class LesParams:
    """Weights of the learned strategy; field order is the flat layout order."""

    w_q: np.ndarray  # (3, d_k)
    b_q: np.ndarray  # (d_k,)
    w_k: np.ndarray  # (3, d_k)
    b_k: np.ndarray  # (d_k,)
    w_v: np.ndarray  # (3, 1)
    b_v: np.ndarray  # (1,)
    w_mlp: np.ndarray  # (mlp_in, hidden)
    b_mlp: np.ndarray  # (hidden,)
    w_head_m: np.ndarray  # (hidden,)
    b_head_m: np.ndarray  # (1,)
    w_head_s: np.ndarray  # (hidden,)
    b_head_s: np.ndarray  # (1,)


def param_count(cfg: LesConfig = LesConfig()) -> int:
    """Closed-form size of the flat parameter vector (246 at defaults)."""
    qk = 2 * (N_TOKEN_FEATURES * cfg.d_k + cfg.d_k)
    v = N_TOKEN_FEATURES + 1
    mlp = cfg.mlp_in * cfg.hidden + cfg.hidden
    heads = 2 * (cfg.hidden + 1)
    return qk + v + mlp + heads


def _param_shapes(cfg: LesConfig):
    return (
        ("w_q", (N_TOKEN_FEATURES, cfg.d_k)),
        ("b_q", (cfg.d_k,)),
        ("w_k", (N_TOKEN_FEATURES, cfg.d_k)),
        ("b_k", (cfg.d_k,)),
        ("w_v", (N_TOKEN_FEATURES, 1)),
        ("b_v", (1,)),
        ("w_mlp", (cfg.mlp_in, cfg.hidden)),
        ("b_mlp", (cfg.hidden,)),
        ("w_head_m", (cfg.hidden,)),
        ("b_head_m", (1,)),
        ("w_head_s", (cfg.hidden,)),
        ("b_head_s", (1,)),
    )


def zero_params(cfg: LesConfig = LesConfig()) -> LesParams:
    return LesParams(**{name: np.zeros(shape) for name, shape in _param_shapes(cfg)})


def random_params(rng: np.random.Generator, cfg: LesConfig = LesConfig(), scale: float = 0.1) -> LesParams:
    return unflatten_params(scale * rng.standard_normal(param_count(cfg)), cfg)


def flatten_params(params: LesParams) -> np.ndarray:
    """Canonical flat layout: field order as declared, row-major within each."""
    return np.concatenate([np.asarray(getattr(params, f.name)).ravel() for f in fields(LesParams)])


def unflatten_params(flat: np.ndarray, cfg: LesConfig = LesConfig()) -> LesParams:
    flat = np.asarray(flat, dtype=float).ravel()
    expected = param_count(cfg)
    if flat.shape[0] != expected:
        raise ValueError(f"flat parameter vector has length {flat.shape[0]}, expected {expected}")
    out = {}
    pos = 0
    for name, shape in _param_shapes(cfg):
        size = int(np.prod(shape))
        out[name] = flat[pos : pos + size].reshape(shape).copy()
        pos += size
    return LesParams(**out)


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _check_finite(params: LesParams):
    for f in fields(LesParams):
        if not np.all(np.isfinite(getattr(params, f.name))):
            raise ContractViolation(f"non-finite values in parameter {f.name}")


def attention_weights(
    params: LesParams, tokens: np.ndarray, scale_mode: str = "sqrt_dk"
) -> np.ndarray:
    """Simplex recombination weights from self-attention over fitness tokens.

    w = softmax( rowsoftmax(Q K^T / scale) V ) with Q, K, V linear in the
    (N, 3) token matrix.
    """
    _check_finite(params)
    tokens = np.atleast_2d(np.asarray(tokens, dtype=float))
    n = tokens.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 population members, got {n}")
    q = tokens @ params.w_q + params.b_q
    k = tokens @ params.w_k + params.b_k
    v = tokens @ params.w_v + params.b_v
    if scale_mode == "sqrt_dk":
        scale = np.sqrt(params.w_q.shape[1])
    elif scale_mode == "sqrt_n":
        scale = np.sqrt(n)
    else:
        raise ValueError(f"unknown attention scale mode {scale_mode!r}")
    attn = _softmax(q @ k.T / scale, axis=1)
    return _softmax((attn @ v).ravel())


def timestamp_embedding(t: int, gammas=DEFAULT_GAMMAS) -> np.ndarray:
    """tanh(t / gamma - 1) over the fixed grid of time constants."""
    return np.tanh(t / np.asarray(gammas, dtype=float) - 1.0)


def update_paths(
    paths: np.ndarray, delta: np.ndarray, timescales=DEFAULT_TIMESCALES, literal: bool = False
) -> np.ndarray:
    """Advance the (D, 3) evolution paths toward delta at each timescale.

    Default: p' = (1 - a) p + a delta. With literal=True:
    p' = (1 - a) p + a (delta - p).
    """
    paths = np.asarray(paths, dtype=float)
    delta = np.asarray(delta, dtype=float).ravel()
    alphas = np.asarray(timescales, dtype=float)
    if paths.ndim != 2 or paths.shape != (delta.shape[0], alphas.shape[0]):
        raise ValueError(
            f"paths shape {paths.shape} incompatible with delta length {delta.shape[0]} "
            f"and {alphas.shape[0]} timescales"
        )
    target = delta[:, None] - paths if literal else delta[:, None]
    return (1.0 - alphas) * paths + alphas * target


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def lrate_mlp(params: LesParams, path_c: np.ndarray, path_sigma: np.ndarray, embed: np.ndarray):
    """Per-dimension learning rates in (0, 1) from paths plus timestamp embedding.

    Accepts a single (3,) path row pair (returns two floats) or full (D, 3)
    matrices (returns two (D,) arrays). Weights are shared across dimensions.
    """
    _check_finite(params)
    single = np.asarray(path_c).ndim == 1
    pc = np.atleast_2d(np.asarray(path_c, dtype=float))
    ps = np.atleast_2d(np.asarray(path_sigma, dtype=float))
    embed = np.asarray(embed, dtype=float).ravel()
    x = np.concatenate([pc, ps, np.broadcast_to(embed, (pc.shape[0], embed.shape[0]))], axis=1)
    hidden = np.maximum(x @ params.w_mlp + params.b_mlp, 0.0)
    alpha_m = _sigmoid(hidden @ params.w_head_m + params.b_head_m[0])
    alpha_sigma = _sigmoid(hidden @ params.w_head_s + params.b_head_s[0])
    if single:
        return float(alpha_m[0]), float(alpha_sigma[0])
    return alpha_m, alpha_sigma


def les_tell_trace(
    state: SearchState, pop: Population, params: LesParams, cfg: LesConfig = LesConfig()
) -> tuple[SearchState, np.ndarray, np.ndarray, np.ndarray]:
    """les_tell plus the internals: (state', rank-ordered weights, alpha_m, alpha_sigma)."""
    pop = sort_population(pop)
    feats = fitness_features(pop.fitness, state.best_fitness)
    w = attention_weights(params, feats, cfg.attention_scale)
    diff = pop.candidates - state.mean
    weight_diff = w @ diff
    weight_noise = w @ (diff / np.maximum(state.sigma, SIGMA_EPS))
    new_pc = update_paths(state.path_c, weight_diff, cfg.timescales, cfg.literal_appendix_path)
    new_ps = update_paths(state.path_sigma, weight_noise, cfg.timescales, cfg.literal_appendix_path)
    embed = timestamp_embedding(state.gen_counter, cfg.gammas)
    alpha_m, alpha_sigma = lrate_mlp(params, new_pc, new_ps, embed)
    mid = replace(state, path_c=new_pc, path_sigma=new_ps)
    new_state = gaussian_update(mid, pop, UpdateWeights(w, alpha_m, alpha_sigma), clip=cfg.clip)
    return new_state, w, alpha_m, alpha_sigma


def les_tell(
    state: SearchState, pop: Population, params: LesParams, cfg: LesConfig = LesConfig()
) -> SearchState:
    """One full update: tokens -> attention weights -> paths -> learning rates
    -> Gaussian mean/sigma update.

    The population is first brought into canonical order so the result is
    bit-identical under any permutation of the caller's rows.
    """
    return les_tell_trace(state, pop, params, cfg)[0]


def save_checkpoint(path, params: LesParams, cfg: LesConfig = LesConfig(), extra: dict | None = None):
    """Write a JSON checkpoint; float round-trip is exact."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "d_k": cfg.d_k,
        "hidden": cfg.hidden,
        "attention_scale": cfg.attention_scale,
        "literal_appendix_path": cfg.literal_appendix_path,
        "params": [float(v) for v in flatten_params(params)],
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_checkpoint(path) -> tuple[LesParams, LesConfig, dict]:
    doc = json.loads(Path(path).read_text())
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r}")
    cfg = LesConfig(
        d_k=int(doc["d_k"]),
        hidden=int(doc["hidden"]),
        attention_scale=doc["attention_scale"],
        literal_appendix_path=bool(doc["literal_appendix_path"]),
    )
    params = unflatten_params(np.asarray(doc["params"], dtype=float), cfg)
    return params, cfg, doc.get("extra", {})
