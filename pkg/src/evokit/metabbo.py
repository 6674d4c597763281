"""Outer meta-training loop: evolve strategy parameters on sampled tasks.

Every candidate parameter vector in a meta-generation is scored on the same
task specs with the same inner start means and the same noise keys, so
meta-fitness differences come from the parameters alone.  The rollout grid is
embarrassingly parallel; results are placed by index, which keeps runs
bit-identical whether they execute serially or on a process pool.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import CmaState, ask_cma, cmaes_step, init_cma
from .core import ContractViolation, Population, SearchState, ask, init_state
from .les import (
    LesConfig,
    LesParams,
    flatten_params,
    les_tell,
    load_checkpoint,
    param_count,
    save_checkpoint,
    unflatten_params,
)
from .tasks import TASK_SETS, eval_task_batch, sample_task

# Stand-in value for non-finite fitness inside a tell: large enough to lose
# every comparison, small enough to keep z-scores finite.
BIG_FITNESS = 1e32

META_ES_KINDS = ("cma-es", "les-checkpoint", "self-referential")
AGGREGATES = ("median", "mean")

# Sub-stream tags so the master seed never feeds two purposes the same bits.
_TASK_STREAM = 101
_ASK_STREAM = 202
_ROLLOUT_STREAM = 303
_INIT_STREAM = 404


@dataclass(frozen=True)
class MetaConfig:
    """Settings for one meta-training run.

    Defaults are the full-scale recipe; tests and desk runs shrink
    meta_population, meta_tasks, and meta_generations.
    """

    meta_population: int = 256
    meta_tasks: int = 128
    inner_popsize: int = 16
    inner_generations: int = 50
    meta_generations: int = 1500
    meta_es: str = "cma-es"
    meta_sigma0: float = 0.1
    task_set: str = "medium"
    seed: int = 0
    max_dims: int | None = None
    aggregate: str = "median"
    selfref_interval: int = 5
    les: LesConfig = field(default_factory=LesConfig)
    driver_checkpoint: str | None = None

    def __post_init__(self):
        if self.meta_population < 2:
            raise ValueError("meta_population must be at least 2")
        if self.meta_tasks < 1:
            raise ValueError("meta_tasks must be at least 1")
        if self.inner_popsize < 2:
            raise ValueError("inner_popsize must be at least 2")
        if self.inner_generations < 1 or self.meta_generations < 1:
            raise ValueError("generation counts must be positive")
        if self.meta_es not in META_ES_KINDS:
            raise ValueError(f"meta_es must be one of {META_ES_KINDS}, got {self.meta_es!r}")
        if self.meta_sigma0 <= 0:
            raise ValueError("meta_sigma0 must be positive")
        if self.task_set not in TASK_SETS:
            raise ValueError(f"unknown task_set {self.task_set!r}")
        if self.aggregate not in AGGREGATES:
            raise ValueError(f"aggregate must be one of {AGGREGATES}")
        if self.selfref_interval < 1:
            raise ValueError("selfref_interval must be at least 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "MetaConfig":
        """Build from a parsed config file; unknown or missing keys raise."""
        known = {f.name for f in dataclasses.fields(cls)}
        for key in doc:
            if key not in known:
                raise ValueError(f"unknown config field {key!r}")
        if "task_set" not in doc:
            raise ValueError("config missing required field 'task_set'")
        kwargs = dict(doc)
        les_doc = kwargs.pop("les", None)
        les_cfg = LesConfig() if les_doc is None else _les_config_from_doc(les_doc)
        if "max_dims" in kwargs and kwargs["max_dims"] is not None:
            kwargs["max_dims"] = int(kwargs["max_dims"])
        return cls(les=les_cfg, **kwargs)


def _les_config_from_doc(doc: dict) -> LesConfig:
    known = {f.name for f in dataclasses.fields(LesConfig)}
    for key in doc:
        if key not in known:
            raise ValueError(f"unknown config field 'les.{key}'")
    kwargs = dict(doc)
    for key in ("timescales", "gammas"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return LesConfig(**kwargs)


def _config_doc(cfg: MetaConfig) -> dict:
    # json round-trip normalizes tuples to lists for stable comparison
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def inner_rollout(
    theta: LesParams,
    spec,
    generations: int,
    popsize: int,
    seed,
    les_cfg: LesConfig | None = None,
) -> np.ndarray:
    """Run the learned strategy on one task; returns raw fitness (popsize, generations).

    The generation counter starts at spec.t0 so the timestamp embedding sees
    the sampled phase.  Non-finite fitness is recorded as +inf and fed to the
    update as BIG_FITNESS so the run continues.
    """
    cfg = les_cfg if les_cfg is not None else LesConfig()
    rng = np.random.default_rng(seed)
    state = init_state(spec.dims, spec.m0, np.full(spec.dims, spec.sigma0))
    state = replace(state, gen_counter=int(spec.t0))
    raw = np.empty((popsize, generations))
    for g in range(generations):
        candidates = ask(state, rng, popsize)
        fitness = eval_task_batch(spec, candidates, eval_seed=g)
        raw[:, g] = np.where(np.isfinite(fitness), fitness, np.inf)
        safe = np.nan_to_num(fitness, nan=BIG_FITNESS, posinf=BIG_FITNESS, neginf=-BIG_FITNESS)
        state = les_tell(state, Population(candidates, safe), theta, cfg)
    return raw


def meta_fitness(raw: np.ndarray, aggregate: str = "median") -> np.ndarray:
    """Collapse a raw (N, T, K, M) score tensor to one value per member.

    Per member and task the score is the minimum over the whole rollout;
    scores are z-scored across members within each task and aggregated over
    tasks.  Lower is better.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 4:
        raise ContractViolation(f"raw tensor must have 4 axes, got {raw.ndim}")
    _, _, k, m = raw.shape
    if m < 2:
        raise ContractViolation("need at least 2 members to z-score")
    if k < 1:
        raise ContractViolation("need at least 1 task")
    s = raw.min(axis=(0, 1))  # (K, M)
    s = np.nan_to_num(s, nan=1e300, posinf=1e300, neginf=-1e300)
    # A sentinel score overflows the variance to inf; that task z-scores to
    # zeros instead of poisoning the aggregate with NaN.
    with np.errstate(over="ignore"):
        z = (s - s.mean(axis=1, keepdims=True)) / (s.std(axis=1, keepdims=True) + 1e-10)
    if aggregate == "median":
        return np.median(z, axis=0)
    if aggregate == "mean":
        return z.mean(axis=0)
    raise ValueError(f"aggregate must be one of {AGGREGATES}, got {aggregate!r}")


def _rollout_job(args):
    flat, spec, seed_key, generations, popsize, les_cfg = args
    theta = unflatten_params(np.asarray(flat, dtype=float), les_cfg)
    return inner_rollout(theta, spec, generations, popsize, seed_key, les_cfg)


def _evaluate_grid(thetas: np.ndarray, tasks, cfg: MetaConfig, threads: int, gen: int) -> np.ndarray:
    m = thetas.shape[0]
    jobs = [
        (thetas[i], tasks[k], (cfg.seed, _ROLLOUT_STREAM, gen, k), cfg.inner_generations, cfg.inner_popsize, cfg.les)
        for k in range(len(tasks))
        for i in range(m)
    ]
    if threads == 1:
        results = [_rollout_job(job) for job in jobs]
    else:
        workers = threads if threads > 0 else (os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_rollout_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    raw = np.empty((cfg.inner_popsize, cfg.inner_generations, len(tasks), m))
    pos = 0
    for k in range(len(tasks)):
        for i in range(m):
            raw[:, :, k, i] = results[pos]
            pos += 1
    return raw


# ---------------------------------------------------------------------------
# Meta-ES drivers


class _CmaDriver:
    kind = "cma-es"

    def __init__(self, dims: int, sigma0: float):
        self.state = init_cma(np.zeros(dims), float(sigma0))

    def ask(self, rng, popsize):
        return ask_cma(self.state, rng, popsize)

    def tell(self, thetas, fitness):
        self.state = cmaes_step(self.state, thetas, fitness)

    @property
    def n_regularized(self) -> int:
        return int(self.state.n_regularized)

    def to_doc(self) -> dict:
        s = self.state
        return {
            "kind": self.kind,
            "mean": s.mean.tolist(),
            "step_size": float(s.step_size),
            "cov": s.cov.tolist(),
            "p_sigma": s.p_sigma.tolist(),
            "p_c": s.p_c.tolist(),
            "t": int(s.t),
            "n_regularized": int(s.n_regularized),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "_CmaDriver":
        driver = cls.__new__(cls)
        driver.state = CmaState(
            mean=np.asarray(doc["mean"], dtype=float),
            step_size=float(doc["step_size"]),
            cov=np.asarray(doc["cov"], dtype=float),
            p_sigma=np.asarray(doc["p_sigma"], dtype=float),
            p_c=np.asarray(doc["p_c"], dtype=float),
            t=int(doc["t"]),
            n_regularized=int(doc["n_regularized"]),
        )
        return driver


class _LesDriver:
    """Meta-search driven by a fixed learned strategy loaded from a checkpoint."""

    kind = "les-checkpoint"

    def __init__(self, dims: int, sigma0: float, params: LesParams, les_cfg: LesConfig, mean=None):
        m0 = np.zeros(dims) if mean is None else np.asarray(mean, dtype=float)
        self.state = init_state(dims, m0, np.full(dims, float(sigma0)))
        self.params = params
        self.les_cfg = les_cfg

    def ask(self, rng, popsize):
        return ask(self.state, rng, popsize)

    def tell(self, thetas, fitness):
        self.state = les_tell(self.state, Population(thetas, fitness), self.params, self.les_cfg)

    @property
    def n_regularized(self) -> int:
        return 0

    def to_doc(self) -> dict:
        s = self.state
        return {
            "kind": self.kind,
            "mean": s.mean.tolist(),
            "sigma": s.sigma.tolist(),
            "gen_counter": int(s.gen_counter),
            "best_fitness": float(s.best_fitness),
            "path_c": s.path_c.tolist(),
            "path_sigma": s.path_sigma.tolist(),
            "params": flatten_params(self.params).tolist(),
            "les_cfg": json.loads(json.dumps(dataclasses.asdict(self.les_cfg))),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "_LesDriver":
        driver = cls.__new__(cls)
        driver._restore(doc)
        return driver

    def _restore(self, doc: dict):
        self.state = SearchState(
            mean=np.asarray(doc["mean"], dtype=float),
            sigma=np.asarray(doc["sigma"], dtype=float),
            gen_counter=int(doc["gen_counter"]),
            best_fitness=float(doc["best_fitness"]),
            path_c=np.asarray(doc["path_c"], dtype=float),
            path_sigma=np.asarray(doc["path_sigma"], dtype=float),
        )
        self.les_cfg = _les_config_from_doc(doc["les_cfg"])
        self.params = unflatten_params(np.asarray(doc["params"], dtype=float), self.les_cfg)


class _SelfRefDriver(_LesDriver):
    """Meta-search driven by the same kind of strategy it is searching for."""

    kind = "self-referential"

    def replace_with(self, best_theta: np.ndarray, sigma: float):
        # hill-climb step: adopt the best candidate as both driver and search mean
        self.params = unflatten_params(best_theta, self.les_cfg)
        self.state = replace(
            self.state,
            mean=np.asarray(best_theta, dtype=float).copy(),
            sigma=np.full(self.state.dims, float(sigma)),
        )


def _make_driver(cfg: MetaConfig, dims: int):
    if cfg.meta_es == "cma-es":
        return _CmaDriver(dims, cfg.meta_sigma0)
    if cfg.meta_es == "les-checkpoint":
        if cfg.driver_checkpoint is None:
            raise ValueError("meta_es 'les-checkpoint' requires driver_checkpoint")
        params, driver_cfg, _ = load_checkpoint(cfg.driver_checkpoint)
        return _LesDriver(dims, cfg.meta_sigma0, params, driver_cfg)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, _INIT_STREAM)))
    theta_meta = 0.1 * rng.standard_normal(dims)
    params = unflatten_params(theta_meta, cfg.les)
    return _SelfRefDriver(dims, cfg.meta_sigma0, params, cfg.les, mean=theta_meta)


def _driver_from_doc(doc: dict):
    for cls in (_CmaDriver, _LesDriver, _SelfRefDriver):
        if doc["kind"] == cls.kind:
            return cls.from_doc(doc)
    raise ValueError(f"unknown driver kind {doc['kind']!r}")


# ---------------------------------------------------------------------------
# Run loop


def _task_hash(tasks) -> str:
    blob = json.dumps([t.to_dict() for t in tasks], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _run_loop(cfg, out_dir, threads, resume_doc, manifest_ref, verbose):
    dims = param_count(cfg.les)
    task_set = TASK_SETS[cfg.task_set]
    header = {
        "record": "header",
        "format_version": 1,
        "manifest": manifest_ref,
        "config": _config_doc(cfg),
    }

    if resume_doc is None:
        driver = _make_driver(cfg, dims)
        start_gen = 0
        best_so_far = np.inf
        best_theta = None
        last_check_best = np.inf
        records: list[dict] = []
    else:
        # meta_generations may grow on resume; nothing per-generation depends on it
        want = {k: v for k, v in _config_doc(cfg).items() if k != "meta_generations"}
        got = {k: v for k, v in resume_doc["config"].items() if k != "meta_generations"}
        if json.dumps(want, sort_keys=True) != json.dumps(got, sort_keys=True):
            raise ValueError("resume snapshot was written with a different config")
        driver = _driver_from_doc(resume_doc["driver"])
        start_gen = int(resume_doc["next_generation"])
        best_so_far = float(resume_doc["best_so_far"])
        best_theta = resume_doc["best_theta"]
        best_theta = None if best_theta is None else np.asarray(best_theta, dtype=float)
        last_check_best = float(resume_doc["last_check_best"])
        records = list(resume_doc["records"])

    log_path = ckpt_path = resume_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "meta_log.jsonl")
        ckpt_path = os.path.join(out_dir, "checkpoint_best.json")
        resume_path = os.path.join(out_dir, "resume.json")
        with open(log_path, "w") as fh:
            for doc in (header, *records):
                fh.write(json.dumps(doc) + "\n")

    for gen in range(start_gen, cfg.meta_generations):
        t_start = time.monotonic()
        task_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, _TASK_STREAM, gen)))
        tasks = [sample_task(task_rng, task_set, cfg.max_dims) for _ in range(cfg.meta_tasks)]
        ask_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, _ASK_STREAM, gen)))
        thetas = driver.ask(ask_rng, cfg.meta_population)
        raw = _evaluate_grid(thetas, tasks, cfg, threads, gen)
        scores = meta_fitness(raw, cfg.aggregate)
        driver.tell(thetas, scores)

        i_best = int(np.argmin(scores))
        gen_best = float(scores[i_best])
        improved = gen_best < best_so_far
        if improved:
            best_so_far = gen_best
            best_theta = thetas[i_best].copy()
            if ckpt_path is not None:
                save_checkpoint(
                    ckpt_path,
                    unflatten_params(best_theta, cfg.les),
                    cfg.les,
                    extra={
                        "meta_generation": gen,
                        "meta_fitness": best_so_far,
                        "master_seed": int(cfg.seed),
                        "manifest": manifest_ref,
                    },
                )

        replaced = False
        sigma_after = None
        if cfg.meta_es == "self-referential" and (gen + 1) % cfg.selfref_interval == 0:
            if best_so_far < last_check_best and best_theta is not None:
                driver.replace_with(best_theta, cfg.meta_sigma0)
                replaced = True
                sigma_after = float(cfg.meta_sigma0)
            last_check_best = best_so_far

        record = {
            "meta_generation": gen,
            "best_meta_fitness": gen_best,
            "median_meta_fitness": float(np.median(scores)),
            "best_so_far": float(best_so_far),
            "improved": bool(improved),
            "replaced": replaced,
            "sigma_after_reset": sigma_after,
            "checkpoint": None if ckpt_path is None else os.path.basename(ckpt_path),
            "task_hash": _task_hash(tasks),
            "master_seed": int(cfg.seed),
            "n_regularized": driver.n_regularized,
            "wall_clock_s": round(time.monotonic() - t_start, 6),
        }
        records.append(record)
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(record) + "\n")
        if resume_path is not None:
            snapshot = {
                "format_version": 1,
                "manifest": manifest_ref,
                "config": _config_doc(cfg),
                "next_generation": gen + 1,
                "best_so_far": best_so_far,
                "best_theta": None if best_theta is None else best_theta.tolist(),
                "last_check_best": last_check_best,
                "records": records,
                "driver": driver.to_doc(),
            }
            tmp = resume_path + ".tmp"
            with open(tmp, "w") as fh:
                json.dump(snapshot, fh)
            os.replace(tmp, resume_path)
        if verbose:
            print(f"meta-gen {gen}: best {gen_best:.4f}, best so far {best_so_far:.4f}")

    return unflatten_params(best_theta, cfg.les), [header, *records]


def metabbo_run(
    cfg: MetaConfig,
    out_dir: str | None = None,
    threads: int = 1,
    resume_from: str | None = None,
    manifest_ref: str | None = None,
    verbose: bool = False,
) -> tuple[LesParams, list[dict]]:
    """Run meta-training; returns the best parameters and the full log.

    The log is the header record followed by one record per meta-generation.
    With out_dir set, writes meta_log.jsonl, checkpoint_best.json, and a
    resume.json snapshot after every meta-generation.
    """
    resume_doc = None
    if resume_from is not None:
        with open(resume_from) as fh:
            resume_doc = json.load(fh)
        if resume_doc.get("format_version") != 1:
            raise ValueError("unsupported resume snapshot version")
    return _run_loop(cfg, out_dir, threads, resume_doc, manifest_ref, verbose)


def selfref_run(cfg: MetaConfig, **kwargs) -> tuple[LesParams, list[dict]]:
    """metabbo_run restricted to the self-referential meta-ES."""
    if cfg.meta_es != "self-referential":
        raise ValueError("selfref_run requires meta_es='self-referential'")
    return metabbo_run(cfg, **kwargs)
