"""Command-line front end.

Subcommands: meta-train, selfref-train, evolve, benchmark, inspect, fit-beta.
Every command is deterministic under (config, seed), writes its outputs under
--out, and drops a manifest.json describing what produced them.  CSV files are
comma-separated with '.' decimals and LF line endings; the first comment line
names the schema.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__
from .core import Population, ask, init_state
from .des import DEFAULT_BETA, des_weights
from .les import LesConfig, les_tell_trace, load_checkpoint, zero_params
from .metabbo import MetaConfig, metabbo_run, selfref_run
from .runner import STRATEGY_NAMES, make_strategy, run_strategy, task_objective
from .tasks import FUNCTIONS, TaskSpec, eval_task_batch


def _write_csv(path: str, schema: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {schema} {','.join(header)}\n")
        fh.write("# manifest: manifest.json\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_manifest(out_dir: str, command: str, config: dict, seed: int, outputs: list[str], started: str, elapsed: float) -> None:
    doc = {
        "command": command,
        "package_version": __version__,
        "seed": int(seed),
        "config": config,
        "outputs": outputs,
        "started_at": started,
        "elapsed_s": round(elapsed, 3),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _sample_spec(seed_key, function_id: str, dims: int, noise_level: float, sigma0: float) -> TaskSpec:
    """One task instance with offset and start mean drawn from the seed."""
    rng = np.random.default_rng(np.random.SeedSequence(seed_key))
    offset = rng.uniform(-5.0, 5.0, dims)
    m0 = rng.uniform(-5.0, 5.0, dims)
    noise_seed = int(rng.integers(0, 2**63))
    return TaskSpec(
        function_id=function_id,
        dims=dims,
        offset=offset,
        noise_level=noise_level,
        m0=m0,
        t0=0,
        sigma0=sigma0,
        noise_seed=noise_seed,
    )


# ---------------------------------------------------------------------------
# meta-train / selfref-train


def _load_meta_config(path: str, seed_override: int | None) -> MetaConfig:
    with open(path) as fh:
        doc = json.load(fh)
    cfg = MetaConfig.from_dict(doc)
    if seed_override is not None:
        cfg = replace(cfg, seed=seed_override)
    return cfg


def _run_meta(args, self_referential: bool) -> int:
    started = _now()
    t0 = time.monotonic()
    cfg = _load_meta_config(args.config, args.seed)
    if self_referential and cfg.meta_es != "self-referential":
        # the subcommand is a more specific request than the config default
        cfg = replace(cfg, meta_es="self-referential")
    os.makedirs(args.out, exist_ok=True)
    runner = selfref_run if self_referential else metabbo_run
    _, log = runner(
        cfg,
        out_dir=args.out,
        threads=args.threads,
        resume_from=args.resume,
        manifest_ref="manifest.json",
    )
    outputs = ["meta_log.jsonl", "checkpoint_best.json", "resume.json"]
    command = "selfref-train" if self_referential else "meta-train"
    _write_manifest(args.out, command, log[0]["config"], cfg.seed, outputs, started, time.monotonic() - t0)
    last = log[-1]
    print(f"{command}: {last['meta_generation'] + 1} meta-generations, best {last['best_so_far']:.6f} -> {args.out}")
    return 0


def cmd_meta_train(args) -> int:
    return _run_meta(args, self_referential=False)


def cmd_selfref_train(args) -> int:
    return _run_meta(args, self_referential=True)


# ---------------------------------------------------------------------------
# evolve


def cmd_evolve(args) -> int:
    started = _now()
    t0 = time.monotonic()
    seed = 0 if args.seed is None else args.seed
    spec = _sample_spec((seed, 11), args.task, args.dims, args.noise_level, args.sigma0)
    strategy = make_strategy(args.strategy, checkpoint=args.checkpoint, beta=args.beta)
    result = run_strategy(
        strategy,
        task_objective(spec),
        spec.m0,
        spec.sigma0,
        args.generations,
        args.popsize,
        np.random.SeedSequence((seed, 12)),
    )
    os.makedirs(args.out, exist_ok=True)
    header = ["generation", "best_fitness", "mean_fitness", "best_so_far"]
    rows = [
        [g, result.best[g], result.mean[g], result.best_so_far[g]]
        for g in range(args.generations)
    ]
    _write_csv(os.path.join(args.out, "evolve.csv"), "evolve-v1", header, rows)
    config = {
        "strategy": args.strategy,
        "task": spec.to_dict(),
        "generations": args.generations,
        "popsize": args.popsize,
        "checkpoint": args.checkpoint,
        "beta": args.beta,
    }
    _write_manifest(args.out, "evolve", config, seed, ["evolve.csv"], started, time.monotonic() - t0)
    print(f"evolve: {args.strategy} on {args.task} D={args.dims}, final best {result.best_so_far[-1]:.6g} -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# benchmark


def _benchmark_job(job):
    name, checkpoint, beta, spec_doc, run_key, generations, popsize = job
    spec = TaskSpec.from_dict(spec_doc)
    strategy = make_strategy(name, checkpoint=checkpoint, beta=beta)
    result = run_strategy(
        strategy,
        task_objective(spec),
        spec.m0,
        spec.sigma0,
        generations,
        popsize,
        np.random.SeedSequence(run_key),
    )
    return float(result.best_so_far[-1])


def cmd_benchmark(args) -> int:
    started = _now()
    t0 = time.monotonic()
    seed = 0 if args.seed is None else args.seed
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    functions = [f.strip() for f in args.tasks.split(",") if f.strip()]
    dims_list = [int(d) for d in args.dims.split(",") if d.strip()]
    if not strategies or not functions or not dims_list:
        raise ValueError("benchmark needs at least one strategy, task, and dimension")
    for name in strategies:
        if name not in STRATEGY_NAMES:
            raise ValueError(f"unknown strategy {name!r}; known: {', '.join(STRATEGY_NAMES)}")
    for fid in functions:
        if fid not in FUNCTIONS:
            raise ValueError(f"unknown task {fid!r}")

    jobs = []
    keys = []
    for si, name in enumerate(strategies):
        for fi, fid in enumerate(functions):
            for di, dims in enumerate(dims_list):
                for rep in range(args.repeats):
                    # task draw shared across strategies so comparisons are paired
                    spec = _sample_spec((seed, 21, fi, di, rep), fid, dims, args.noise_level, args.sigma0)
                    run_key = (seed, 22, si, fi, di, rep)
                    jobs.append((name, args.checkpoint, args.beta, spec.to_dict(), run_key, args.generations, args.popsize))
                    keys.append((name, fid, dims, rep))
    if args.threads == 1:
        scores = [_benchmark_job(job) for job in jobs]
    else:
        workers = args.threads if args.threads > 0 else (os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(_benchmark_job, jobs))

    by_cell: dict[tuple, list[float]] = {}
    for (name, fid, dims, rep), score in zip(keys, scores):
        by_cell.setdefault((fid, dims), []).append(score)
    rows = []
    for (name, fid, dims, rep), score in zip(keys, scores):
        cell = by_cell[(fid, dims)]
        lo, hi = min(cell), max(cell)
        norm = 0.0 if hi == lo else (score - lo) / (hi - lo)
        rows.append([name, fid, dims, rep, seed, score, norm])

    os.makedirs(args.out, exist_ok=True)
    header = ["strategy", "function", "dims", "repeat", "seed", "final_best", "normalized"]
    _write_csv(os.path.join(args.out, "benchmark.csv"), "benchmark-v1", header, rows)
    config = {
        "strategies": strategies,
        "functions": functions,
        "dims": dims_list,
        "repeats": args.repeats,
        "generations": args.generations,
        "popsize": args.popsize,
        "sigma0": args.sigma0,
        "noise_level": args.noise_level,
        "checkpoint": args.checkpoint,
        "beta": args.beta,
    }
    _write_manifest(args.out, "benchmark", config, seed, ["benchmark.csv"], started, time.monotonic() - t0)
    print(f"benchmark: {len(rows)} rows -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# inspect


def cmd_inspect(args) -> int:
    started = _now()
    t0 = time.monotonic()
    seed = 0 if args.seed is None else args.seed
    if args.checkpoint is not None:
        params, cfg, _ = load_checkpoint(args.checkpoint)
    else:
        cfg = LesConfig()
        params = zero_params(cfg)
    spec = _sample_spec((seed, 31), args.task, args.dims, args.noise_level, args.sigma0)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 32)))
    state = init_state(spec.dims, spec.m0, np.full(spec.dims, spec.sigma0))
    rows = []
    for gen in range(args.generations):
        candidates = ask(state, rng, args.popsize)
        fitness = eval_task_batch(spec, candidates, eval_seed=gen)
        state, weights, alpha_m, alpha_s = les_tell_trace(state, Population(candidates, fitness), params, cfg)
        for j, value in enumerate(weights):  # index = rank position, best first
            rows.append([gen, "weight", j, value])
        for d in range(spec.dims):
            rows.append([gen, "alpha_mean", d, alpha_m[d]])
        for d in range(spec.dims):
            rows.append([gen, "alpha_sigma", d, alpha_s[d]])

    os.makedirs(args.out, exist_ok=True)
    header = ["generation", "kind", "index", "value"]
    _write_csv(os.path.join(args.out, "inspect.csv"), "inspect-v1", header, rows)
    config = {
        "checkpoint": args.checkpoint,
        "task": spec.to_dict(),
        "generations": args.generations,
        "popsize": args.popsize,
    }
    _write_manifest(args.out, "inspect", config, seed, ["inspect.csv"], started, time.monotonic() - t0)
    print(f"inspect: {args.generations} generations traced -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# fit-beta


def _golden_section(fn, lo: float, hi: float, tol: float = 1e-6) -> float:
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - ratio * (b - a)
    d = a + ratio * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - ratio * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + ratio * (b - a)
            fd = fn(d)
    return (a + b) / 2.0


def _fit_temperature(fn, lo: float = 1e-6, hi: float = 100.0) -> float:
    # the loss need not be unimodal over the whole range (flat data has a
    # second dip at the saturated end), so bracket with a log grid first
    grid = np.geomspace(lo, hi, 200)
    values = [fn(b) for b in grid]
    i = int(np.argmin(values))
    return _golden_section(fn, grid[max(0, i - 1)], grid[min(len(grid) - 1, i + 1)])


def _read_weight_matrix(path: str) -> np.ndarray:
    """Weight rows of an inspect CSV as a (generations, popsize) matrix."""
    per_gen: dict[int, dict[int, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = None
        for row in reader:
            if not row or row[0].startswith("#"):
                continue
            if header is None:
                header = row
                if header != ["generation", "kind", "index", "value"]:
                    raise ValueError(f"unexpected CSV header {header!r}")
                continue
            gen, kind, index, value = row
            if kind != "weight":
                continue
            per_gen.setdefault(int(gen), {})[int(index)] = float(value)
    if not per_gen:
        raise ValueError("no weight rows found in CSV")
    popsize = max(max(d) for d in per_gen.values()) + 1
    matrix = np.empty((len(per_gen), popsize))
    for i, gen in enumerate(sorted(per_gen)):
        if len(per_gen[gen]) != popsize:
            raise ValueError(f"generation {gen} has {len(per_gen[gen])} weights, expected {popsize}")
        matrix[i] = [per_gen[gen][j] for j in range(popsize)]
    return matrix


def cmd_fit_beta(args) -> int:
    started = _now()
    t0 = time.monotonic()
    seed = 0 if args.seed is None else args.seed
    matrix = _read_weight_matrix(args.csv)
    popsize = matrix.shape[1]

    def objective(beta: float) -> float:
        return float(((matrix - des_weights(popsize, beta)) ** 2).sum())

    beta = _fit_temperature(objective)
    residual = objective(beta)
    os.makedirs(args.out, exist_ok=True)
    doc = {
        "beta": beta,
        "residual": residual,
        "generations": int(matrix.shape[0]),
        "popsize": int(popsize),
        "source_csv": args.csv,
        "manifest": "manifest.json",
    }
    with open(os.path.join(args.out, "fit.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    _write_manifest(args.out, "fit-beta", {"csv": args.csv}, seed, ["fit.json"], started, time.monotonic() - t0)
    print(f"fit-beta: beta={beta:.4f} residual={residual:.6e} -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evokit", description="Evolution-strategy toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed")

    p = sub.add_parser("meta-train", help="meta-train strategy parameters")
    add_common(p)
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--threads", type=int, default=1, help="rollout workers, 0 = auto")
    p.add_argument("--resume", default=None, help="resume.json from an earlier run")
    p.set_defaults(func=cmd_meta_train)

    p = sub.add_parser("selfref-train", help="meta-train with the self-referential driver")
    add_common(p)
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--threads", type=int, default=1, help="rollout workers, 0 = auto")
    p.add_argument("--resume", default=None, help="resume.json from an earlier run")
    p.set_defaults(func=cmd_selfref_train)

    p = sub.add_parser("evolve", help="run one strategy on one task")
    add_common(p)
    p.add_argument("--strategy", required=True, choices=STRATEGY_NAMES)
    p.add_argument("--task", default="sphere", choices=tuple(FUNCTIONS))
    p.add_argument("--dims", type=int, default=10)
    p.add_argument("--generations", type=int, default=100)
    p.add_argument("--popsize", type=int, default=16)
    p.add_argument("--noise-level", type=float, default=0.0)
    p.add_argument("--sigma0", type=float, default=1.0)
    p.add_argument("--checkpoint", default=None, help="parameter checkpoint for the les strategy")
    p.add_argument("--beta", type=float, default=DEFAULT_BETA)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("benchmark", help="strategy grid over tasks and dimensions")
    add_common(p)
    p.add_argument("--strategies", required=True, help="comma-separated strategy names")
    p.add_argument("--tasks", required=True, help="comma-separated task names")
    p.add_argument("--dims", required=True, help="comma-separated dimensions")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--generations", type=int, default=50)
    p.add_argument("--popsize", type=int, default=16)
    p.add_argument("--noise-level", type=float, default=0.0)
    p.add_argument("--sigma0", type=float, default=1.0)
    p.add_argument("--threads", type=int, default=1, help="parallel runs, 0 = auto")
    p.add_argument("--checkpoint", default=None, help="parameter checkpoint for the les strategy")
    p.add_argument("--beta", type=float, default=DEFAULT_BETA)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("inspect", help="trace recombination weights and learning rates")
    add_common(p)
    p.add_argument("--checkpoint", default=None, help="checkpoint to trace; zero parameters if omitted")
    p.add_argument("--task", default="sphere", choices=tuple(FUNCTIONS))
    p.add_argument("--dims", type=int, default=2)
    p.add_argument("--generations", type=int, default=25)
    p.add_argument("--popsize", type=int, default=16)
    p.add_argument("--noise-level", type=float, default=0.0)
    p.add_argument("--sigma0", type=float, default=1.0)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("fit-beta", help="fit the softmax temperature to traced weights")
    add_common(p)
    p.add_argument("--csv", required=True, help="inspect CSV with weight rows")
    p.set_defaults(func=cmd_fit_beta)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def console_main() -> None:
    sys.exit(main())
