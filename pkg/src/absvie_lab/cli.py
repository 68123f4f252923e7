"""Command line runner: ``absvie-lab <subcommand> --config FILE --out DIR``.

Exit codes: 0 verdict pass, 2 verdict fail, 1 configuration or solver error.
Each run writes ``results.csv`` (long format: t, quantity, value, stderr) and
``manifest.json`` into the output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np
import pydantic
import scipy
import yaml

from . import __version__
from .absvie import ConvergenceError, GeneratorError
from .builtins import REGISTRY, Settings, catalog
from .config import KINDS, ExperimentConfig, load_config
from .game import NashConvergenceError
from .grid import GridError, make_grid, sample_paths
from .regress import Basis
from .sdvie import SimulationError

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "quantity", "value", "stderr"])
        for t, q, v, se in rows:
            w.writerow([_fmt(t), q, _fmt(v), _fmt(se)])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else repr(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def apply_overrides(cfg: ExperimentConfig, seed=None, paths=None, steps=None) -> ExperimentConfig:
    raw = cfg.model_dump()
    if seed is not None:
        raw["mc"]["seed"] = seed
    if paths is not None:
        raw["mc"]["paths"] = paths
    if steps is not None:
        raw["grid"]["steps"] = steps
    return ExperimentConfig.model_validate(raw)


def run(cfg: ExperimentConfig, out: Path, threads: int = 1) -> int:
    """Run one experiment, write its files and return the exit status."""
    builtin = REGISTRY.get(cfg.problem.name)
    if builtin is None:
        raise ValueError(f"unknown builtin {cfg.problem.name!r}; see `absvie-lab list-builtins`")
    if builtin.kind != cfg.kind:
        raise ValueError(f"builtin {builtin.name!r} belongs to {builtin.kind!r}, not {cfg.kind!r}")
    params = builtin.resolve(cfg.problem.params)
    durations = {}
    t0 = time.perf_counter()
    grid = make_grid(cfg.grid.T, cfg.grid.K, cfg.grid.steps)
    ens = sample_paths(grid, cfg.mc.paths, cfg.mc.dims, cfg.mc.seed, threads=threads)
    durations["paths"] = time.perf_counter() - t0
    t1 = time.perf_counter()
    settings = Settings(tol=cfg.solver.tol, maxIter=cfg.solver.max_iter, damping=cfg.solver.damping)
    outcome = builtin.run(params, ens, Basis(degree=cfg.basis.degree), settings)
    durations["solve"] = time.perf_counter() - t1
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "results.csv", outcome.rows)
    manifest = {
        "config": cfg.model_dump(mode="json"),
        "config_hash": cfg.content_hash(),
        "params": params,
        "seed": cfg.mc.seed,
        "versions": {
            "absvie_lab": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "durations": durations,
        "diagnostics": outcome.diagnostics,
        "verdict": "pass" if outcome.verdict else "fail",
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)
    return EXIT_PASS if outcome.verdict else EXIT_FAIL


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="absvie-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        s = sub.add_parser(kind, help=f"run a {kind} experiment")
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--out", required=True, type=Path)
        s.add_argument("--seed", type=int)
        s.add_argument("--paths", type=int)
        s.add_argument("--steps", type=int)
        s.add_argument("--threads", type=int, default=1)
    lb = sub.add_parser("list-builtins", help="print the builtin problem catalog")
    lb.add_argument("--json", action="store_true", help="machine-readable output")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-builtins":
        cat = catalog()
        if args.json:
            print(json.dumps(cat, indent=2))
        else:
            for b in cat:
                params = ", ".join(f"{k}={v}" for k, v in b["params"].items())
                print(f"{b['kind']:18s} {b['name']:24s} {b['description']}")
                print(f"{'':18s} {'':24s} params: {params}")
        return EXIT_PASS
    try:
        cfg = load_config(args.config)
        if cfg.kind != args.command:
            raise ValueError(f"config kind {cfg.kind!r} does not match subcommand {args.command!r}")
        cfg = apply_overrides(cfg, args.seed, args.paths, args.steps)
        if args.threads < 1:
            raise ValueError("--threads must be at least 1")
        status = run(cfg, args.out, threads=args.threads)
    except (OSError, yaml.YAMLError, pydantic.ValidationError, GridError, ValueError) as exc:
        print(f"absvie-lab: configuration error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ConvergenceError, NashConvergenceError, GeneratorError, SimulationError, FloatingPointError) as exc:
        print(f"absvie-lab: solver error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    verdict = "pass" if status == EXIT_PASS else "fail"
    print(f"absvie-lab: {args.command} verdict {verdict}; results in {args.out}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
