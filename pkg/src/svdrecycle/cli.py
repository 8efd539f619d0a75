"""Command-line driver: single runs, parameter sweeps and cost-model maps.

Every subcommand reads one JSON document.  Unknown keys are rejected.

``run``::

    {"problem": {"N": 32, "nu": 0.1, "dt": 0.5, "n_steps": 200, "C": 0.1, "seed": 0},
     "solver": {"restart": 30, "rel_tol": 1e-8, "max_restarts": 500},
     "method": "aug-oblique",
     "guess": "project",
     "window": {"m": 20, "s": 20, "interval": 1, "mode": "largest"},
     "preconditioner": {"kind": "ssor", "omega": 1.0},
     "composition": "preconditioner-after-projector",
     "output": "run.csv",
     "export_steps": []}

``sweep``::

    {"base": {<run config>},
     "restart": {"start": 10, "stop": 60, "step": 2},
     "recycle_dim": {"start": 10, "stop": 60, "step": 2},
     "interval": [1],
     "workers": 4,
     "output": "sweep.csv"}

``cost``::

    {"params": {"m": 1e6, "n": 30, "b": 300, "s": 60, "r": 3},
     "k": {"start": 10, "stop": 60, "step": 2},
     "ratio_percent": {"start": 0, "stop": 50, "step": 2},
     "point": {"k": 20, "ratio_percent": 30, "ell": 1000},
     "output": "cost_map.csv"}

Ranges are inclusive and may also be given as explicit lists.  The
``SVDRECYCLE_WORKERS`` environment variable overrides the sweep worker count.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from .convdiff import (ProblemParams, SequenceConfig, export_matrix_market, export_vector,
                       iteration_stats, run_sequence)
from .costmodel import CostParams, cost_baseline, cost_recycled, interval_map, min_interval
from .recycle import Composition, InitialGuess, RecycleMethod
from .svdwindow import SvdMode

__all__ = ["ConfigError", "RunConfig", "SweepConfig", "CostConfig", "parse_run_config",
           "parse_sweep_config", "parse_cost_config", "cmd_run", "cmd_sweep", "cmd_cost",
           "main"]

WORKERS_ENV = "SVDRECYCLE_WORKERS"
RUN_COLUMNS = ("step", "iterations", "restarts", "true_residual")
SWEEP_COLUMNS = ("restart", "recycle_dim", "interval", "avg_iterations", "stddev", "status")
COST_COLUMNS = ("k", "ratio_percent", "ell_min")


class ConfigError(ValueError):
    """Malformed configuration document."""


def _fmt(x) -> str:
    if isinstance(x, (bool, str)):
        return str(x)
    if isinstance(x, int):
        return str(x)
    return "%.17g" % x


def _section(doc, allowed, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    return doc


def _range(spec, where, kind=int):
    """Inclusive ``{"start", "stop", "step"}`` range or explicit list."""
    if isinstance(spec, list):
        values = [kind(v) for v in spec]
    else:
        _section(spec, ("start", "stop", "step"), where)
        try:
            start, stop = kind(spec["start"]), kind(spec["stop"])
            step = kind(spec.get("step", 1))
        except KeyError as exc:
            raise ConfigError(f"{where}: missing {exc.args[0]}") from None
        if step <= 0:
            raise ConfigError(f"{where}: step must be positive")
        values = []
        v, i = start, 0
        while v <= stop + 1e-9 * abs(step):
            values.append(v)
            i += 1
            v = start + i * step
    if not values:
        raise ConfigError(f"{where}: empty range")
    return values


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemParams
    sequence: SequenceConfig
    output: str = "run.csv"
    export_steps: tuple = ()


@dataclass(frozen=True)
class SweepConfig:
    base: RunConfig
    restarts: tuple
    recycle_dims: tuple
    intervals: tuple = (1,)
    workers: int = 1
    output: str = "sweep.csv"


@dataclass(frozen=True)
class CostConfig:
    params: CostParams
    ks: tuple
    ratios_percent: tuple
    point: Optional[dict] = None
    output: str = "cost_map.csv"


_RUN_KEYS = ("problem", "solver", "method", "guess", "window", "preconditioner",
             "composition", "output", "export_steps")


def parse_run_config(doc) -> RunConfig:
    _section(doc, _RUN_KEYS, "run config")
    try:
        problem = ProblemParams(**_section(doc.get("problem", {}),
                                           ("N", "nu", "dt", "n_steps", "C", "seed"), "problem"))
        solver = _section(doc.get("solver", {}), ("restart", "rel_tol", "max_restarts"), "solver")
        window = _section(doc.get("window", {}), ("m", "s", "interval", "mode"), "window")
        pre = _section(doc.get("preconditioner", {}), ("kind", "omega"), "preconditioner")
        method = RecycleMethod(doc.get("method", "none"))
        guess = doc.get("guess")
        seq = SequenceConfig(
            method=method,
            guess=InitialGuess.parse(guess) if guess is not None else None,
            restart=int(solver.get("restart", 30)),
            rel_tol=float(solver.get("rel_tol", 1e-8)),
            max_restarts=int(solver.get("max_restarts", 500)),
            window_m=int(window.get("m", 20)),
            window_s=int(window.get("s", window.get("m", 20))),
            window_interval=int(window.get("interval", 1)),
            svd_mode=SvdMode(window.get("mode", "largest")),
            preconditioner=pre.get("kind", "ssor"),
            omega=float(pre.get("omega", 1.0)),
            composition=Composition(doc.get("composition",
                                            Composition.PRECONDITIONER_AFTER_PROJECTOR.value)),
        )
        export = tuple(int(s) for s in doc.get("export_steps", ()))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(problem, seq, str(doc.get("output", "run.csv")), export)


def parse_sweep_config(doc) -> SweepConfig:
    _section(doc, ("base", "restart", "recycle_dim", "interval", "workers", "output"),
             "sweep config")
    for key in ("restart", "recycle_dim"):
        if key not in doc:
            raise ConfigError(f"sweep config: missing {key}")
    base = parse_run_config(doc.get("base", {}))
    workers = int(doc.get("workers", 1))
    if workers < 1:
        raise ConfigError("sweep config: workers must be >= 1")
    return SweepConfig(
        base=base,
        restarts=tuple(_range(doc["restart"], "restart")),
        recycle_dims=tuple(_range(doc["recycle_dim"], "recycle_dim")),
        intervals=tuple(_range(doc.get("interval", [base.sequence.window_interval]), "interval")),
        workers=workers,
        output=str(doc.get("output", "sweep.csv")),
    )


def parse_cost_config(doc) -> CostConfig:
    _section(doc, ("params", "k", "ratio_percent", "point", "output"), "cost config")
    raw = _section(doc.get("params", {}), ("m", "n", "b", "s", "r"), "params")
    defaults = dict(m=1e6, n=30, b=300, s=60, r=3)
    defaults.update(raw)
    try:
        params = CostParams(m=float(defaults["m"]), n=int(defaults["n"]), b=float(defaults["b"]),
                            k=0, s=int(defaults["s"]), r=float(defaults["r"]),
                            r_tilde=float(defaults["r"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    point = doc.get("point")
    if point is not None:
        _section(point, ("k", "ratio_percent", "ell"), "point")
        if "k" not in point or "ratio_percent" not in point:
            raise ConfigError("point: k and ratio_percent are required")
    return CostConfig(
        params=params,
        ks=tuple(_range(doc.get("k", {"start": 10, "stop": 60, "step": 2}), "k")),
        ratios_percent=tuple(_range(doc.get("ratio_percent", {"start": 0, "stop": 50, "step": 2}),
                                    "ratio_percent", float)),
        point=point,
        output=str(doc.get("output", "cost_map.csv")),
    )


def _load(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def cmd_run(cfg: RunConfig, out_dir: Path) -> int:
    """Run one sequence and write the per-step CSV.

    The last CSV row reads ``summary, <average>, <sample stddev>, <status>``.
    Wall times go to ``<output stem>_timings.csv`` so that the main CSV is
    reproducible byte for byte.
    """
    out_dir = Path(out_dir)
    exports = set(cfg.export_steps)

    def on_step(step, system, x, report):
        if step in exports:
            out_dir.mkdir(parents=True, exist_ok=True)
            export_matrix_market(out_dir / f"step{step:05d}_A.mtx", system.A)
            export_vector(out_dir / f"step{step:05d}_b.txt", system.b)
            export_vector(out_dir / f"step{step:05d}_x.txt", x)

    result = run_sequence(cfg.problem, cfg.sequence, on_step=on_step if exports else None)
    its = result.iterations
    avg, sd = iteration_stats(its)
    warm = cfg.sequence.window_m if cfg.sequence.needs_space else 0
    avg_w, sd_w = iteration_stats(its, skip=warm)
    status = "converged" if result.all_converged else "not-converged"
    rows = [(i + 1, r.iterations, r.restarts, r.true_relative_residual)
            for i, r in enumerate(result.reports)]
    rows.append(("summary", avg, sd, status))
    path = out_dir / cfg.output
    _write_csv(path, RUN_COLUMNS, rows)
    _write_csv(path.with_name(path.stem + "_timings.csv"), ("step", "wall_time"),
               [(i + 1, r.wall_time) for i, r in enumerate(result.reports)])
    print(f"average iterations {avg:.4f}, stddev {sd:.4f} over {len(its)} steps")
    print(f"after the first {warm} steps: average {avg_w:.4f}, stddev {sd_w:.4f}")
    if result.fallbacks:
        print(f"steps solved without recycling (singular restriction): {result.fallbacks}")
    if not result.all_converged:
        failed = [i + 1 for i, r in enumerate(result.reports) if not r.converged]
        print(f"WARNING: {len(failed)} step(s) did not converge: {failed[:20]}")
    print(f"wrote {path}")
    return 0


def _sweep_cell(args):
    problem, seq = args
    try:
        result = run_sequence(problem, seq)
    except Exception as exc:  # a failed cell is reported, the sweep goes on
        return math.nan, math.nan, f"error: {type(exc).__name__}"
    avg, sd = iteration_stats(result.iterations)
    return avg, sd, "ok" if result.all_converged else "not-converged"


def sweep_cells(cfg: SweepConfig):
    """Cell parameters ``(restart, recycle_dim, interval)`` in output order.

    The recycling dimension sets both the window size and the basis size.
    """
    return [(r, d, l) for r in cfg.restarts for d in cfg.recycle_dims for l in cfg.intervals]


def worker_count(cfg: SweepConfig) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer") from None
        if n < 1:
            raise ConfigError(f"{WORKERS_ENV} must be >= 1")
        return n
    return cfg.workers


def cmd_sweep(cfg: SweepConfig, out_dir: Path) -> int:
    """Run every cell of the sweep and write the map CSV.

    All cells share the base problem, seed included, so that they solve the
    same sequence of forcings.
    """
    cells = sweep_cells(cfg)
    tasks = [(cfg.base.problem,
              replace(cfg.base.sequence, restart=r, window_m=d, window_s=d, window_interval=l))
             for r, d, l in cells]
    workers = worker_count(cfg)
    if workers == 1:
        results = [_sweep_cell(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, tasks))
    rows = [cell + res for cell, res in zip(cells, results)]
    path = Path(out_dir) / cfg.output
    _write_csv(path, SWEEP_COLUMNS, rows)
    bad = sum(1 for row in rows if row[-1] != "ok")
    print(f"{len(rows)} cells, {bad} flagged; wrote {path}")
    return 0


def cmd_cost(cfg: CostConfig, out_dir: Path) -> int:
    """Write the minimum SVD interval map and print a single-point comparison."""
    rows = interval_map(cfg.params, cfg.ks, cfg.ratios_percent)
    path = Path(out_dir) / cfg.output
    _write_csv(path, COST_COLUMNS, rows)
    print(f"wrote {path} ({len(rows)} rows)")
    if cfg.point is not None:
        k = int(cfg.point["k"])
        ratio = float(cfg.point["ratio_percent"]) / 100.0
        ell_min = min_interval(replace(cfg.params, k=k), ratio)
        ell = float(cfg.point.get("ell", ell_min if ell_min > 0 else math.inf))
        p = replace(cfg.params, k=k, r_tilde=cfg.params.r * (1.0 - ratio), ell=ell)
        c, cr = cost_baseline(p), cost_recycled(p)
        print(f"{'quantity':<16}{'value':>24}")
        print(f"{'C':<16}{c:>24.6e}")
        print(f"{'C_r (C_4)':<16}{cr:>24.6e}")
        print(f"{'C_r / C':<16}{cr / c:>24.6f}")
        print(f"{'ell':<16}{ell:>24.6g}")
        print(f"{'ell_min':<16}{ell_min:>24.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svdrecycle",
        description="GMRES with SVD-based recycling on a convection-diffusion sequence.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "solve one time-step sequence"),
                            ("sweep", "run a restart x recycling-dimension campaign"),
                            ("cost", "tabulate the minimum SVD interval")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="JSON configuration file")
        p.add_argument("--out", default=".", help="output directory (default: current)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        doc = _load(args.config)
        if args.command == "run":
            return cmd_run(parse_run_config(doc), out)
        if args.command == "sweep":
            return cmd_sweep(parse_sweep_config(doc), out)
        return cmd_cost(parse_cost_config(doc), out)
    except (ConfigError, OSError) as exc:
        print(f"svdrecycle: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
