"""Command-line experiment runner.

Usage::

    rbdsde <study> --config path.json [--seed S] [--paths N] [--steps M] [--threads T]

with ``<study>`` one of ``solve``, ``verify-estimates``, ``truncation-study``,
``convergence-study``, ``oracle-compare``.

Config schema (JSON)::

    {
      "study": "solve",                        # optional, the subcommand wins
      "problem": {"family": "linear", "params": {...}, "barrier": {...}, "p": 1.5},
      "battery": [problem, ...],               # verify-estimates only, replaces "problem"
      "grid": {"T": 1.0, "M": 50},
      "ensemble": {"N": 10000, "d": 1, "seed": 1},     # seed is mandatory
      "solver": {"degree": 2, "f_step_mode": "implicit",
                 "backward_features": "increment", "inner_picard_iters": 3},
      "d_const": {"lemma31": 50, "lemma32": 50, "lemma33": 50},
      "params": {...},                         # study-specific, see below
      "output": {"dir": "out", "solution_csv": false}
    }

Problem families are documented in :mod:`rbdsde.families`. Study params:

* ``solve``: ``pilot_paths`` for the assumption check.
* ``verify-estimates``: ``xi_shift``, ``f_shift`` (stability perturbation),
  ``ito_pairs`` (list of ``[i, j]`` step pairs).
* ``truncation-study``: ``levels``, ``m_levels``, optional ``max_final_over_first``.
* ``convergence-study``: ``M_list``, ``cases`` (``[{"case": "martingale"}, ...]``), ``min_rate``.
* ``oracle-compare``: ``oracle``: ``{"kind": "lattice", "steps": 1000, "tol": 0.02}``
  or ``{"kind": "catalog", "case": "deterministic_barrier", "tol": 1e-8}``.

Outputs go to ``$RBDSDE_OUT`` if set, else ``output.dir``, else
``rbdsde-out/<config stem>``: ``report.json`` (``"schema": 1``),
``plotdata.csv`` and, on request, ``solution.csv``.

Exit codes: 0 all checks pass, 1 a check failed (or the problem data violate
an assumption the solver enforces), 2 the config could not be parsed,
3 numerical blowup.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalBlowup, RBDSDEError
from .experiments import RUNNERS, STUDIES, parse_config

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CHECK, EXIT_PARSE, EXIT_BLOWUP = 0, 1, 2, 3

log = logging.getLogger("rbdsde")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def output_dir(config_path: Path, configured: str | None) -> Path:
    env = os.environ.get("RBDSDE_OUT")
    if env:
        return Path(env)
    if configured:
        return Path(configured)
    return Path("rbdsde-out") / config_path.stem


def write_report(path: Path, report: dict) -> None:
    path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")


def write_plotdata(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def run_experiment(config_path, study: str | None = None, seed=None, paths=None, steps=None,
                   threads: int = 1) -> int:
    """Run one study from a config file and write its outputs; returns the exit code."""
    config_path = Path(config_path)
    try:
        raw = json.loads(config_path.read_text())
        cfg = parse_config(raw, study, seed, paths, steps, threads)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"rbdsde: cannot parse {config_path}: {exc}", file=sys.stderr)
        return EXIT_PARSE

    out = output_dir(config_path, cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {"schema": SCHEMA_VERSION, "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
              "study": cfg.study, "config": cfg.to_dict()}
    try:
        result = RUNNERS[cfg.study](cfg)
    except NumericalBlowup as exc:
        report.update({"error": {"type": "NumericalBlowup", "step": exc.step, "message": str(exc)}, "pass": False})
        write_report(out / "report.json", report)
        print(f"rbdsde: numerical blowup: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except ConfigError as exc:
        print(f"rbdsde: bad config {config_path}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except RBDSDEError as exc:
        report.update({"error": {"type": type(exc).__name__, "message": str(exc)}, "pass": False})
        write_report(out / "report.json", report)
        print(f"rbdsde: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CHECK

    report.update({"results": result.results, "checks": result.checks, "pass": result.passed})
    write_report(out / "report.json", report)
    write_plotdata(out / "plotdata.csv", result.plot_header, result.plot_rows)
    if cfg.solution_csv and result.solution is not None:
        result.solution.to_csv(out / "solution.csv")
    for name, ok in result.checks.items():
        log.info("%s: %s", name, "pass" if ok else "FAIL")
    log.info("outputs written to %s", out)
    return EXIT_OK if result.passed else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbdsde", description="Reflected BDSDE experiment runner")
    parser.add_argument("-v", "--verbose", action="store_true", help="log check outcomes")
    sub = parser.add_subparsers(dest="study", required=True)
    for name in STUDIES:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--seed", type=int, help="override ensemble.seed")
        sp.add_argument("--paths", type=int, help="override ensemble.N")
        sp.add_argument("--steps", type=int, help="override grid.M")
        sp.add_argument("--threads", type=int, default=1, help="worker cap for path simulation")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return run_experiment(args.config, args.study, args.seed, args.paths, args.steps, max(1, args.threads))


if __name__ == "__main__":
    sys.exit(main())
