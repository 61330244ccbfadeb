"""Command line entry point: configuration file in, result JSON out.

Exit codes: 0 when a certificate was synthesized, 2 when the LP is
infeasible, 1 on any error (unreadable or invalid config, solver
breakdown, falsifier counterexample).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .certify import SynthesisResult, barrier_grid, falsify, result_json, synthesize
from .config import Configuration, parse_config
from .data import Dataset
from .estimator import KernelParams
from .geometry import unit_transform
from .relaxation import LPProblem
from .solve import export_lp
from .tuner import grid_search, lbfgs_tune, median_heuristic

__all__ = ["build_parser", "load_config", "run_cli", "main"]

log = logging.getLogger(__name__)

_EXIT_CODES = {"certified": 0, "infeasible": 2, "failed": 1}

# finer falsification grids where dimensionality allows
_FALSIFY_GRID = {1: 2000, 2: 150, 3: 40}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specbar",
        description="Synthesize a probabilistic safety certificate from a "
        "YAML or JSON configuration file.",
    )
    parser.add_argument("config", help="path to the configuration file")
    parser.add_argument(
        "--plot",
        nargs="?",
        const="",
        default=None,
        metavar="PATH",
        help="write the barrier evaluation grid as CSV "
        "(default: <config stem>_barrier.csv next to the config)",
    )
    parser.add_argument(
        "--tune",
        choices=("median", "lbfgs", "grid"),
        help="re-tune kernel lengthscales from the data before synthesis",
    )
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument(
        "--export-lp",
        metavar="PATH",
        help="save the assembled LP blocks to a .npz archive",
    )
    parser.add_argument(
        "--falsify",
        action="store_true",
        help="grid-search the certified conditions for counterexamples "
        "(exit 1 if any are found)",
    )
    parser.add_argument(
        "-o",
        "--output",
        metavar="PATH",
        help="write the result JSON here instead of stdout",
    )
    parser.add_argument(
        "--timings",
        action="store_true",
        help="include stage wall times in the result JSON (breaks byte-for-byte "
        "reproducibility of the artifact)",
    )
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress progress logs")
    return parser


def load_config(path) -> Configuration:
    """Read and validate a YAML or JSON configuration file."""
    p = Path(path)
    text = p.read_text()
    fmt = "json" if p.suffix.lower() == ".json" else "yaml"
    return parse_config(text, fmt, base_dir=p.parent)


def _tuned(config: Configuration, method: str) -> Configuration:
    """Replace the kernel lengthscales with tuned values (unit-box coordinates)."""
    data = config.resolve_dataset()
    transform = unit_transform(config.domain, config.pad)
    udata = Dataset(transform.apply(data.x), transform.apply(data.xp))
    init = KernelParams(config.sigma_f, list(config.sigma_l), config.lambda_)
    if method == "median":
        chosen = median_heuristic(udata).sigma_l
    elif method == "lbfgs":
        chosen = lbfgs_tune(udata, lower=1e-3, upper=10.0, init=init).params.sigma_l
    else:
        candidates = [
            KernelParams(config.sigma_f, float(s), config.lambda_)
            for s in np.geomspace(0.01, 2.0, 16)
        ]
        chosen = grid_search(udata, candidates).params.lengthscales(udata.n_dims)
    sigma_l = tuple(float(v) for v in np.asarray(chosen).reshape(-1))
    log.info("tuner %s: sigma_l %s -> %s", method, list(config.sigma_l), list(sigma_l))
    return dataclasses.replace(config, sigma_l=sigma_l)


def _export_lp(problem: LPProblem, path: str) -> None:
    Path(path).write_text(export_lp(problem))
    log.info("LP exported: %d rows, %d vars -> %s", problem.n_rows, problem.n_vars, path)


def _write_plot_csv(result: SynthesisResult, path: Path) -> None:
    grid = barrier_grid(result.certificate, result.config.safety_spec())
    if grid is None:
        log.warning("plot export skipped: no dense grid for %d-dimensional domains",
                    result.config.n_dims)
        return
    axes, values = grid["axes"], np.asarray(grid["values"])
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        if len(axes) == 1:
            writer.writerow(["x1", "B"])
            for x, v in zip(axes[0], values):
                writer.writerow([repr(float(x)), repr(float(v))])
        else:
            writer.writerow(["x1", "x2", "B"])
            for i, x in enumerate(axes[0]):
                for j, y in enumerate(axes[1]):
                    writer.writerow([repr(float(x)), repr(float(y)), repr(float(values[i, j]))])
    log.info("barrier grid written to %s", path)


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        config = load_config(args.config)
    except OSError as exc:
        print(f"error: cannot read config file: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)

    try:
        if args.tune:
            config = _tuned(config, args.tune)
        result = synthesize(config)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.export_lp:
        if result.problem is not None:
            _export_lp(result.problem, args.export_lp)
        else:
            log.warning("no LP was assembled; nothing to export")

    falsified = False
    if args.falsify and result.certificate is not None:
        report = falsify(
            result.certificate,
            config.safety_spec(),
            model=config.dynamics_model(),
            grid_per_dim=_FALSIFY_GRID.get(config.n_dims, 12),
        )
        falsified = not report.clean

    doc = result_json(result, include_timings=args.timings)
    if args.output:
        Path(args.output).write_text(doc + "\n")
    else:
        print(doc)

    if args.plot is not None and result.certificate is not None:
        stem = Path(args.config).with_suffix("")
        target = Path(args.plot) if args.plot else Path(f"{stem}_barrier.csv")
        _write_plot_csv(result, target)

    if falsified:
        print("error: falsifier found counterexamples to the certificate", file=sys.stderr)
        return 1
    return _EXIT_CODES.get(result.status, 1)


def main() -> None:
    raise SystemExit(run_cli())


if __name__ == "__main__":
    main()
