"""Command-line entry point: ``initlab run|analyze|plot|surrogate-proxy``."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .convergence import DEFAULT_TOL, convergence_time, running_median
from .experiment import ConfigError, build_case, load_config, run_experiment, thread_limit
from .init_strategies import CoarseProxy, build_proxy_surrogate
from .io import read_series_csv, write_surrogate
from .plots import PlotError, emit_plots

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 2


def _limit_threads():
    # must happen before numerical libraries spin up their pools
    n = str(thread_limit())
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(var, n)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    table = run_experiment(cfg, log=None if args.quiet else lambda m: print(m, flush=True))
    print(table.to_text(), end="")
    try:
        emit_plots(cfg.output_dir, cfg.tol)
    except PlotError as exc:
        print(f"initlab: {exc}", file=sys.stderr)
    if table.failed:
        names = ", ".join(r.strategy for r in table.failed)
        print(f"initlab: {len(table.failed)} strategy run(s) failed: {names}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_analyze(args) -> int:
    series, _ = read_series_csv(args.series)
    if len(series) == 0:
        raise ValueError(f"{args.series}: series is empty")
    fs = running_median(series.times, series.fx)
    rep = convergence_time(fs, args.tol)
    print(f"samples      {len(series)}")
    print(f"t_conv       {rep.t_conv!r} s")
    print(f"final value  {rep.final_value!r}")
    print(f"tolerance    {rep.tol!r}" + (" (absolute band)" if rep.absolute else ""))
    return EXIT_OK


def cmd_plot(args) -> int:
    for p in emit_plots(args.output_dir, args.tol):
        print(p)
    return EXIT_OK


def cmd_surrogate_proxy(args) -> int:
    cfg = load_config(args.config)
    case = build_case(cfg)
    factor = args.factor
    if factor is None:
        sources = [getattr(s, "source", None) for s in cfg.strategies]
        factor = next((s.factor for s in sources if isinstance(s, CoarseProxy)), 4)
    s = build_proxy_surrogate(case.grid, case.mask, case.fs, factor, cfg.solver.dt, cfg.precursor.proxy_t_end)
    path = write_surrogate(args.output, s)
    print(f"wrote {len(s)} points to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="initlab", description="Initialization-strategy experiments for 2D bluff-body flow.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every strategy in a config and write the comparison table")
    p.add_argument("config", type=Path)
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("analyze", help="running median and convergence time of a series CSV")
    p.add_argument("series", type=Path)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("plot", help="SVG force overlays for an output directory")
    p.add_argument("output_dir", type=Path)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.set_defaults(fn=cmd_plot)

    p = sub.add_parser("surrogate-proxy", help="write the coarse-proxy surrogate for a config")
    p.add_argument("config", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--factor", type=int, default=None)
    p.set_defaults(fn=cmd_surrogate_proxy)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _limit_threads()
        return args.fn(args)
    except (ConfigError, OSError, ValueError, PlotError) as exc:
        print(f"initlab: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
