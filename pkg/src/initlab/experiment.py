"""Strategy-comparison experiment: config parsing, orchestration and the comparison table."""

from __future__ import annotations

import csv
import math
import os
import re
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path


if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .convergence import DEFAULT_TOL, convergence_time, running_median, to_ctu
from .grid import (
    Circle,
    FlowState,
    FreestreamConditions,
    Grid,
    GridSpec,
    ObstacleMask,
    Rectangle,
    make_grid,
    rasterize_obstacle,
)
from .init_strategies import (
    IDW_NEIGHBORS,
    IDW_POWER,
    SEED_EVERY,
    BlendParams,
    CoarseProxy,
    Potential,
    PriorSolution,
    SurrogateFile,
    SurrogateHybrid,
    SurrogateIDW,
    SurrogateUniform,
    Uniform,
    STRATEGY_TYPES,
    build_proxy_surrogate,
    extend_surrogate_idw,
    extend_surrogate_uniform,
    init_potential,
    init_prior_solution,
    init_surrogate_hybrid,
    init_uniform,
    load_surrogate,
)
from .io import write_series_csv, write_snapshot, write_surrogate
from .solver import SolverConfig, run

THREADS_ENV = "INITLAB_THREADS"


class ConfigError(ValueError):
    pass


def thread_limit() -> int:
    """Upper bound on internal parallelism, from ``INITLAB_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


# --------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class IDWParams:
    power: float = IDW_POWER
    neighbors: int = IDW_NEIGHBORS
    seed_every: int = SEED_EVERY

    def __post_init__(self):
        if not self.power > 0:
            raise ValueError(f"idw.power must be positive, got {self.power}")
        if int(self.neighbors) != self.neighbors or self.neighbors < 1:
            raise ValueError(f"idw.neighbors must be a positive integer, got {self.neighbors}")
        if int(self.seed_every) != self.seed_every or self.seed_every < 1:
            raise ValueError(f"idw.seed_every must be a positive integer, got {self.seed_every}")


@dataclass(frozen=True)
class PrecursorParams:
    """How the experiment produces files it was not given.

    The prior solution comes from a run of the same case started from
    uniform flow. With ``prior_window`` > 0 it is the time average over that
    fraction of the horizon; with 0 it is the final instantaneous state.
    The coarse proxy runs for ``proxy_t_end``.
    """

    prior_t_end: float = 1.2
    prior_window: float = 0.0
    proxy_t_end: float = 0.4

    def __post_init__(self):
        if not self.prior_t_end > 0 or not self.proxy_t_end > 0:
            raise ValueError("precursor horizons must be positive")
        if not 0 <= self.prior_window <= 1:
            raise ValueError(f"strategies.prior_window must be in [0, 1], got {self.prior_window}")


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridSpec
    shape: Rectangle | Circle
    freestream: FreestreamConditions
    solver: SolverConfig
    strategies: tuple
    blend: BlendParams
    output_dir: Path
    idw: IDWParams = field(default_factory=IDWParams)
    precursor: PrecursorParams = field(default_factory=PrecursorParams)
    tol: float = DEFAULT_TOL
    snapshot_times: tuple[float, ...] = ()
    parallel: bool = False
    seed: int = 0  # reserved; every run is deterministic

    def __post_init__(self):
        if not self.strategies:
            raise ValueError("strategies: at least one strategy is required")
        names = [s.name for s in self.strategies]
        if len(set(names)) != len(names):
            raise ValueError(f"strategies: duplicate entries in {names}")
        if not self.tol >= 0:
            raise ValueError(f"convergence.tol must be non-negative, got {self.tol}")


_SCHEMA: dict[str, dict[str, type | tuple]] = {
    "": {"seed": int},
    "grid": {"nx": int, "ny": int, "lx": float, "ly": float, "max_cells": int},
    "shape": {
        "kind": str,
        "xmin": float,
        "ymin": float,
        "xmax": float,
        "ymax": float,
        "cx": float,
        "cy": float,
        "r": float,
    },
    "freestream": {
        "u_inf": float,
        "nu": float,
        "reynolds": float,
        "l0": float,
        "rho": float,
        "k_inf": float,
    },
    "solver": {
        "dt": float,
        "t_end": float,
        "cfl_limit": float,
        "poisson_tol": float,
        "n_correctors": int,
        "sample_every": int,
    },
    "strategies": {
        "run": list,
        "prior_path": str,
        "prior_drop_k": bool,
        "prior_t_end": float,
        "prior_window": float,
        "surrogate_path": str,
        "proxy_factor": int,
        "proxy_t_end": float,
    },
    "blend": {"k_lower": float, "k_upper": float},
    "idw": {"power": float, "neighbors": int, "seed_every": int},
    "convergence": {"tol": float},
    "output": {"dir": str, "snapshot_times": list, "parallel": bool},
}

_REQUIRED = {
    "grid": ("nx", "ny", "lx", "ly"),
    "shape": ("kind",),
    "freestream": ("u_inf", "l0"),
    "solver": ("dt", "t_end"),
    "strategies": ("run",),
    "output": ("dir",),
}

_HEADER = re.compile(r"^\s*\[\s*([A-Za-z0-9_]+)\s*\]\s*(#.*)?$")
_KEY = re.compile(r"^\s*([A-Za-z0-9_]+)\s*=")


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    where = {}
    section = ""
    for n, line in enumerate(text.splitlines(), 1):
        m = _HEADER.match(line)
        if m:
            section = m.group(1)
            where.setdefault((section, ""), n)
            continue
        m = _KEY.match(line)
        if m:
            where.setdefault((section, m.group(1)), n)
    return where


def _coerce(value, kind, section, key, line):
    label = f"{section}.{key}" if section else key
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is float and isinstance(value, float):
        return value
    if isinstance(value, kind) and not (kind is int and isinstance(value, bool)):
        return value
    raise ConfigError(f"{label} at line {line}: expected {kind.__name__}, got {type(value).__name__}")


def parse_config(text: str, base_dir: Path | str | None = None) -> ExperimentConfig:
    """Parse the TOML-subset experiment config (flat sections, ``key = value``).

    Unknown sections and keys are rejected with their line number. Relative
    paths resolve against ``base_dir`` when given.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    lines = _key_lines(text)
    sections: dict[str, dict] = {"": {}}
    for key, value in raw.items():
        if isinstance(value, dict):
            if key not in _SCHEMA or key == "":
                raise ConfigError(f"unknown section [{key}] at line {lines.get((key, ''), '?')}")
            sections[key] = value
        else:
            sections[""][key] = value
    for section, body in sections.items():
        for key, value in body.items():
            line = lines.get((section, key), "?")
            if isinstance(value, dict):
                raise ConfigError(f"nested table {section}.{key} at line {line} is not supported")
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key} at line {line}" + (f" (in [{section}])" if section else ""))
            body[key] = _coerce(value, _SCHEMA[section][key], section, key, line)
    for section, keys in _REQUIRED.items():
        for key in keys:
            if key not in sections.get(section, {}):
                raise ConfigError(f"missing required key {section}.{key}")

    base = Path(base_dir) if base_dir is not None else None

    def resolve(p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() or base is None else base / path

    def build(section, fn):
        try:
            return fn(sections.get(section, {}))
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{section}] {exc}") from None

    g = build("grid", lambda s: GridSpec(**s))

    def make_shape(s):
        kind = s["kind"].lower()
        rest = {k: v for k, v in s.items() if k != "kind"}
        if kind == "rectangle":
            need = ("xmin", "ymin", "xmax", "ymax")
        elif kind == "circle":
            need = ("cx", "cy", "r")
        else:
            raise ValueError(f"shape.kind must be 'rectangle' or 'circle', got {s['kind']!r}")
        extra = set(rest) - set(need)
        missing = [k for k in need if k not in rest]
        if missing:
            raise ValueError(f"{kind} needs {', '.join(need)}; missing {', '.join(missing)}")
        if extra:
            raise ValueError(f"{kind} does not take {', '.join(sorted(extra))}")
        return Rectangle(**rest) if kind == "rectangle" else Circle(**rest)

    shape = build("shape", make_shape)

    def make_fs(s):
        s = dict(s)
        if ("nu" in s) == ("reynolds" in s):
            raise ValueError("give exactly one of freestream.nu and freestream.reynolds")
        re_ = s.pop("reynolds", None)
        if re_ is not None:
            if not re_ > 0:
                raise ValueError(f"freestream.reynolds must be positive, got {re_}")
            s["nu"] = s["u_inf"] * s["l0"] / re_
        return FreestreamConditions(**s)

    fs = build("freestream", make_fs)
    solver = build("solver", lambda s: SolverConfig(**s))

    blend = build(
        "blend",
        lambda s: BlendParams(
            fs.k_inf, s.get("k_lower", 1.5 * fs.k_inf), s.get("k_upper", 3.0 * fs.k_inf)
        ),
    )

    def make_strategies(s):
        if s.get("surrogate_path"):
            source = SurrogateFile(resolve(s["surrogate_path"]))
        else:
            source = CoarseProxy(s.get("proxy_factor", 4))
        out = []
        for name in s["run"]:
            if not isinstance(name, str) or name not in STRATEGY_TYPES:
                raise ValueError(
                    f"unknown strategy {name!r}; choose from {', '.join(STRATEGY_TYPES)}"
                )
            cls = STRATEGY_TYPES[name]
            if cls is PriorSolution:
                path = resolve(s["prior_path"]) if s.get("prior_path") else None
                out.append(PriorSolution(path, s.get("prior_drop_k", False)))
            elif cls is SurrogateHybrid:
                out.append(SurrogateHybrid(source, blend))
            elif cls in (SurrogateUniform, SurrogateIDW):
                out.append(cls(source))
            else:
                out.append(cls())
        return tuple(out)

    strategies = build("strategies", make_strategies)
    precursor = build(
        "strategies",
        lambda s: PrecursorParams(
            **{k: s[k] for k in ("prior_t_end", "prior_window", "proxy_t_end") if k in s}
        ),
    )
    idw = build("idw", lambda s: IDWParams(**s))
    tol = sections.get("convergence", {}).get("tol", DEFAULT_TOL)
    out = sections["output"]

    def make_times(o):
        times = o.get("snapshot_times", [])
        if not all(isinstance(t, (int, float)) and not isinstance(t, bool) for t in times):
            raise ValueError("output.snapshot_times must be a list of numbers")
        return tuple(float(t) for t in times)

    snapshot_times = build("output", make_times)
    try:
        return ExperimentConfig(
            grid=g,
            shape=shape,
            freestream=fs,
            solver=solver,
            strategies=strategies,
            blend=blend,
            output_dir=resolve(out["dir"]),
            idw=idw,
            precursor=precursor,
            tol=tol,
            snapshot_times=snapshot_times,
            parallel=out.get("parallel", False),
            seed=sections[""].get("seed", 0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, base_dir=path.parent)


# --------------------------------------------------------------------------
# Comparison table


@dataclass
class TableRow:
    strategy: str
    status: str
    init_wall: float = math.nan
    t_conv: float = math.nan
    t_conv_ctu: float = math.nan
    solver_wall_to_conv: float = math.nan
    final_force: float = math.nan
    message: str = ""


@dataclass
class ComparisonTable:
    rows: list[TableRow]

    def row(self, name: str) -> TableRow:
        for r in self.rows:
            if r.strategy == name:
                return r
        raise KeyError(name)

    @property
    def failed(self) -> list[TableRow]:
        return [r for r in self.rows if r.status != "ok"]

    def to_csv(self, path) -> Path:
        """Deterministic columns only; wall-clock figures go to the timing file."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["strategy", "status", "t_conv_s", "t_conv_ctu", "final_force", "message"])
            for r in self.rows:
                w.writerow([r.strategy, r.status, repr(r.t_conv), repr(r.t_conv_ctu), repr(r.final_force), r.message])
        return path

    def timing_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["strategy", "init_wall_s", "solver_wall_to_conv_s"])
            for r in self.rows:
                w.writerow([r.strategy, f"{r.init_wall:.3f}", f"{r.solver_wall_to_conv:.3f}"])
        return path

    def to_text(self) -> str:
        head = ["strategy", "status", "init wall (s)", "t_conv (s)", "t_conv (CTU)", "solver wall to t_conv (s)", "final force (N/m)"]
        body = []
        for r in self.rows:
            body.append(
                [
                    r.strategy,
                    r.status,
                    f"{r.init_wall:.2f}",
                    f"{r.t_conv:.4f}",
                    f"{r.t_conv_ctu:.2f}",
                    f"{r.solver_wall_to_conv:.2f}",
                    f"{r.final_force:.4f}",
                ]
            )
        widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(head)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
        lines.append("  ".join("-" * w for w in widths))
        for b in body:
            lines.append("  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(b, widths))))
        for r in self.rows:
            if r.message:
                lines.append(f"{r.strategy}: {r.message}")
        return "\n".join(lines) + "\n"


def read_table_csv(path) -> ComparisonTable:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                TableRow(
                    rec["strategy"],
                    rec["status"],
                    t_conv=float(rec["t_conv_s"]),
                    t_conv_ctu=float(rec["t_conv_ctu"]),
                    final_force=float(rec["final_force"]),
                    message=rec["message"],
                )
            )
    return ComparisonTable(rows)


# --------------------------------------------------------------------------
# Orchestration


@dataclass
class Case:
    grid: Grid
    mask: ObstacleMask
    fs: FreestreamConditions


def build_case(cfg: ExperimentConfig) -> Case:
    grid = make_grid(cfg.grid)
    mask = rasterize_obstacle(grid, cfg.shape)
    return Case(grid, mask, cfg.freestream)


def make_prior_snapshot(cfg: ExperimentConfig, case: Case, path) -> Path:
    """Precursor run from uniform flow; its final state or time average becomes the prior solution."""
    p = cfg.precursor
    solver = replace(cfg.solver, t_end=p.prior_t_end, sample_every=max(1, cfg.solver.sample_every))
    state0 = init_uniform(case.grid, case.fs, case.mask)
    if p.prior_window > 0:
        result = run(state0, case.grid, case.mask, case.fs, solver, average_from=p.prior_t_end * (1.0 - p.prior_window))
        out = result.mean
    else:
        out = run(state0, case.grid, case.mask, case.fs, solver).final
    out.t = 0.0
    return write_snapshot(path, out, case.grid, case.fs)


class _Sources:
    """Shared inputs built at most once per experiment: proxy surrogate, prior file, potential field."""

    def __init__(self, cfg: ExperimentConfig, case: Case):
        self.cfg = cfg
        self.case = case
        self._surrogates: dict = {}
        self._prior: Path | None = None
        self._potential = None
        self.cost: dict[str, float] = {}

    def potential(self):
        if self._potential is None:
            t = time.perf_counter()
            self._potential = init_potential(self.case.grid, self.case.mask, self.case.fs)
            self.cost["potential"] = time.perf_counter() - t
        return self._potential.copy()

    def surrogate(self, source):
        if source not in self._surrogates:
            t = time.perf_counter()
            if isinstance(source, SurrogateFile):
                s = load_surrogate(source.path)
            else:
                c = self.case
                s = build_proxy_surrogate(c.grid, c.mask, c.fs, source.factor, self.cfg.solver.dt, self.cfg.precursor.proxy_t_end)
                write_surrogate(self.cfg.output_dir / "_shared" / f"proxy_x{source.factor}.surrogate", s)
            self._surrogates[source] = s
            self.cost[repr(source)] = time.perf_counter() - t
        return self._surrogates[source], self.cost[repr(source)]

    def prior(self, strategy: PriorSolution):
        if strategy.path is not None:
            return Path(strategy.path), 0.0
        if self._prior is None:
            t = time.perf_counter()
            self._prior = make_prior_snapshot(self.cfg, self.case, self.cfg.output_dir / "_shared" / "prior.vtk")
            self.cost["prior"] = time.perf_counter() - t
        return self._prior, self.cost["prior"]


def build_initial_state(strategy, cfg: ExperimentConfig, case: Case, sources: _Sources) -> tuple[FlowState, float]:
    """Initial state and the wall-clock seconds it cost (shared precursors included)."""
    g, m, fs = case.grid, case.mask, case.fs
    idw = cfg.idw
    t0 = time.perf_counter()
    extra = 0.0
    if isinstance(strategy, Uniform):
        state = init_uniform(g, fs, m)
    elif isinstance(strategy, Potential):
        state = init_potential(g, m, fs)
    elif isinstance(strategy, PriorSolution):
        path, extra = sources.prior(strategy)
        t0 = time.perf_counter()
        state = init_prior_solution(g, fs, path, m, drop_k=strategy.drop_k)
    else:
        s, extra = sources.surrogate(strategy.source)
        t0 = time.perf_counter()
        if isinstance(strategy, SurrogateUniform):
            state = extend_surrogate_uniform(s, g, fs, m, idw.power, idw.neighbors)
        elif isinstance(strategy, SurrogateIDW):
            state = extend_surrogate_idw(s, g, fs, m, idw.seed_every, idw.power, idw.neighbors)
        elif isinstance(strategy, SurrogateHybrid):
            pot = sources.potential()
            extra += sources.cost["potential"]
            t0 = time.perf_counter()
            state = init_surrogate_hybrid(
                s, g, m, fs, strategy.blend or cfg.blend, idw.seed_every, idw.power, idw.neighbors, potential=pot
            )
        else:
            raise TypeError(f"unknown strategy {strategy!r}")
    state.t = 0.0
    return state, time.perf_counter() - t0 + extra


def run_strategy(strategy, cfg: ExperimentConfig, case: Case, sources: _Sources) -> TableRow:
    out = cfg.output_dir / strategy.name
    out.mkdir(parents=True, exist_ok=True)
    for stale in out.glob("*"):
        if stale.is_file():
            stale.unlink()
    try:
        state0, init_wall = build_initial_state(strategy, cfg, case, sources)
        write_snapshot(out / "init.vtk", state0, case.grid, case.fs)
        result = run(state0, case.grid, case.mask, case.fs, cfg.solver, snapshot_times=cfg.snapshot_times)
        if len(result.series) == 0:
            raise ValueError("run produced no force samples; t_end must exceed sample_every * dt")
        filt = running_median(result.series.times, result.series.fx)
        write_series_csv(out / "series.csv", result.series, filt.filtered)
        for snap in result.snapshots:
            write_snapshot(out / f"snapshot_t{snap.t:.6f}.vtk", snap, case.grid, case.fs)
        write_snapshot(out / "final.vtk", result.final, case.grid, case.fs)
        rep = convergence_time(filt, cfg.tol, case.fs)
        n_step = (rep.index + 1) * cfg.solver.sample_every
        return TableRow(
            strategy.name,
            "ok",
            init_wall=init_wall,
            t_conv=rep.t_conv,
            t_conv_ctu=to_ctu(rep.t_conv, case.fs),
            solver_wall_to_conv=float(result.step_times[n_step - 1]),
            final_force=rep.final_value,
        )
    except Exception as exc:  # noqa: BLE001 - recorded as a failed row
        (out / "error.txt").write_text("".join(traceback.format_exception(type(exc), exc, exc.__traceback__)))
        return TableRow(strategy.name, "failed", message=f"{type(exc).__name__}: {exc}".replace("\n", " "))


def _prepare_shared(cfg: ExperimentConfig, case: Case, sources: _Sources):
    # build shared inputs up front so parallel workers only read them
    for s in cfg.strategies:
        try:
            if isinstance(s, PriorSolution):
                sources.prior(s)
            elif isinstance(s, (SurrogateUniform, SurrogateIDW, SurrogateHybrid)):
                sources.surrogate(s.source)
        except Exception:  # noqa: BLE001 - the strategy itself will report it
            pass


def _worker(args):
    cfg, strategy, shared = args
    case = build_case(cfg)
    sources = _Sources(cfg, case)
    sources._surrogates, sources._prior, sources.cost = shared
    return run_strategy(strategy, cfg, case, sources)


def run_experiment(cfg: ExperimentConfig, log=None) -> ComparisonTable:
    """Run every strategy, write per-strategy artifacts and the comparison table."""
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    case = build_case(cfg)
    sources = _Sources(cfg, case)
    rows: list[TableRow] = []
    workers = min(thread_limit(), len(cfg.strategies)) if cfg.parallel else 1
    if workers > 1:
        _prepare_shared(cfg, case, sources)
        shared = (sources._surrogates, sources._prior, sources.cost)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_worker, [(cfg, s, shared) for s in cfg.strategies]))
    else:
        for s in cfg.strategies:
            if log:
                log(f"running {s.name}")
            rows.append(run_strategy(s, cfg, case, sources))
            if log:
                r = rows[-1]
                log(f"  {r.status} t_conv={r.t_conv:.4g} s" if r.status == "ok" else f"  failed: {r.message}")
    table = ComparisonTable(rows)
    table.to_csv(cfg.output_dir / "table.csv")
    table.timing_csv(cfg.output_dir / "timing.csv")
    (cfg.output_dir / "table.txt").write_text(table.to_text())
    return table
