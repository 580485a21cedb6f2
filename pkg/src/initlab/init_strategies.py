"""Initial-field construction for every initialization strategy.

Traditional strategies (uniform, potential, prior solution) and the
surrogate-based ones, which take a near-field point prediction inside a
bounding box and extend it to the full domain by one of three rules:
uniform far field, inverse-distance weighting against boundary values, or
a k-weighted blend of the IDW extension with potential flow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import cKDTree

from .grid import (
    FlowState,
    FreestreamConditions,
    Grid,
    GridSpec,
    ObstacleMask,
    apply_boundary_conditions,
    rasterize_obstacle,
)
from .io import parse_surrogate, read_snapshot
from .potential import SPEED_CLAMP, clamp_speed, potential_k_field, solve_potential
from .solver import SolverConfig, run

IDW_POWER = 2.0
IDW_NEIGHBORS = 8
SEED_EVERY = 4
PROXY_K_COEFF = 0.05


# --------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class SurrogateField:
    points: np.ndarray
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    k: np.ndarray
    bbox: tuple[float, float, float, float]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("SurrogateField.points must have shape (n, 2)")
        n = len(pts)
        for name in ("u", "v", "p", "k"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"SurrogateField.{name} must have {n} values")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"SurrogateField.{name} contains non-finite values")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "bbox", tuple(float(b) for b in self.bbox))
        if n < 4:
            raise ValueError(f"SurrogateField needs at least 4 points, got {n}")
        if np.any(self.k < 0):
            raise ValueError("SurrogateField: negative k")
        x0, y0, x1, y1 = self.bbox
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"SurrogateField: degenerate bbox {self.bbox}")
        inside = (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
        if not inside.all():
            bad = pts[np.argmin(inside)]
            raise ValueError(f"SurrogateField: point ({bad[0]}, {bad[1]}) outside bbox")

    def __len__(self):
        return len(self.points)

    def in_bbox(self, x, y):
        x0, y0, x1, y1 = self.bbox
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)

    @property
    def values(self) -> np.ndarray:
        """(n, 4) array of u, v, p, k."""
        return np.column_stack([self.u, self.v, self.p, self.k])


@dataclass(frozen=True)
class BlendParams:
    k_inf: float
    k_lower: float
    k_upper: float

    def __post_init__(self):
        if not (0 <= self.k_inf < self.k_lower < self.k_upper):
            raise ValueError(
                f"BlendParams need 0 <= k_inf < k_lower < k_upper, got "
                f"{self.k_inf}, {self.k_lower}, {self.k_upper}"
            )

    @classmethod
    def from_k_inf(cls, k_inf: float, lower: float = 1.5, upper: float = 3.0) -> "BlendParams":
        return cls(k_inf, lower * k_inf, upper * k_inf)


@dataclass(frozen=True)
class SurrogateFile:
    path: Path


@dataclass(frozen=True)
class CoarseProxy:
    factor: int = 4

    def __post_init__(self):
        if int(self.factor) != self.factor or self.factor < 2:
            raise ValueError(f"CoarseProxy.factor must be an integer >= 2, got {self.factor}")


SurrogateSource = Union[SurrogateFile, CoarseProxy]


@dataclass(frozen=True)
class Uniform:
    name = "uniform"


@dataclass(frozen=True)
class Potential:
    name = "potential"


@dataclass(frozen=True)
class PriorSolution:
    path: Path | None = None  # None: the experiment produces it with a precursor run
    drop_k: bool = False
    name = "prior_solution"


@dataclass(frozen=True)
class SurrogateUniform:
    source: SurrogateSource = field(default_factory=CoarseProxy)
    name = "surrogate_uniform"


@dataclass(frozen=True)
class SurrogateIDW:
    source: SurrogateSource = field(default_factory=CoarseProxy)
    name = "surrogate_idw"


@dataclass(frozen=True)
class SurrogateHybrid:
    source: SurrogateSource = field(default_factory=CoarseProxy)
    blend: BlendParams | None = None
    name = "surrogate_hybrid"


InitStrategy = Union[Uniform, Potential, PriorSolution, SurrogateUniform, SurrogateIDW, SurrogateHybrid]

STRATEGY_TYPES = {
    cls.name: cls for cls in (Uniform, Potential, PriorSolution, SurrogateUniform, SurrogateIDW, SurrogateHybrid)
}


# --------------------------------------------------------------------------
# Inverse distance weighting


class IDWInterpolator:
    """Shepard interpolation over the ``k`` nearest samples.

    Weights are ``1 / (d**power + eps)``; a query that coincides with a
    sample returns that sample's value exactly. The k-d tree is built once.
    """

    def __init__(self, points, values, power: float = IDW_POWER, k: int = IDW_NEIGHBORS, eps: float = 0.0):
        self.points = np.asarray(points, dtype=float)
        if self.points.ndim != 2 or len(self.points) == 0:
            raise ValueError("IDW needs at least one sample point")
        if not power > 0:
            raise ValueError(f"IDW power must be positive, got {power}")
        values = np.asarray(values, dtype=float)
        self.scalar = values.ndim == 1
        self.values = values.reshape(len(self.points), -1)
        self.power = power
        self.k = int(min(k, len(self.points)))
        self.eps = eps
        self.tree = cKDTree(self.points)

    def __call__(self, query) -> np.ndarray:
        q = np.asarray(query, dtype=float)
        single = q.ndim == 1
        q = np.atleast_2d(q)
        if len(q) == 0:
            out = np.zeros((0, self.values.shape[1]))
        else:
            d, idx = self.tree.query(q, k=self.k)
            if self.k == 1:
                d = d[:, None]
                idx = idx[:, None]
            with np.errstate(divide="ignore"):
                w = 1.0 / (d**self.power + self.eps)
            exact = d == 0.0
            hit = exact.any(axis=1)
            # coincident sample wins outright (first in distance order)
            w[hit] = exact[hit].astype(float)
            w /= w.sum(axis=1, keepdims=True)
            out = np.einsum("qk,qkc->qc", w, self.values[idx])
        if self.scalar:
            out = out[:, 0]
        return out[0] if single else out


def idw_interpolate(points, values, query, power: float = IDW_POWER, K: int = IDW_NEIGHBORS, eps: float = 0.0):
    if len(np.atleast_1d(np.asarray(points, dtype=float).ravel())) == 0:
        raise ValueError("idw_interpolate: empty point set")
    return IDWInterpolator(points, values, power, K, eps)(query)


def default_eps(grid: Grid) -> float:
    return 1e-12 * grid.diagonal**2


# --------------------------------------------------------------------------
# Traditional strategies


def init_uniform(grid: Grid, fs: FreestreamConditions, mask: ObstacleMask | None = None) -> FlowState:
    nx, ny = grid.shape
    state = FlowState(
        np.full((nx + 1, ny), float(fs.u_inf)),
        np.zeros((nx, ny + 1)),
        np.zeros((nx, ny)),
        np.full((nx, ny), float(fs.k_inf)),
        0.0,
    )
    if mask is not None:
        state = apply_boundary_conditions(state, fs, mask)
    return state


def init_potential(grid: Grid, mask: ObstacleMask, fs: FreestreamConditions, tol: float = 1e-8, solution=None) -> FlowState:
    """Potential-flow velocity and Bernoulli pressure, clamped at 4 U_inf; uniform k."""
    sol = solution if solution is not None else solve_potential(grid, mask, fs, tol=tol)
    u, v = clamp_speed(sol.u, sol.v, SPEED_CLAMP * fs.u_inf)
    state = FlowState(u, v, sol.p.copy(), potential_k_field(grid, fs), 0.0)
    return apply_boundary_conditions(state, fs, mask)


def init_prior_solution(
    grid: Grid,
    fs: FreestreamConditions,
    path,
    mask: ObstacleMask | None = None,
    drop_k: bool = False,
) -> FlowState:
    """Load a stored snapshot, interpolating bilinearly when its grid differs.

    At matching resolution the stored fields are returned untouched. A file
    without a ``k`` block (or ``drop_k``) gets k = k_inf everywhere.
    """
    snap = read_snapshot(path)
    src = snap.grid
    same_domain = np.isclose(src.lx, grid.lx) and np.isclose(src.ly, grid.ly)
    if not same_domain:
        raise ValueError(
            f"prior solution domain {src.lx}x{src.ly} does not match {grid.lx}x{grid.ly}"
        )
    if "p" not in snap.cell:
        raise ValueError(f"{path}: snapshot has no pressure field")
    have_faces = snap.u_face is not None and snap.v_face is not None
    if not have_faces and not ("u" in snap.cell and "v" in snap.cell):
        raise ValueError(f"{path}: snapshot has no velocity field")

    if src.shape == grid.shape:
        if have_faces:
            u, v = snap.u_face.copy(), snap.v_face.copy()
        else:
            u, v = _centres_to_faces(snap.cell["u"], snap.cell["v"])
        p = snap.cell["p"].copy()
        k = snap.cell["k"].copy() if "k" in snap.cell else None
        resampled = not have_faces
    else:
        xs, ys = src.xc(np.arange(src.nx)), src.yc(np.arange(src.ny))
        if have_faces:
            u = _resample(src.xf(np.arange(src.nx + 1)), ys, snap.u_face, grid.u_points())
            v = _resample(xs, src.yf(np.arange(src.ny + 1)), snap.v_face, grid.v_points())
        else:
            u = _resample(xs, ys, snap.cell["u"], grid.u_points())
            v = _resample(xs, ys, snap.cell["v"], grid.v_points())
        p = _resample(xs, ys, snap.cell["p"], grid.cell_centers())
        k = _resample(xs, ys, snap.cell["k"], grid.cell_centers()) if "k" in snap.cell else None
        resampled = True

    if k is None or drop_k:
        k = potential_k_field(grid, fs)
    state = FlowState(u, v, p, np.maximum(k, 0.0), 0.0)
    if mask is not None and resampled:
        state = apply_boundary_conditions(state, fs, mask)
    state.check(grid)
    return state


def _centres_to_faces(uc, vc):
    nx, ny = uc.shape
    u = np.empty((nx + 1, ny))
    u[1:-1] = 0.5 * (uc[:-1] + uc[1:])
    u[0], u[-1] = uc[0], uc[-1]
    v = np.empty((nx, ny + 1))
    v[:, 1:-1] = 0.5 * (vc[:, :-1] + vc[:, 1:])
    v[:, 0], v[:, -1] = vc[:, 0], vc[:, -1]
    return u, v


def _resample(xs, ys, values, target):
    # bilinear inside the source lattice, clamped to its edge values outside
    interp = RegularGridInterpolator((xs, ys), values, method="linear", bounds_error=False, fill_value=None)
    tx, ty = target
    tx = np.clip(tx, xs[0], xs[-1])
    ty = np.clip(ty, ys[0], ys[-1])
    return interp(np.column_stack([tx.ravel(), ty.ravel()])).reshape(tx.shape)


# --------------------------------------------------------------------------
# Surrogate sources


def load_surrogate(path) -> SurrogateField:
    path = Path(path)
    bbox, data = parse_surrogate(path.read_text())
    return SurrogateField(data[:, :2], data[:, 2], data[:, 3], data[:, 4], data[:, 5], bbox)


def proxy_k(omega, delta: float, k_inf: float, c: float = PROXY_K_COEFF):
    """Turbulence-indicator proxy max(k_inf, c * |omega|^2 * delta^2)."""
    return np.maximum(k_inf, c * np.abs(omega) ** 2 * delta**2)


def surrogate_bbox(mask: ObstacleMask, upstream: float = 1.5, lateral: float = 1.5, downstream: float = 4.0):
    """Near-field box in obstacle lengths around the solid, clipped to the domain interior."""
    g = mask.grid
    if mask.shape_spec is not None:
        x0, y0, x1, y1 = mask.shape_spec.bounds
    else:
        x0, y0, x1, y1 = mask.bbox
    length = max(x1 - x0, y1 - y0)
    return (
        max(x0 - upstream * length, 0.0),
        max(y0 - lateral * length, 0.0),
        min(x1 + downstream * length, g.lx),
        min(y1 + lateral * length, g.ly),
    )


def coarsen_mask(mask: ObstacleMask, coarse: Grid) -> ObstacleMask:
    if mask.shape_spec is not None:
        return rasterize_obstacle(coarse, mask.shape_spec)
    fx = mask.grid.nx // coarse.nx
    fy = mask.grid.ny // coarse.ny
    blocks = mask.solid[: coarse.nx * fx, : coarse.ny * fy].reshape(coarse.nx, fx, coarse.ny, fy)
    return ObstacleMask(coarse, blocks.mean(axis=(1, 3)) >= 0.5)


def vorticity(state: FlowState, grid: Grid) -> np.ndarray:
    """Cell-centred z-vorticity from the cell-averaged velocity."""
    uc, vc = state.cell_velocity()
    return np.gradient(vc, grid.dx, axis=0) - np.gradient(uc, grid.dy, axis=1)


def build_proxy_surrogate(
    grid: Grid,
    mask: ObstacleMask,
    fs: FreestreamConditions,
    factor: int,
    dt: float,
    t_end: float,
    c: float = PROXY_K_COEFF,
) -> SurrogateField:
    """Cheap stand-in for a learned near-field prediction.

    Runs the transient solver on a grid coarsened by ``factor`` from
    potential-flow initialization up to ``t_end``, averages the final third,
    crops to the near-field box and samples the fluid cell centres. The
    coarse time step is ``dt * factor`` so the cell CFL number matches the
    fine run. Pressure is re-gauged so that the upstream freestream sits at
    p = 0, the convention of the uniform and potential fields.
    """
    if int(factor) != factor or factor < 2:
        raise ValueError(f"proxy factor must be an integer >= 2, got {factor}")
    cspec = GridSpec(grid.nx // factor, grid.ny // factor, grid.lx, grid.ly)
    cgrid = Grid(cspec)
    cmask = coarsen_mask(mask, cgrid)
    state0 = init_potential(cgrid, cmask, fs)
    cfg = SolverConfig(dt=dt * factor, t_end=t_end, sample_every=1)
    result = run(state0, cgrid, cmask, fs, cfg, average_from=t_end * 2.0 / 3.0)
    mean = result.mean
    uc, vc = mean.cell_velocity()
    p = mean.p - float(np.mean(mean.p[0][cmask.fluid[0]]))
    delta = float(np.sqrt(cgrid.dx * cgrid.dy))
    k = proxy_k(vorticity(mean, cgrid), delta, fs.k_inf, c)

    bbox = surrogate_bbox(mask)
    x, y = cgrid.cell_centers()
    take = cmask.fluid & (x >= bbox[0]) & (x <= bbox[2]) & (y >= bbox[1]) & (y <= bbox[3])
    pts = np.column_stack([x[take], y[take]])
    return SurrogateField(pts, uc[take], vc[take], p[take], k[take], bbox)


# --------------------------------------------------------------------------
# Surrogate extensions


@dataclass
class _Extended:
    """Donor fields on each staggered location: u and k at x-faces, v and k at
    y-faces, p and k at cell centres."""

    u: np.ndarray
    k_u: np.ndarray
    v: np.ndarray
    k_v: np.ndarray
    p: np.ndarray
    k: np.ndarray


def _uniform_values(fs: FreestreamConditions) -> np.ndarray:
    return np.array([fs.u_inf, 0.0, 0.0, fs.k_inf])


def _evaluate(interp, grid: Grid, fs: FreestreamConditions, region=None) -> _Extended:
    """Interpolate (u, v, p, k) at every staggered location; outside ``region`` use uniform values."""
    uni = _uniform_values(fs)
    out = {}
    for loc, (x, y) in (("u", grid.u_points()), ("v", grid.v_points()), ("c", grid.cell_centers())):
        vals = np.broadcast_to(uni, x.shape + (4,)).copy()
        sel = np.ones(x.shape, dtype=bool) if region is None else region(x, y)
        if sel.any():
            vals[sel] = interp(np.column_stack([x[sel], y[sel]]))
        out[loc] = vals
    return _Extended(
        u=out["u"][..., 0],
        k_u=out["u"][..., 3],
        v=out["v"][..., 1],
        k_v=out["v"][..., 3],
        p=out["c"][..., 2],
        k=out["c"][..., 3],
    )


def _to_state(ext: _Extended, fs: FreestreamConditions, mask: ObstacleMask | None) -> FlowState:
    state = FlowState(ext.u.copy(), ext.v.copy(), ext.p.copy(), np.maximum(ext.k, 0.0), 0.0)
    if mask is not None:
        state = apply_boundary_conditions(state, fs, mask)
    return state


def extend_surrogate_uniform(
    s: SurrogateField,
    grid: Grid,
    fs: FreestreamConditions,
    mask: ObstacleMask | None = None,
    power: float = IDW_POWER,
    K: int = IDW_NEIGHBORS,
) -> FlowState:
    """IDW from the samples inside the bounding box, uniform freestream outside it."""
    interp = IDWInterpolator(s.points, s.values, power, K, default_eps(grid))
    return _to_state(_evaluate(interp, grid, fs, region=s.in_bbox), fs, mask)


def boundary_seeds(grid: Grid, fs: FreestreamConditions, every: int = SEED_EVERY):
    """Points on the outer boundary carrying the known boundary values.

    One point per ``every`` boundary cells on the inlet, outlet and both slip
    walls. Inlet points carry the freestream state; outlet points p = 0 with
    freestream velocity; wall points v = 0 with u = U_inf.
    """
    if int(every) != every or every < 1:
        raise ValueError(f"seed spacing must be a positive integer, got {every}")
    js = np.arange(0, grid.ny, every)
    is_ = np.arange(0, grid.nx, every)
    yj = grid.yc(js)
    xi = grid.xc(is_)
    pts = np.concatenate(
        [
            np.column_stack([np.zeros_like(yj), yj]),
            np.column_stack([np.full_like(yj, grid.lx), yj]),
            np.column_stack([xi, np.zeros_like(xi)]),
            np.column_stack([xi, np.full_like(xi, grid.ly)]),
        ]
    )
    vals = np.broadcast_to(_uniform_values(fs), (len(pts), 4)).copy()
    return pts, vals


def _idw_extension(s, grid, fs, seed_every, power, K) -> _Extended:
    seed_pts, seed_vals = boundary_seeds(grid, fs, seed_every)
    pts = np.concatenate([s.points, seed_pts])
    vals = np.concatenate([s.values, seed_vals])
    interp = IDWInterpolator(pts, vals, power, K, default_eps(grid))
    return _evaluate(interp, grid, fs)


def extend_surrogate_idw(
    s: SurrogateField,
    grid: Grid,
    fs: FreestreamConditions,
    mask: ObstacleMask | None = None,
    seed_every: int = SEED_EVERY,
    power: float = IDW_POWER,
    K: int = IDW_NEIGHBORS,
) -> FlowState:
    """IDW over the samples merged with boundary seed points, everywhere in the domain."""
    return _to_state(_idw_extension(s, grid, fs, seed_every, power, K), fs, mask)


def blend_alpha(k, bp: BlendParams):
    """Intermittency weight sin^2(pi/2 * clip((k - k_lower) / (k_upper - k_lower), 0, 1))."""
    r = np.clip((np.asarray(k, dtype=float) - bp.k_lower) / (bp.k_upper - bp.k_lower), 0.0, 1.0)
    a = np.sin(0.5 * np.pi * r) ** 2
    return float(a) if a.ndim == 0 else a


def init_surrogate_hybrid(
    s: SurrogateField,
    grid: Grid,
    mask: ObstacleMask,
    fs: FreestreamConditions,
    bp: BlendParams | None = None,
    seed_every: int = SEED_EVERY,
    power: float = IDW_POWER,
    K: int = IDW_NEIGHBORS,
    potential: FlowState | None = None,
) -> FlowState:
    """Blend the IDW-extended surrogate with potential flow, weighted by the extended k.

    ``alpha * surrogate + (1 - alpha) * potential`` on u, v, p and k, with
    alpha taken from the extended surrogate k at each staggered location.
    """
    if bp is None:
        bp = BlendParams.from_k_inf(fs.k_inf)
    ext = _idw_extension(s, grid, fs, seed_every, power, K)
    pot = potential if potential is not None else init_potential(grid, mask, fs)
    a_u = blend_alpha(ext.k_u, bp)
    a_v = blend_alpha(ext.k_v, bp)
    a_c = blend_alpha(ext.k, bp)
    state = FlowState(
        a_u * ext.u + (1 - a_u) * pot.u,
        a_v * ext.v + (1 - a_v) * pot.v,
        a_c * ext.p + (1 - a_c) * pot.p,
        np.maximum(a_c * ext.k + (1 - a_c) * pot.k, 0.0),
        0.0,
    )
    return apply_boundary_conditions(state, fs, mask)
