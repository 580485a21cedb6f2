"""Staggered Cartesian grid, obstacle rasterization and boundary conditions.

Storage follows the MAC convention:

* ``p`` and ``k`` live at cell centres, shape ``(nx, ny)``;
* ``u`` lives on x-faces, shape ``(nx + 1, ny)``; ``u[0]`` is the inlet,
  ``u[nx]`` the outlet;
* ``v`` lives on y-faces, shape ``(nx, ny + 1)``; ``v[:, 0]`` and
  ``v[:, ny]`` are the bottom and top slip walls.

Index ``[i, j]`` runs along x first, then y.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Union

import numpy as np

MAX_CELLS = 4_000_000


class GridError(ValueError):
    pass


class ObstacleError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    lx: float
    ly: float
    max_cells: int = MAX_CELLS

    def __post_init__(self):
        for name in ("nx", "ny"):
            n = getattr(self, name)
            if isinstance(n, bool) or int(n) != n:
                raise GridError(f"GridSpec.{name} must be an integer, got {n!r}")
            if n < 8:
                raise GridError(f"GridSpec.{name} must be >= 8, got {n}")
        for name in ("lx", "ly"):
            if not getattr(self, name) > 0:
                raise GridError(f"GridSpec.{name} must be positive, got {getattr(self, name)!r}")
        if self.nx * self.ny > self.max_cells:
            raise GridError(
                f"GridSpec has {self.nx * self.ny} cells, above the cap of {self.max_cells}"
            )


@dataclass(frozen=True)
class Grid:
    spec: GridSpec

    @property
    def nx(self) -> int:
        return self.spec.nx

    @property
    def ny(self) -> int:
        return self.spec.ny

    @property
    def lx(self) -> float:
        return self.spec.lx

    @property
    def ly(self) -> float:
        return self.spec.ly

    @property
    def dx(self) -> float:
        return self.spec.lx / self.spec.nx

    @property
    def dy(self) -> float:
        return self.spec.ly / self.spec.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    def xc(self, i):
        """x coordinate of cell centre ``i``."""
        return (np.asarray(i) + 0.5) * self.dx

    def yc(self, j):
        return (np.asarray(j) + 0.5) * self.dy

    def xf(self, i):
        """x coordinate of x-face ``i`` (``i = 0`` is the inlet)."""
        return np.asarray(i) * self.dx

    def yf(self, j):
        return np.asarray(j) * self.dy

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xc(np.arange(self.nx)), self.yc(np.arange(self.ny)), indexing="ij")

    def u_points(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xf(np.arange(self.nx + 1)), self.yc(np.arange(self.ny)), indexing="ij")

    def v_points(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xc(np.arange(self.nx)), self.yf(np.arange(self.ny + 1)), indexing="ij")

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.lx, self.ly))


def make_grid(spec: GridSpec) -> Grid:
    return Grid(spec)


@dataclass(frozen=True)
class Rectangle:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ObstacleError(f"degenerate rectangle {self}")

    def contains(self, x, y):
        return (x > self.xmin) & (x < self.xmax) & (y > self.ymin) & (y < self.ymax)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise ObstacleError(f"circle radius must be positive, got {self.r}")

    def contains(self, x, y):
        return (x - self.cx) ** 2 + (y - self.cy) ** 2 < self.r**2

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (self.cx - self.r, self.cy - self.r, self.cx + self.r, self.cy + self.r)


ShapeSpec = Union[Rectangle, Circle]


@dataclass(frozen=True, eq=False)
class ObstacleMask:
    """Boolean solid mask on pressure cells.

    Instances compare and hash by identity so that solver caches can be keyed
    on them.
    """

    grid: Grid
    solid: np.ndarray
    shape_spec: ShapeSpec | None = None

    def __post_init__(self):
        self.solid.setflags(write=False)

    @classmethod
    def empty(cls, grid: Grid) -> "ObstacleMask":
        return cls(grid, np.zeros(grid.shape, dtype=bool))

    @property
    def fluid(self) -> np.ndarray:
        return ~self.solid

    @property
    def n_solid(self) -> int:
        return int(self.solid.sum())

    @cached_property
    def boundary_cells(self) -> np.ndarray:
        """(n, 2) array of fluid cells with at least one solid 4-neighbour, sorted by (i, j)."""
        s = self.solid
        near = np.zeros_like(s)
        near[1:, :] |= s[:-1, :]
        near[:-1, :] |= s[1:, :]
        near[:, 1:] |= s[:, :-1]
        near[:, :-1] |= s[:, 1:]
        return np.argwhere(near & ~s)

    @cached_property
    def u_wall(self) -> np.ndarray:
        """x-faces touching at least one solid cell (velocity held at zero)."""
        s = self.solid
        w = np.zeros((s.shape[0] + 1, s.shape[1]), dtype=bool)
        w[:-1] |= s
        w[1:] |= s
        return w

    @cached_property
    def v_wall(self) -> np.ndarray:
        s = self.solid
        w = np.zeros((s.shape[0], s.shape[1] + 1), dtype=bool)
        w[:, :-1] |= s
        w[:, 1:] |= s
        return w

    @cached_property
    def u_inside(self) -> np.ndarray:
        """x-faces buried in the solid (both neighbours solid, or the one neighbour at a boundary)."""
        s = self.solid
        w = np.zeros((s.shape[0] + 1, s.shape[1]), dtype=bool)
        w[1:-1] = s[:-1] & s[1:]
        w[0] = s[0]
        w[-1] = s[-1]
        return w

    @cached_property
    def v_inside(self) -> np.ndarray:
        s = self.solid
        w = np.zeros((s.shape[0], s.shape[1] + 1), dtype=bool)
        w[:, 1:-1] = s[:, :-1] & s[:, 1:]
        w[:, 0] = s[:, 0]
        w[:, -1] = s[:, -1]
        return w

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        """Physical extent (xmin, ymin, xmax, ymax) of the solid cells."""
        if not self.solid.any():
            raise ObstacleError("empty obstacle")
        idx = np.argwhere(self.solid)
        (i0, j0), (i1, j1) = idx.min(axis=0), idx.max(axis=0)
        g = self.grid
        return (i0 * g.dx, j0 * g.dy, (i1 + 1) * g.dx, (j1 + 1) * g.dy)


def rasterize_obstacle(grid: Grid, shape: ShapeSpec) -> ObstacleMask:
    """Stair-step rasterization: a cell is solid iff its centre lies inside ``shape``.

    The solid region must keep two fluid cells of clearance to every domain
    boundary; anything touching the inlet column is rejected.
    """
    xmin, ymin, xmax, ymax = shape.bounds
    if xmin <= 0 or ymin <= 0 or xmax >= grid.lx or ymax >= grid.ly:
        if xmin <= grid.dx:
            raise ObstacleError(f"obstacle {shape} touches the inlet")
        raise ObstacleError(f"obstacle {shape} extends outside the domain")
    x, y = grid.cell_centers()
    solid = np.asarray(shape.contains(x, y), dtype=bool)
    if not solid.any():
        raise ObstacleError("empty obstacle")
    idx = np.argwhere(solid)
    (i0, j0), (i1, j1) = idx.min(axis=0), idx.max(axis=0)
    if i0 < 1:
        raise ObstacleError(f"obstacle {shape} touches the inlet")
    if i0 < 2 or j0 < 2 or i1 > grid.nx - 3 or j1 > grid.ny - 3:
        raise ObstacleError(f"obstacle {shape} needs at least 2 cells of clearance to every boundary")
    return ObstacleMask(grid, solid, shape)


@dataclass(frozen=True)
class FreestreamConditions:
    u_inf: float
    nu: float
    l0: float
    rho: float = 1.225
    k_inf: float = 0.24

    def __post_init__(self):
        for name in ("u_inf", "nu", "l0", "rho"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"FreestreamConditions.{name} must be positive, got {val!r}")
        if not (np.isfinite(self.k_inf) and self.k_inf >= 0):
            raise ValueError(f"FreestreamConditions.k_inf must be >= 0, got {self.k_inf!r}")

    @property
    def dynamic_pressure(self) -> float:
        return 0.5 * self.rho * self.u_inf**2

    def scaled(self, factor: float) -> "FreestreamConditions":
        return replace(self, u_inf=self.u_inf * factor)


@dataclass
class FlowState:
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    k: np.ndarray
    t: float = 0.0

    @classmethod
    def zeros(cls, grid: Grid, t: float = 0.0) -> "FlowState":
        nx, ny = grid.shape
        return cls(
            np.zeros((nx + 1, ny)), np.zeros((nx, ny + 1)), np.zeros((nx, ny)), np.zeros((nx, ny)), t
        )

    def copy(self) -> "FlowState":
        return FlowState(self.u.copy(), self.v.copy(), self.p.copy(), self.k.copy(), self.t)

    def check(self, grid: Grid) -> None:
        nx, ny = grid.shape
        expected = {"u": (nx + 1, ny), "v": (nx, ny + 1), "p": (nx, ny), "k": (nx, ny)}
        for name, shp in expected.items():
            arr = getattr(self, name)
            if arr.shape != shp:
                raise ValueError(f"FlowState.{name} has shape {arr.shape}, expected {shp}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"FlowState.{name} contains non-finite values")
        if np.any(self.k < 0):
            raise ValueError("FlowState.k must be non-negative")

    def cell_velocity(self) -> tuple[np.ndarray, np.ndarray]:
        """Face velocities averaged to cell centres."""
        return 0.5 * (self.u[:-1] + self.u[1:]), 0.5 * (self.v[:, :-1] + self.v[:, 1:])


def apply_boundary_conditions(state: FlowState, fs: FreestreamConditions, mask: ObstacleMask) -> FlowState:
    """Return a copy of ``state`` with boundary and obstacle values imposed.

    Inlet: u = U_inf (v = 0 and k = k_inf enter through the stencil ghosts).
    Outlet: zero-gradient u. Top/bottom: slip walls, v = 0. Obstacle: every
    face touching a solid cell has zero velocity. Cell-centred p and k are
    left untouched.
    """
    state.check(mask.grid)
    out = state.copy()
    out.u[0, :] = fs.u_inf
    out.u[-1, :] = out.u[-2, :]
    out.v[:, 0] = 0.0
    out.v[:, -1] = 0.0
    out.u[mask.u_wall] = 0.0
    out.v[mask.v_wall] = 0.0
    return out
