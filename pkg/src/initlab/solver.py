"""Explicit projection solver for 2D incompressible flow on the MAC grid.

Each step is a predictor/corrector sequence: an explicit Euler predictor
followed by ``n_correctors`` trapezoidal corrector passes, every pass ending
in a pressure projection. With two correctors the amplification factor is
``1 + z + z^2/2 + z^3/4``, second-order accurate and stable on the imaginary
axis up to |z| = 2, which is what central advection needs.

Pressure is non-incremental: the field stored in the state is the one that
made the final corrector divergence-free, so the initial pressure never
feeds back into the velocity.
"""

from __future__ import annotations

import time as _time
import weakref
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import FlowState, FreestreamConditions, Grid, ObstacleMask
from .poisson import divergence, fluid_laplacian


class CFLError(RuntimeError):
    def __init__(self, cfl: float, limit: float, cell: tuple[int, int]):
        super().__init__(f"CFL {cfl:.4g} exceeds limit {limit:.4g} at cell {cell}")
        self.cfl = cfl
        self.cell = cell


class PoissonError(RuntimeError):
    def __init__(self, residual: float, bound: float):
        super().__init__(f"pressure projection left divergence {residual:.3e} above {bound:.3e}")
        self.residual = residual


class SimulationError(RuntimeError):
    def __init__(self, t: float, cause: Exception):
        super().__init__(f"step failed at t={t:.6g}: {cause}")
        self.time = t
        self.__cause__ = cause


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    t_end: float
    cfl_limit: float = 0.9
    poisson_tol: float = 1e-7
    n_correctors: int = 2
    sample_every: int = 1
    periodic: bool = False  # doubly periodic box, used by the verification harness

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"SolverConfig.dt must be positive, got {self.dt}")
        if not self.t_end > self.dt:
            raise ValueError(f"SolverConfig.t_end must exceed dt, got t_end={self.t_end}, dt={self.dt}")
        if not 0 < self.cfl_limit <= 1:
            raise ValueError(f"SolverConfig.cfl_limit must be in (0, 1], got {self.cfl_limit}")
        if not self.poisson_tol > 0:
            raise ValueError(f"SolverConfig.poisson_tol must be positive, got {self.poisson_tol}")
        if int(self.n_correctors) != self.n_correctors or self.n_correctors < 0:
            raise ValueError("SolverConfig.n_correctors must be a non-negative integer")
        if int(self.sample_every) != self.sample_every or self.sample_every < 1:
            raise ValueError("SolverConfig.sample_every must be an integer >= 1")


@dataclass
class ForceSeries:
    times: np.ndarray
    fx: np.ndarray
    fy: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.fx = np.asarray(self.fx, dtype=float)
        self.fy = np.asarray(self.fy, dtype=float)
        if not (len(self.times) == len(self.fx) == len(self.fy)):
            raise ValueError("ForceSeries fields must have equal length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("ForceSeries times must be strictly increasing")

    def __len__(self):
        return len(self.times)


# --------------------------------------------------------------------------
# Pressure projection


class _ChannelProjector:
    """Fast pressure solve for the channel with an embedded obstacle.

    The full rectangle (Neumann inlet and walls, p = 0 at the outlet face) is
    diagonalised by a DCT-IV along x and a DCT-II along y. The obstacle only
    changes the rows of fluid cells that touch it, a low-rank modification
    handled with a small capacitance matrix (Woodbury identity). Solid cells
    keep their rectangle rows, so the fluid block decouples from them.
    Very large obstacles fall back to a sparse LU factorisation.
    """

    max_rank = 2000

    def __init__(self, grid: Grid, mask: ObstacleMask):
        self.grid = grid
        self.mask = mask
        self.fluid = ~mask.solid
        self.inner_x = self.fluid[:-1] & self.fluid[1:]
        self.inner_y = self.fluid[:, :-1] & self.fluid[:, 1:]
        # gradient weights: zero across faces that touch solid
        self.wx = self.inner_x / grid.dx
        self.wy = self.inner_y / grid.dy
        self.w_out = -2.0 * self.fluid[-1] / grid.dx
        nx, ny = grid.shape
        lam_x = (2 * np.cos((np.arange(nx) + 0.5) * np.pi / nx) - 2) / grid.dx**2
        lam_y = (2 * np.cos(np.arange(ny) * np.pi / ny) - 2) / grid.dy**2
        self.inv = 1.0 / (lam_x[:, None] + lam_y[None, :])
        self.lu = None
        self.rows = np.zeros(0, dtype=np.int64)
        if mask.solid.any():
            D, rows = self._modification()
            if rows.size > self.max_rank:
                A = fluid_laplacian(grid, mask, outlet_dirichlet=True).tocsc()
                self.lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
            else:
                self.rows, self.D = rows, D
                cap = np.eye(rows.size)
                for lo in range(0, rows.size, 64):
                    cols = rows[lo : lo + 64]
                    e = np.zeros((cols.size, nx * ny))
                    e[np.arange(cols.size), cols] = 1.0
                    cap[:, lo : lo + cols.size] += D @ self._rect_solve(e.reshape(-1, nx, ny)).reshape(cols.size, -1).T
                self.cap = sla.lu_factor(cap)

    def _modification(self):
        # fluid rows that touch solid: drop the coupling and the matching diagonal term
        g = self.grid
        nx, ny = g.shape
        s = self.mask.solid
        flat = np.arange(nx * ny).reshape(nx, ny)
        r, c, val = [], [], []
        for axis, h in ((0, g.dx), (1, g.dy)):
            w = 1.0 / h**2
            for a, b in ((slice(None, -1), slice(1, None)), (slice(1, None), slice(None, -1))):
                sa = (a, slice(None)) if axis == 0 else (slice(None), a)
                sb = (b, slice(None)) if axis == 0 else (slice(None), b)
                hit = self.fluid[sa] & s[sb]
                i, j = flat[sa][hit], flat[sb][hit]
                r += [i, i]
                c += [j, i]
                val += [np.full(i.size, -w), np.full(i.size, w)]
        rr = np.concatenate(r)
        rows = np.unique(rr)
        local = np.searchsorted(rows, rr)
        D = sp.csr_matrix((np.concatenate(val), (local, np.concatenate(c))), shape=(rows.size, nx * ny))
        return D, rows

    def _rect_solve(self, b):
        c = sfft.dct(b, type=4, axis=-2, norm="ortho")
        c = sfft.dct(c, type=2, axis=-1, norm="ortho")
        c *= self.inv
        c = sfft.idct(c, type=2, axis=-1, norm="ortho")
        return sfft.idct(c, type=4, axis=-2, norm="ortho")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.lu is not None:
            phi = np.zeros(self.grid.shape)
            phi[self.fluid] = self.lu.solve(rhs[self.fluid])
            return phi
        b = np.where(self.fluid, rhs, 0.0)
        y = self._rect_solve(b)
        if self.rows.size:
            z = sla.lu_solve(self.cap, self.D @ y.ravel())
            w = np.zeros(b.size)
            w[self.rows] = z
            y -= self._rect_solve(w.reshape(b.shape))
        y[self.mask.solid] = 0.0
        return y

    def correct(self, u, v, phi):
        u[1:-1] -= self.wx * (phi[1:] - phi[:-1])
        u[-1] -= self.w_out * phi[-1]
        v[:, 1:-1] -= self.wy * (phi[:, 1:] - phi[:, :-1])


class _PeriodicProjector:
    def __init__(self, grid: Grid):
        self.grid = grid
        kx = 2 * np.pi * np.fft.fftfreq(grid.nx)
        ky = 2 * np.pi * np.fft.fftfreq(grid.ny)
        lam = (2 * np.cos(kx)[:, None] - 2) / grid.dx**2 + (2 * np.cos(ky)[None, :] - 2) / grid.dy**2
        lam[0, 0] = 1.0
        self.inv = 1.0 / lam
        self.inv[0, 0] = 0.0

    def solve(self, rhs):
        return np.real(np.fft.ifft2(np.fft.fft2(rhs) * self.inv))

    def correct(self, u, v, phi):
        g = self.grid
        u[:-1] -= (phi - np.roll(phi, 1, axis=0)) / g.dx
        u[-1] = u[0]
        v[:, :-1] -= (phi - np.roll(phi, 1, axis=1)) / g.dy
        v[:, -1] = v[:, 0]


_channel_cache: "weakref.WeakKeyDictionary[ObstacleMask, _ChannelProjector]" = weakref.WeakKeyDictionary()
_periodic_cache: dict[Grid, _PeriodicProjector] = {}


def _projector(grid: Grid, mask: ObstacleMask, periodic: bool):
    if periodic:
        if grid not in _periodic_cache:
            _periodic_cache[grid] = _PeriodicProjector(grid)
        return _periodic_cache[grid]
    proj = _channel_cache.get(mask)
    if proj is None:
        proj = _ChannelProjector(grid, mask)
        _channel_cache[mask] = proj
    return proj


def project(
    u_star: np.ndarray,
    v_star: np.ndarray,
    grid: Grid,
    mask: ObstacleMask,
    cfg: SolverConfig,
    rho: float = 1.0,
    u_ref: float | None = None,
):
    """Remove the gradient part of (u_star, v_star).

    Returns ``(u, v, p)`` where ``p`` is the pressure (density ``rho``) whose
    gradient over ``cfg.dt`` was subtracted. Dirichlet faces (inlet, walls,
    obstacle) are never modified; the outlet face absorbs the global mass
    imbalance through the p = 0 outlet condition.
    """
    if not (np.all(np.isfinite(u_star)) and np.all(np.isfinite(v_star))):
        raise ValueError("project: predictor velocity contains non-finite values")
    if u_ref is None:
        u_ref = max(float(np.abs(u_star).max()), float(np.abs(v_star).max()), 1e-300)
    proj = _projector(grid, mask, cfg.periodic)
    u = np.array(u_star, dtype=float)
    v = np.array(v_star, dtype=float)
    if cfg.periodic:
        fluid = np.ones(grid.shape, dtype=bool)
    else:
        fluid = ~mask.solid
    bound = cfg.poisson_tol * u_ref / grid.dx
    phi_total = np.zeros(grid.shape)
    # Direct solve; one refinement pass is allowed if round-off leaves a residual.
    for _ in range(3):
        div = divergence(u, v, grid)
        res = float(np.abs(div[fluid]).max(initial=0.0))
        if res <= bound:
            break
        phi = proj.solve(div)
        proj.correct(u, v, phi)
        phi_total += phi
    else:
        div = divergence(u, v, grid)
        res = float(np.abs(div[fluid]).max(initial=0.0))
        if res > bound:
            raise PoissonError(res, bound)
    p = rho * phi_total / cfg.dt
    if not cfg.periodic:
        p[mask.solid] = 0.0
    return u, v, p


# --------------------------------------------------------------------------
# Momentum right-hand side


def _rhs_channel_numpy(u, v, grid: Grid, mask: ObstacleMask, nu: float):
    """Vectorised reference for :func:`_rhs_channel`."""
    dx, dy = grid.dx, grid.dy
    nx, ny = grid.shape
    u_in, v_in = mask.u_inside, mask.v_inside

    # corner (x-face, y-face intersection) values
    uc = np.empty((nx + 1, ny + 1))
    uc[:, 1:-1] = 0.5 * (u[:, :-1] + u[:, 1:])
    uc[:, 1:-1][u_in[:, :-1] | u_in[:, 1:]] = 0.0
    uc[:, 0] = u[:, 0]
    uc[:, -1] = u[:, -1]
    vc = np.empty((nx + 1, ny + 1))
    vc[1:-1, :] = 0.5 * (v[:-1] + v[1:])
    vc[1:-1][v_in[:-1] | v_in[1:]] = 0.0
    vc[0, :] = 0.0
    vc[-1, :] = v[-1, :]
    uv = uc * vc

    ucc = 0.5 * (u[:-1] + u[1:])
    vcc = 0.5 * (v[:, :-1] + v[:, 1:])

    # y-neighbours of u: slip walls copy, buried faces reflect (no-slip)
    un = np.empty_like(u)
    un[:, :-1] = np.where(u_in[:, 1:], -u[:, :-1], u[:, 1:])
    un[:, -1] = u[:, -1]
    us = np.empty_like(u)
    us[:, 1:] = np.where(u_in[:, :-1], -u[:, 1:], u[:, :-1])
    us[:, 0] = u[:, 0]

    fu = np.zeros_like(u)
    adv = (ucc[1:] ** 2 - ucc[:-1] ** 2) / dx + (uv[1:-1, 1:] - uv[1:-1, :-1]) / dy
    lap = (u[2:] - 2 * u[1:-1] + u[:-2]) / dx**2 + (un[1:-1] - 2 * u[1:-1] + us[1:-1]) / dy**2
    fu[1:-1] = nu * lap - adv
    fu[mask.u_wall] = 0.0

    # x-neighbours of v: inlet v = 0, outlet zero gradient, buried faces reflect
    ve = np.empty_like(v)
    ve[:-1] = np.where(v_in[1:], -v[:-1], v[1:])
    ve[-1] = v[-1]
    vw = np.empty_like(v)
    vw[1:] = np.where(v_in[:-1], -v[1:], v[:-1])
    vw[0] = -v[0]

    fv = np.zeros_like(v)
    adv = (uv[1:, 1:-1] - uv[:-1, 1:-1]) / dx + (vcc[:, 1:] ** 2 - vcc[:, :-1] ** 2) / dy
    lap = (ve[:, 1:-1] - 2 * v[:, 1:-1] + vw[:, 1:-1]) / dx**2 + (
        v[:, 2:] - 2 * v[:, 1:-1] + v[:, :-2]
    ) / dy**2
    fv[:, 1:-1] = nu * lap - adv
    fv[mask.v_wall] = 0.0
    return fu, fv



@numba.njit(cache=True)
def _rhs_kernel(u, v, u_in, v_in, u_wall, v_wall, dx, dy, nu):  # pragma: no cover - compiled
    nx, ny = v.shape[0], u.shape[1]
    uv = np.empty((nx + 1, ny + 1))
    for i in range(nx + 1):
        for j in range(ny + 1):
            if j == 0:
                a = u[i, 0]
            elif j == ny:
                a = u[i, ny - 1]
            elif u_in[i, j - 1] or u_in[i, j]:
                a = 0.0
            else:
                a = 0.5 * (u[i, j - 1] + u[i, j])
            if i == 0:
                b = 0.0
            elif i == nx:
                b = v[nx - 1, j]
            elif v_in[i - 1, j] or v_in[i, j]:
                b = 0.0
            else:
                b = 0.5 * (v[i - 1, j] + v[i, j])
            uv[i, j] = a * b
    idx2 = 1.0 / (dx * dx)
    idy2 = 1.0 / (dy * dy)
    fu = np.zeros_like(u)
    for i in range(1, nx):
        for j in range(ny):
            if u_wall[i, j]:
                continue
            c = u[i, j]
            if j < ny - 1:
                un = -c if u_in[i, j + 1] else u[i, j + 1]
            else:
                un = c
            if j > 0:
                us = -c if u_in[i, j - 1] else u[i, j - 1]
            else:
                us = c
            ur = 0.5 * (c + u[i + 1, j])
            ul = 0.5 * (u[i - 1, j] + c)
            adv = (ur * ur - ul * ul) / dx + (uv[i, j + 1] - uv[i, j]) / dy
            lap = (u[i + 1, j] - 2 * c + u[i - 1, j]) * idx2 + (un - 2 * c + us) * idy2
            fu[i, j] = nu * lap - adv
    fv = np.zeros_like(v)
    for i in range(nx):
        for j in range(1, ny):
            if v_wall[i, j]:
                continue
            c = v[i, j]
            if i < nx - 1:
                ve = -c if v_in[i + 1, j] else v[i + 1, j]
            else:
                ve = c
            if i > 0:
                vw = -c if v_in[i - 1, j] else v[i - 1, j]
            else:
                vw = -c
            vt = 0.5 * (c + v[i, j + 1])
            vb = 0.5 * (v[i, j - 1] + c)
            adv = (uv[i + 1, j] - uv[i, j]) / dx + (vt * vt - vb * vb) / dy
            lap = (ve - 2 * c + vw) * idx2 + (v[i, j + 1] - 2 * c + v[i, j - 1]) * idy2
            fv[i, j] = nu * lap - adv
    return fu, fv


def _rhs_channel(u, v, grid: Grid, mask: ObstacleMask, nu: float):
    return _rhs_kernel(u, v, mask.u_inside, mask.v_inside, mask.u_wall, mask.v_wall, grid.dx, grid.dy, nu)


def _rhs_periodic(u, v, grid: Grid, nu: float):
    dx, dy = grid.dx, grid.dy
    uu = u[:-1]
    vv = v[:, :-1]
    ucc = 0.5 * (uu + np.roll(uu, -1, axis=0))
    vcc = 0.5 * (vv + np.roll(vv, -1, axis=1))
    # corner (i, j) sits at (i*dx, j*dy)
    uc = 0.5 * (uu + np.roll(uu, 1, axis=1))
    vc = 0.5 * (vv + np.roll(vv, 1, axis=0))
    uv = uc * vc

    def lap(f):
        return (np.roll(f, -1, 0) - 2 * f + np.roll(f, 1, 0)) / dx**2 + (
            np.roll(f, -1, 1) - 2 * f + np.roll(f, 1, 1)
        ) / dy**2

    fu = np.empty_like(u)
    fu[:-1] = nu * lap(uu) - (
        (ucc**2 - np.roll(ucc, 1, 0) ** 2) / dx + (np.roll(uv, -1, 1) - uv) / dy
    )
    fu[-1] = fu[0]
    fv = np.empty_like(v)
    fv[:, :-1] = nu * lap(vv) - (
        (np.roll(uv, -1, 0) - uv) / dx + (vcc**2 - np.roll(vcc, 1, 1) ** 2) / dy
    )
    fv[:, -1] = fv[:, 0]
    return fu, fv


# --------------------------------------------------------------------------
# Turbulence indicator transport


def _advance_k(state: FlowState, grid: Grid, mask: ObstacleMask, fs: FreestreamConditions, dt: float, periodic: bool):
    k, u, v = state.k, state.u, state.v
    if periodic:
        fx = np.where(u[:-1] > 0, np.roll(k, 1, 0), k) * u[:-1]
        fx = np.concatenate([fx, fx[:1]], axis=0)
        fy = np.where(v[:, :-1] > 0, np.roll(k, 1, 1), k) * v[:, :-1]
        fy = np.concatenate([fy, fy[:, :1]], axis=1)
        decay = 0.0
    else:
        fx = np.zeros_like(u)
        fx[1:-1] = np.where(u[1:-1] > 0, k[:-1], k[1:]) * u[1:-1]
        fx[0] = u[0] * np.where(u[0] > 0, fs.k_inf, k[0])
        fx[-1] = u[-1] * np.where(u[-1] > 0, k[-1], fs.k_inf)
        fy = np.zeros_like(v)
        fy[:, 1:-1] = np.where(v[:, 1:-1] > 0, k[:, :-1], k[:, 1:]) * v[:, 1:-1]
        decay = fs.u_inf / grid.lx
    k_new = k - dt * ((fx[1:] - fx[:-1]) / grid.dx + (fy[:, 1:] - fy[:, :-1]) / grid.dy)
    k_new -= dt * decay * (k - fs.k_inf)
    if not periodic:
        k_new[mask.solid] = k[mask.solid]
    return np.maximum(k_new, 0.0)


# --------------------------------------------------------------------------
# Diagnostics


def cfl_number(state: FlowState, grid: Grid, cfg: SolverConfig, where: bool = False):
    """Max over cells of |u| dt/dx + |v| dt/dy, taking the larger face value on each axis."""
    au = np.abs(state.u)
    av = np.abs(state.v)
    c = np.maximum(au[:-1], au[1:]) * (cfg.dt / grid.dx) + np.maximum(av[:, :-1], av[:, 1:]) * (cfg.dt / grid.dy)
    cmax = float(c.max())
    if where:
        return cmax, tuple(int(i) for i in np.unravel_index(np.argmax(c), c.shape))
    return cmax


def total_pressure(state: FlowState, fs: FreestreamConditions) -> np.ndarray:
    uc, vc = state.cell_velocity()
    return state.p + 0.5 * fs.rho * (uc**2 + vc**2)


def kinetic_energy(state: FlowState, grid: Grid) -> float:
    uc, vc = state.cell_velocity()
    return float(0.5 * np.sum(uc**2 + vc**2) * grid.dx * grid.dy)


def compute_force(state: FlowState, grid: Grid, mask: ObstacleMask, fs: FreestreamConditions) -> tuple[float, float]:
    """Force per unit depth exerted by the fluid on the obstacle.

    Pressure is extrapolated linearly from the two nearest fluid cells onto
    each exposed solid face; wall shear uses the cell-centre tangential
    velocity half a cell from the wall.
    """
    if not mask.solid.any():
        raise ValueError("compute_force: obstacle mask is empty")
    s = mask.solid
    p = state.p
    nx, ny = grid.shape
    fluid = ~s
    mu = fs.rho * fs.nu
    uc, vc = state.cell_velocity()
    fx = 0.0
    fy = 0.0

    def wall_pressure(shift_axis, direction):
        # value at the face between each cell and its neighbour in +direction
        p2 = np.roll(p, direction, axis=shift_axis)
        f2 = np.roll(fluid, direction, axis=shift_axis)
        # the rolled-in edge entries are not valid neighbours
        edge = [slice(None), slice(None)]
        edge[shift_axis] = 0 if direction == 1 else -1
        f2[tuple(edge)] = False
        return np.where(f2, 1.5 * p - 0.5 * p2, p)

    # solid on the +x side of a fluid cell
    face = fluid[:-1] & s[1:]
    pw = wall_pressure(0, 1)[:-1]
    fx += float(np.sum(pw[face])) * grid.dy
    fy += float(np.sum(vc[:-1][face])) * mu / (0.5 * grid.dx) * grid.dy
    # solid on the -x side
    face = fluid[1:] & s[:-1]
    pw = wall_pressure(0, -1)[1:]
    fx -= float(np.sum(pw[face])) * grid.dy
    fy += float(np.sum(vc[1:][face])) * mu / (0.5 * grid.dx) * grid.dy
    # solid on the +y side
    face = fluid[:, :-1] & s[:, 1:]
    pw = wall_pressure(1, 1)[:, :-1]
    fy += float(np.sum(pw[face])) * grid.dx
    fx += float(np.sum(uc[:, :-1][face])) * mu / (0.5 * grid.dy) * grid.dx
    # solid on the -y side
    face = fluid[:, 1:] & s[:, :-1]
    pw = wall_pressure(1, -1)[:, 1:]
    fy -= float(np.sum(pw[face])) * grid.dx
    fx += float(np.sum(uc[:, 1:][face])) * mu / (0.5 * grid.dy) * grid.dx
    return fx, fy


# --------------------------------------------------------------------------
# Time stepping


def _apply_bc(u, v, fs, mask, periodic):
    if periodic:
        u[-1] = u[0]
        v[:, -1] = v[:, 0]
        return
    u[0, :] = fs.u_inf
    u[-1, :] = u[-2, :]
    v[:, 0] = 0.0
    v[:, -1] = 0.0
    u[mask.u_wall] = 0.0
    v[mask.v_wall] = 0.0


def step(
    state: FlowState,
    grid: Grid,
    mask: ObstacleMask,
    fs: FreestreamConditions,
    cfg: SolverConfig,
    check_cfl: bool = True,
) -> FlowState:
    dt = cfg.dt
    if check_cfl:
        cfl, cell = cfl_number(state, grid, cfg, where=True)
        if not cfl <= cfg.cfl_limit:
            raise CFLError(cfl, cfg.cfl_limit, cell)

    if cfg.periodic:
        def rhs(u, v):
            return _rhs_periodic(u, v, grid, fs.nu)
    else:
        def rhs(u, v):
            return _rhs_channel(u, v, grid, mask, fs.nu)

    u0, v0 = state.u, state.v
    fu0, fv0 = rhs(u0, v0)
    u1 = u0 + dt * fu0
    v1 = v0 + dt * fv0
    _apply_bc(u1, v1, fs, mask, cfg.periodic)
    u1, v1, p = project(u1, v1, grid, mask, cfg, fs.rho, fs.u_inf)
    for _ in range(cfg.n_correctors):
        fu1, fv1 = rhs(u1, v1)
        u1 = u0 + 0.5 * dt * (fu0 + fu1)
        v1 = v0 + 0.5 * dt * (fv0 + fv1)
        _apply_bc(u1, v1, fs, mask, cfg.periodic)
        u1, v1, p = project(u1, v1, grid, mask, cfg, fs.rho, fs.u_inf)

    k = _advance_k(state, grid, mask, fs, dt, cfg.periodic)
    return FlowState(u1, v1, p, k, state.t + dt)


@dataclass
class RunResult:
    series: ForceSeries
    snapshots: list[FlowState]
    final: FlowState
    mean: FlowState | None = None
    wall_time: float = 0.0
    step_times: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)


def run(
    state0: FlowState,
    grid: Grid,
    mask: ObstacleMask,
    fs: FreestreamConditions,
    cfg: SolverConfig,
    snapshot_times: Sequence[float] = (),
    average_from: float | None = None,
    on_step: Callable[[FlowState, int], None] | None = None,
) -> RunResult:
    """March ``state0`` to ``cfg.t_end``, sampling forces every ``cfg.sample_every`` steps.

    Sample ``m`` is taken after step ``m * sample_every``; the initial state is
    not sampled. ``snapshot_times`` are captured at the first step reaching
    each time. With ``average_from`` the result also carries the time mean of
    every step at or after that time. ``step_times`` holds cumulative wall
    time after each step.
    """
    state0.check(grid)
    t0 = float(state0.t)
    n_steps = int(round((cfg.t_end - t0) / cfg.dt))
    if n_steps < 0:
        raise ValueError(f"run: t_end={cfg.t_end} is before the initial time {t0}")
    times, fxs, fys = [], [], []
    pending = sorted(float(t) for t in snapshot_times)
    snapshots: list[FlowState] = []
    eps = 1e-9 * cfg.dt
    while pending and pending[0] <= t0 + eps:
        snapshots.append(state0.copy())
        pending.pop(0)

    acc = None
    n_acc = 0
    state = state0
    wall = np.zeros(n_steps)
    start = _time.perf_counter()
    for n in range(1, n_steps + 1):
        try:
            state = step(state, grid, mask, fs, cfg)
        except Exception as exc:  # noqa: BLE001 - re-raised with the failing time
            raise SimulationError(t0 + (n - 1) * cfg.dt, exc) from exc
        state.t = t0 + n * cfg.dt
        wall[n - 1] = _time.perf_counter() - start
        if n % cfg.sample_every == 0 and not cfg.periodic and mask.solid.any():
            fx, fy = compute_force(state, grid, mask, fs)
            times.append(state.t)
            fxs.append(fx)
            fys.append(fy)
        while pending and pending[0] <= state.t + eps:
            snapshots.append(state.copy())
            pending.pop(0)
        if average_from is not None and state.t >= average_from - eps:
            if acc is None:
                acc = [np.zeros_like(state.u), np.zeros_like(state.v), np.zeros_like(state.p), np.zeros_like(state.k)]
            for a, f in zip(acc, (state.u, state.v, state.p, state.k)):
                a += f
            n_acc += 1
        if on_step is not None:
            on_step(state, n)

    mean = None
    if acc is not None:
        mean = FlowState(*(a / n_acc for a in acc), t=state.t)
    return RunResult(
        ForceSeries(times, fxs, fys),
        snapshots,
        state,
        mean,
        _time.perf_counter() - start,
        wall,
    )
