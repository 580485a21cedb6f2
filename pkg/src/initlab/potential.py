"""Inviscid, irrotational reference flow around the obstacle.

The velocity potential solves the five-point Laplace problem over the
fluid cells with the normal velocity prescribed on every boundary face:
U_inf through inlet and outlet, zero on slip walls and obstacle faces.
Face velocities are the central difference of the potential, so the
result is discretely divergence-free up to the solver residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import FreestreamConditions, Grid, ObstacleMask
from .poisson import fluid_index, fluid_laplacian

SPEED_CLAMP = 4.0


class PotentialFlowError(RuntimeError):
    def __init__(self, message: str, residual_history: list[float]):
        super().__init__(message)
        self.residual_history = residual_history


@dataclass(frozen=True)
class PotentialSolution:
    phi: np.ndarray
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    residual: float
    iterations: int
    residual_history: list[float] = field(default_factory=list, repr=False)


def conjugate_gradient(A, b, tol, max_iters, x0=None):
    """Conjugate gradient for a symmetric positive (semi-)definite ``A``.

    Convergence is judged in the max norm, ``max|r| <= tol * max|b|``.
    Returns ``(x, history, converged)`` where ``history`` holds the relative
    max-norm residual at every iteration.
    """
    x = np.zeros_like(b) if x0 is None else x0.copy()
    scale = np.abs(b).max()
    if scale == 0.0:
        return np.zeros_like(b), [0.0], True
    r = b - A @ x
    d = r.copy()
    rr = r @ r
    history = [float(np.abs(r).max() / scale)]
    for _ in range(max_iters):
        if history[-1] <= tol:
            return x, history, True
        Ad = A @ d
        alpha = rr / (d @ Ad)
        x += alpha * d
        r -= alpha * Ad
        rr_new = r @ r
        d = r + (rr_new / rr) * d
        rr = rr_new
        history.append(float(np.abs(r).max() / scale))
    return x, history, history[-1] <= tol


def solve_potential(
    grid: Grid,
    mask: ObstacleMask,
    fs: FreestreamConditions,
    tol: float = 1e-8,
    max_iters: int = 20_000,
) -> PotentialSolution:
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    nx, ny = grid.shape
    idx = fluid_index(mask)
    # Negated so the operator is positive semi-definite for CG.
    A = -fluid_laplacian(grid, mask, outlet_dirichlet=False)
    b = np.zeros(A.shape[0])
    inlet = idx[0, idx[0] >= 0]
    outlet = idx[-1, idx[-1] >= 0]
    b[inlet] -= fs.u_inf / grid.dx
    b[outlet] += fs.u_inf / grid.dx
    # Pure Neumann problem: keep the right-hand side in the range of A.
    b -= b.mean()

    x, history, ok = conjugate_gradient(A, b, tol, max_iters)
    if not ok:
        raise PotentialFlowError(
            f"potential solve did not reach tol={tol:g} in {max_iters} iterations "
            f"(residual {history[-1]:.3e})",
            history,
        )
    x -= x.mean()

    fluid = ~mask.solid
    phi = np.zeros((nx, ny))
    phi[fluid] = x

    u = np.zeros((nx + 1, ny))
    v = np.zeros((nx, ny + 1))
    both_x = fluid[:-1] & fluid[1:]
    u[1:-1][both_x] = ((phi[1:] - phi[:-1]) / grid.dx)[both_x]
    u[0] = np.where(fluid[0], fs.u_inf, 0.0)
    u[-1] = np.where(fluid[-1], fs.u_inf, 0.0)
    both_y = fluid[:, :-1] & fluid[:, 1:]
    v[:, 1:-1][both_y] = ((phi[:, 1:] - phi[:, :-1]) / grid.dy)[both_y]

    p = bernoulli_pressure(u, v, fs, mask)
    return PotentialSolution(phi, u, v, p, history[-1], len(history) - 1, history)


def bernoulli_pressure(u, v, fs: FreestreamConditions, mask: ObstacleMask) -> np.ndarray:
    """Static pressure from Bernoulli with p = 0 in the undisturbed stream."""
    uc = 0.5 * (u[:-1] + u[1:])
    vc = 0.5 * (v[:, :-1] + v[:, 1:])
    p = 0.5 * fs.rho * (fs.u_inf**2 - uc**2 - vc**2)
    p[mask.solid] = 0.0
    return p


def clamp_speed(u, v, limit, max_passes=20):
    """Scale face velocities so the cell-centre speed never exceeds ``limit``.

    Each face takes the smallest scale factor of its two neighbouring cells;
    repeated until no cell is above the limit.
    """
    u = u.copy()
    v = v.copy()
    for _ in range(max_passes):
        uc = 0.5 * (u[:-1] + u[1:])
        vc = 0.5 * (v[:, :-1] + v[:, 1:])
        speed = np.hypot(uc, vc)
        if speed.max(initial=0.0) <= limit:
            break
        s = np.minimum(1.0, limit / np.maximum(speed, 1e-300))
        su = np.ones_like(u)
        su[:-1] = s
        su[1:] = np.minimum(su[1:], s)
        sv = np.ones_like(v)
        sv[:, :-1] = s
        sv[:, 1:] = np.minimum(sv[:, 1:], s)
        u *= su
        v *= sv
    return u, v


def potential_k_field(grid: Grid, fs: FreestreamConditions) -> np.ndarray:
    return np.full(grid.shape, float(fs.k_inf))
