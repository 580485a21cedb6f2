"""Discrete divergence, gradient and Laplacian operators on the fluid cells."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .grid import Grid, ObstacleMask


def fluid_index(mask: ObstacleMask) -> np.ndarray:
    """Map (i, j) -> unknown number for fluid cells, -1 for solid cells."""
    idx = np.full(mask.solid.shape, -1, dtype=np.int64)
    fluid = ~mask.solid
    idx[fluid] = np.arange(int(fluid.sum()))
    return idx


def fluid_laplacian(grid: Grid, mask: ObstacleMask, outlet_dirichlet: bool) -> sp.csr_matrix:
    """Five-point Laplacian over fluid cells, built as div(grad).

    Faces against walls, the inlet and solid cells carry no gradient
    (homogeneous Neumann). With ``outlet_dirichlet`` the outlet face holds
    the value zero, half a cell from the last cell centre.
    """
    idx = fluid_index(mask)
    n = int((idx >= 0).sum())
    rows, cols, vals = [], [], []
    diag = np.zeros(n)

    for axis, h in ((0, grid.dx), (1, grid.dy)):
        a = idx[:-1, :] if axis == 0 else idx[:, :-1]
        b = idx[1:, :] if axis == 0 else idx[:, 1:]
        pair = (a >= 0) & (b >= 0)
        a, b = a[pair], b[pair]
        c = 1.0 / h**2
        rows += [a, b]
        cols += [b, a]
        vals += [np.full(a.size, c), np.full(a.size, c)]
        np.add.at(diag, a, -c)
        np.add.at(diag, b, -c)

    if outlet_dirichlet:
        last = idx[-1, :]
        last = last[last >= 0]
        np.add.at(diag, last, -2.0 / grid.dx**2)

    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def divergence(u: np.ndarray, v: np.ndarray, grid: Grid) -> np.ndarray:
    """Cell-centred discrete divergence, shape (nx, ny)."""
    return (u[1:, :] - u[:-1, :]) / grid.dx + (v[:, 1:] - v[:, :-1]) / grid.dy


def max_fluid_divergence(u: np.ndarray, v: np.ndarray, grid: Grid, mask: ObstacleMask) -> float:
    div = divergence(u, v, grid)
    return float(np.abs(div[~mask.solid]).max(initial=0.0))
