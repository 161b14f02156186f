"""Sparse finite-difference operators on the node lattice.

All operators act on flat row-major nodal vectors (index = j*nx + i).
Second differences are centered in the interior and one-sided at the rim,
which keeps them exact on quadratics everywhere.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .grid import Grid2D

__all__ = [
    "d1_matrix",
    "d2_matrix",
    "grad_ops",
    "hessian_ops",
    "laplacian_mirror",
    "trapezoid_weights",
    "dirichlet_laplacian",
]


def _d1_1d(n: int, h: float) -> sp.csr_matrix:
    """First derivative on a 1D line: centered inside, 2-point at the ends."""
    rows, cols, vals = [], [], []
    for i in range(n):
        if i == 0:
            sten = [(0, -1.0), (1, 1.0)]
        elif i == n - 1:
            sten = [(n - 2, -1.0), (n - 1, 1.0)]
        else:
            sten = [(i - 1, -0.5), (i + 1, 0.5)]
        for c, v in sten:
            rows.append(i)
            cols.append(c)
            vals.append(v / h)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _d2_1d(n: int, h: float) -> sp.csr_matrix:
    """Second derivative on a 1D line: centered inside, 3-point one-sided at ends."""
    rows, cols, vals = [], [], []
    for i in range(n):
        if i == 0:
            sten = [(0, 1.0), (1, -2.0), (2, 1.0)]
        elif i == n - 1:
            sten = [(n - 3, 1.0), (n - 2, -2.0), (n - 1, 1.0)]
        else:
            sten = [(i - 1, 1.0), (i, -2.0), (i + 1, 1.0)]
        for c, v in sten:
            rows.append(i)
            cols.append(c)
            vals.append(v / h**2)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


@lru_cache(maxsize=64)
def d1_matrix(grid: Grid2D, axis: int) -> sp.csr_matrix:
    """d/dx (axis=0) or d/dy (axis=1) on the full lattice."""
    ix = sp.identity(grid.nx, format="csr")
    iy = sp.identity(grid.ny, format="csr")
    if axis == 0:
        return sp.kron(iy, _d1_1d(grid.nx, grid.delta), format="csr")
    return sp.kron(_d1_1d(grid.ny, grid.delta), ix, format="csr")


@lru_cache(maxsize=64)
def d2_matrix(grid: Grid2D, axis: int) -> sp.csr_matrix:
    ix = sp.identity(grid.nx, format="csr")
    iy = sp.identity(grid.ny, format="csr")
    if axis == 0:
        return sp.kron(iy, _d2_1d(grid.nx, grid.delta), format="csr")
    return sp.kron(_d2_1d(grid.ny, grid.delta), ix, format="csr")


def grad_ops(grid: Grid2D) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    return d1_matrix(grid, 0), d1_matrix(grid, 1)


def hessian_ops(grid: Grid2D) -> tuple[sp.csr_matrix, sp.csr_matrix, sp.csr_matrix]:
    """(Dxx, Dxy, Dyy). Dxy = Dx Dy = Dy Dx, symmetric by construction."""
    dx, dy = grad_ops(grid)
    return d2_matrix(grid, 0), (dx @ dy).tocsr(), d2_matrix(grid, 1)


def _d2_1d_mirror(n: int, h: float) -> sp.csr_matrix:
    """Second derivative with mirror ghosts at the ends (even reflection).

    At i=0 the ghost value u[-1] is replaced by u[1], so the end row reads
    (2 u[1] - 2 u[0]) / h^2. For a field clamped at the end node this is the
    consistent wall value of u'' that the clamped-plate energy needs.
    """
    rows, cols, vals = [], [], []
    for i in range(n):
        sten = {i: -2.0}
        sten[i - 1 if i > 0 else i + 1] = sten.get(i - 1 if i > 0 else i + 1, 0.0) + 1.0
        sten[i + 1 if i < n - 1 else i - 1] = sten.get(i + 1 if i < n - 1 else i - 1, 0.0) + 1.0
        for c, v in sten.items():
            rows.append(i)
            cols.append(c)
            vals.append(v / h**2)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


@lru_cache(maxsize=64)
def laplacian_mirror(grid: Grid2D) -> sp.csr_matrix:
    """5-point Laplacian rows at every node, mirror ghosts outside the rim."""
    ix = sp.identity(grid.nx, format="csr")
    iy = sp.identity(grid.ny, format="csr")
    return (
        sp.kron(iy, _d2_1d_mirror(grid.nx, grid.delta))
        + sp.kron(_d2_1d_mirror(grid.ny, grid.delta), ix)
    ).tocsr()


@lru_cache(maxsize=64)
def trapezoid_weights(grid: Grid2D) -> np.ndarray:
    """Nodal trapezoid quadrature weights (1 inside, 1/2 faces, 1/4 corners)."""
    wx = np.ones(grid.nx)
    wx[0] = wx[-1] = 0.5
    wy = np.ones(grid.ny)
    wy[0] = wy[-1] = 0.5
    w = np.outer(wy, wx).ravel()
    w.setflags(write=False)  # shared through the cache
    return w


def dirichlet_laplacian(grid: Grid2D, free: np.ndarray) -> sp.csr_matrix:
    """Symmetric 5-point Laplacian on a free-node set, zero outside.

    ``free`` is an index array. Off-diagonal couplings exist only between
    free neighbors; the diagonal keeps the full -4/h^2 weight, which is the
    Dirichlet condition on the complement.
    """
    nx, h = grid.nx, grid.delta
    pos = -np.ones(grid.n_nodes, dtype=int)
    pos[free] = np.arange(len(free))
    rows, cols, vals = [], [], []
    for r, c in enumerate(free):
        rows.append(r)
        cols.append(r)
        vals.append(-4.0 / h**2)
        for nb in (c - 1, c + 1, c - nx, c + nx):
            i, j = grid.ij(c)
            # guard lattice wrap-around
            if nb == c - 1 and i == 0:
                continue
            if nb == c + 1 and i == nx - 1:
                continue
            if nb < 0 or nb >= grid.n_nodes:
                continue
            p = pos[nb]
            if p >= 0:
                rows.append(r)
                cols.append(p)
                vals.append(1.0 / h**2)
    m = len(free)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))
