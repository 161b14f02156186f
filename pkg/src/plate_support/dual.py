"""Dual certification of plate compliance via cracked linear elasticity.

The chain: solve -lap(phi) = f with zero boundary values, set G = phi * Id,
then minimize sum |e(v) - G|^2 over displacement fields v living on the
domain cut along K. Cells on opposite sides of a support edge reference
distinct copies of the shared nodes, so v may jump across K (it only needs
to exist off the support). The minimum value equals the primal compliance
up to a refinement-vanishing gap, which is the computable certificate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .biharmonic import hessian_field
from .errors import DegenerateComponentError, NoConvergenceError
from .fdiff import dirichlet_laplacian
from .grid import Grid2D, ScalarField2D, SupportGraph, TensorField2D, clamp_set

__all__ = [
    "solve_poisson",
    "build_G",
    "CrackMesh",
    "DualSolution",
    "DualReport",
    "solve_dual",
    "duality_gap",
    "saddle_check",
    "SaddleReport",
]


def solve_poisson(grid: Grid2D, f: ScalarField2D, tol: float = 1e-10, max_iter: int = 20000) -> ScalarField2D:
    """5-point -lap(phi) = f with phi = 0 on the rectangle rim."""
    interior = np.flatnonzero(grid.interior_mask())
    A = (-dirichlet_laplacian(grid, interior)).tocsr()  # SPD
    rhs = f.values[interior]
    if np.linalg.norm(rhs) == 0.0:
        return ScalarField2D.zeros(grid)
    dinv = 1.0 / A.diagonal()
    M = spla.LinearOperator(A.shape, matvec=lambda z: dinv * z)
    phi, info = spla.cg(A, rhs, rtol=tol, atol=0.0, maxiter=max_iter, M=M)
    resid = np.linalg.norm(A @ phi - rhs) / np.linalg.norm(rhs)
    if info != 0 or resid > tol * 1.01:
        raise NoConvergenceError(f"Poisson CG stalled (relative residual {resid:.3e})", residual=resid)
    vals = np.zeros(grid.n_nodes)
    vals[interior] = phi
    return ScalarField2D(grid, vals)


def build_G(phi: ScalarField2D) -> TensorField2D:
    """G = phi * Id, the divergence-compatible target strain."""
    vals = np.zeros((phi.grid.n_nodes, 3))
    vals[:, 0] = phi.values
    vals[:, 2] = phi.values
    return TensorField2D(phi.grid, vals)


class _UnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)

    def find(self, a):
        p = self.parent
        root = a
        while p[root] != root:
            root = p[root]
        while p[a] != root:
            p[a], a = root, p[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


@dataclass(frozen=True)
class CrackMesh:
    """Cell mesh of the domain cut along K, with duplicated corner DOFs.

    ``slot_class[cell, corner]`` maps each of the four corner slots of each
    cell to its DOF class; around a node, slots merge exactly when the two
    cells are adjacent in the cyclic order and the lattice edge between them
    is not part of K. ``component_of_cell`` labels connected components of
    the cell adjacency graph cut along K.
    """

    grid: Grid2D
    support: SupportGraph
    slot_class: np.ndarray = field(repr=False)  # (ncells, 4) int
    class_node: np.ndarray = field(repr=False)  # node index per class
    component_of_cell: np.ndarray = field(repr=False)
    n_components: int = 0

    @property
    def ncx(self):
        return self.grid.nx - 1

    @property
    def ncy(self):
        return self.grid.ny - 1

    @property
    def n_cells(self):
        return self.ncx * self.ncy

    @property
    def n_classes(self):
        return len(self.class_node)

    def cell_centers(self) -> np.ndarray:
        g = self.grid
        ci = np.arange(self.ncx)
        cj = np.arange(self.ncy)
        x = g.origin[0] + (ci + 0.5) * g.delta
        y = g.origin[1] + (cj + 0.5) * g.delta
        xx, yy = np.meshgrid(x, y)
        return np.column_stack([xx.ravel(), yy.ravel()])

    @classmethod
    def build(cls, grid: Grid2D, K: SupportGraph) -> "CrackMesh":
        if K.grid != grid:
            raise ValueError("support lives on a different grid")
        nx, ny = grid.nx, grid.ny
        ncx, ncy = nx - 1, ny - 1
        ncells = ncx * ncy
        if ncells < 1:
            raise DegenerateComponentError("mesh has no cell")

        def cell_id(ci, cj):
            return cj * ncx + ci

        # corner order: 0=(ci,cj) 1=(ci+1,cj) 2=(ci,cj+1) 3=(ci+1,cj+1)
        uf = _UnionFind(4 * ncells)
        in_K = K.edges
        for j in range(ny):
            for i in range(nx):
                # quadrant cells around node (i, j) and the node's corner slot in each
                ne = (cell_id(i, j), 0) if i < ncx and j < ncy else None
                nw = (cell_id(i - 1, j), 1) if i > 0 and j < ncy else None
                sw = (cell_id(i - 1, j - 1), 3) if i > 0 and j > 0 else None
                se = (cell_id(i, j - 1), 2) if i < ncx and j > 0 else None
                n_idx = j * nx + i
                north = tuple(sorted((n_idx, n_idx + nx))) if j < ny - 1 else None
                west = tuple(sorted((n_idx - 1, n_idx))) if i > 0 else None
                south = tuple(sorted((n_idx - nx, n_idx))) if j > 0 else None
                east = tuple(sorted((n_idx, n_idx + 1))) if i < nx - 1 else None
                for a, b, edge in ((ne, nw, north), (nw, sw, west), (sw, se, south), (se, ne, east)):
                    if a is None or b is None or edge in in_K:
                        continue
                    uf.union(a[0] * 4 + a[1], b[0] * 4 + b[1])

        roots = np.array([uf.find(s) for s in range(4 * ncells)])
        uniq, slot_class = np.unique(roots, return_inverse=True)
        slot_class = slot_class.reshape(ncells, 4)

        # node index of each class (all slots of a class sit at one node)
        class_node = np.zeros(len(uniq), dtype=int)
        for c in range(ncells):
            ci, cj = c % ncx, c // ncx
            corners = (
                cj * nx + ci,
                cj * nx + ci + 1,
                (cj + 1) * nx + ci,
                (cj + 1) * nx + ci + 1,
            )
            for s in range(4):
                class_node[slot_class[c, s]] = corners[s]

        # component labels: cells adjacent unless the shared edge is in K
        cuf = _UnionFind(ncells)
        for cj in range(ncy):
            for ci in range(ncx):
                c = cell_id(ci, cj)
                if ci + 1 < ncx:
                    shared = tuple(sorted(((cj) * nx + ci + 1, (cj + 1) * nx + ci + 1)))
                    if shared not in in_K:
                        cuf.union(c, cell_id(ci + 1, cj))
                if cj + 1 < ncy:
                    shared = tuple(sorted(((cj + 1) * nx + ci, (cj + 1) * nx + ci + 1)))
                    if shared not in in_K:
                        cuf.union(c, cell_id(ci, cj + 1))
        croots = np.array([cuf.find(c) for c in range(ncells)])
        _, comp = np.unique(croots, return_inverse=True)
        return cls(
            grid=grid,
            support=K,
            slot_class=slot_class,
            class_node=class_node,
            component_of_cell=comp,
            n_components=int(comp.max()) + 1,
        )

    def strain_operator(self) -> tuple[sp.csr_matrix, float]:
        """Rows (e11, sqrt2*e12, e22) per cell, scaled by delta (sqrt of area)."""
        d = self.grid.delta
        ncells = self.n_cells
        nclass = self.n_classes
        rows, cols, vals = [], [], []
        # cell-centered gradient coefficients per corner, d/dx then d/dy
        gx = np.array([-1.0, 1.0, -1.0, 1.0]) / (2 * d)
        gy = np.array([-1.0, -1.0, 1.0, 1.0]) / (2 * d)
        s2 = np.sqrt(0.5)  # sqrt(2)/2 for the shear row
        for c in range(ncells):
            for s in range(4):
                k = self.slot_class[c, s]
                # e11 = dvx/dx
                rows.append(3 * c)
                cols.append(2 * k)
                vals.append(gx[s] * d)
                # sqrt(2) e12 = (dvx/dy + dvy/dx) / sqrt(2)
                rows.append(3 * c + 1)
                cols.append(2 * k)
                vals.append(gy[s] * s2 * d)
                rows.append(3 * c + 1)
                cols.append(2 * k + 1)
                vals.append(gx[s] * s2 * d)
                # e22 = dvy/dy
                rows.append(3 * c + 2)
                cols.append(2 * k + 1)
                vals.append(gy[s] * d)
        B = sp.csr_matrix((vals, (rows, cols)), shape=(3 * ncells, 2 * nclass))
        return B, d


@dataclass(frozen=True)
class DualReport:
    dual_value: float
    component_values: tuple
    gauge_info: tuple  # per component: (translation, rotation) removed
    iterations: int
    gap_abs: float | None = None
    gap_rel: float | None = None


@dataclass(frozen=True)
class DualSolution:
    mesh: CrackMesh
    class_values: np.ndarray = field(repr=False)  # (n_classes, 2), gauge-fixed
    cell_strain: np.ndarray = field(repr=False)  # (n_cells, 3) as (e11, e12, e22)
    cell_target: np.ndarray = field(repr=False)  # G at cell centers, same layout
    cell_resid_density: np.ndarray = field(repr=False)  # |e(v)-G|^2 per cell

    def cell_values(self) -> np.ndarray:
        """Average displacement per cell (for dumps and plots)."""
        v = self.class_values[self.mesh.slot_class]  # (ncells, 4, 2)
        return v.mean(axis=1)

    def energy_in_ball(self, center, r) -> float:
        d2 = ((self.mesh.cell_centers() - np.asarray(center)) ** 2).sum(1)
        inside = d2 < r**2
        return float(self.cell_resid_density[inside].sum() * self.mesh.grid.delta**2)

    def total_energy(self) -> float:
        return float(self.cell_resid_density.sum() * self.mesh.grid.delta**2)


def _cell_average_tensor(mesh: CrackMesh, G: TensorField2D) -> np.ndarray:
    g = mesh.grid
    vals = G.values.reshape(g.ny, g.nx, 3)
    return 0.25 * (
        vals[:-1, :-1] + vals[:-1, 1:] + vals[1:, :-1] + vals[1:, 1:]
    ).reshape(-1, 3)


def solve_dual(
    mesh: CrackMesh,
    G: TensorField2D,
    tol: float = 1e-12,
    max_iter: int | None = None,
) -> tuple[DualSolution, DualReport]:
    """Least-squares minimization of sum |e(v) - G|^2 dx on the cracked mesh.

    The quadratic is solved globally with LSMR (components decouple through
    the block structure). Rigid motions per component are the kernel the
    paper predicts; they are gauge-fixed afterwards by removing the best-fit
    translation and infinitesimal rotation, which leaves the reported energy
    unchanged. The one-point quadrature also admits checkerboard modes with
    zero cell strain; LSMR's minimum-norm solution keeps them silent.
    """
    B, d = mesh.strain_operator()
    Gc = _cell_average_tensor(mesh, G)
    target = np.empty(3 * mesh.n_cells)
    target[0::3] = Gc[:, 0] * d
    target[1::3] = Gc[:, 1] * np.sqrt(2.0) * d
    target[2::3] = Gc[:, 2] * d
    if max_iter is None:
        max_iter = 40 * B.shape[1]
    res = spla.lsmr(B, target, atol=tol, btol=tol, maxiter=max_iter)
    x, istop, itn = res[0], res[1], res[2]
    if istop not in (0, 1, 2, 4, 5):  # 3/6 = cond limit, 7 = iteration limit
        raise NoConvergenceError(f"dual LSMR stopped with istop={istop} after {itn} iterations")

    r = B @ x - target
    resid_rows = r.reshape(-1, 3)
    dens = (resid_rows**2).sum(1) / d**2  # |e(v)-G|^2 per cell
    dual_value = float((resid_rows**2).sum())

    comp_vals = []
    for comp in range(mesh.n_components):
        cells = mesh.component_of_cell == comp
        comp_vals.append(float((resid_rows[cells] ** 2).sum()))

    # gauge fixing per component
    v = x.reshape(-1, 2).copy()
    coords = mesh.grid.coords[mesh.class_node]
    gauge = []
    for comp in range(mesh.n_components):
        cells = np.flatnonzero(mesh.component_of_cell == comp)
        classes = np.unique(mesh.slot_class[cells])
        p = coords[classes]
        q = p - p.mean(axis=0)
        vk = v[classes]
        denom = (q**2).sum()
        omega = 0.0
        if denom > 0:
            omega = float((-q[:, 1] * vk[:, 0] + q[:, 0] * vk[:, 1]).sum() / denom)
        rot = np.column_stack([-q[:, 1], q[:, 0]]) * omega
        b = vk.mean(axis=0)
        v[classes] = vk - b - rot
        gauge.append(((float(b[0]), float(b[1])), omega))

    strain = np.empty((mesh.n_cells, 3))
    bx = (B @ x).reshape(-1, 3)
    strain[:, 0] = bx[:, 0] / d
    strain[:, 1] = bx[:, 1] / (np.sqrt(2.0) * d)
    strain[:, 2] = bx[:, 2] / d
    sol = DualSolution(
        mesh=mesh,
        class_values=v,
        cell_strain=strain,
        cell_target=Gc,
        cell_resid_density=dens,
    )
    rep = DualReport(
        dual_value=dual_value,
        component_values=tuple(comp_vals),
        gauge_info=tuple(gauge),
        iterations=int(itn),
    )
    return sol, rep


def duality_gap(primal_compliance: float, report: DualReport) -> tuple[float, float, DualReport]:
    """Absolute and relative primal-dual gap, plus the report with them filled."""
    gap_abs = abs(report.dual_value - primal_compliance)
    gap_rel = gap_abs / max(abs(primal_compliance), 1e-300)
    filled = DualReport(
        dual_value=report.dual_value,
        component_values=report.component_values,
        gauge_info=report.gauge_info,
        iterations=report.iterations,
        gap_abs=gap_abs,
        gap_rel=gap_rel,
    )
    return gap_abs, gap_rel, filled


# -- saddle point check --------------------------------------------------------


@dataclass(frozen=True)
class SaddleReport:
    f_star: float
    m_energy: float  # sum |M*|^2 dx
    max_increase: float  # worst F(u_K, M*+N) - F(u_K, M*), should be <= 0
    max_drop_mismatch: float  # worst |drop - sum|N|^2 dx|, should be ~ 0
    u_spread: float  # worst relative deviation of F(u, M*) from -sum|M*|^2 dx
    trials: int

    def max_over_M_ok(self, tol: float) -> bool:
        return self.max_increase <= tol * abs(self.f_star)

    def const_over_u_ok(self, tol: float) -> bool:
        return self.u_spread <= tol


def _f_functional(grid, hess_u, M, u_vals, f_vals):
    d2 = grid.delta**2
    cross = (
        hess_u[:, 0] * M[:, 0] + 2.0 * hess_u[:, 1] * M[:, 1] + hess_u[:, 2] * M[:, 2]
    ).sum() * d2
    msq = (M[:, 0] ** 2 + 2.0 * M[:, 1] ** 2 + M[:, 2] ** 2).sum() * d2
    load = (u_vals * f_vals).sum() * d2
    return 2.0 * cross - msq - 2.0 * load


def saddle_check(
    grid: Grid2D,
    K: SupportGraph,
    u_K: ScalarField2D,
    f: ScalarField2D,
    trials: int = 100,
    seed: int = 0,
    u_trials: int | None = None,
) -> SaddleReport:
    """Empirically verify that (u_K, hess u_K) is a saddle of F(u, M).

    F(u, M) = 2 sum hess(u):M dx - sum |M|^2 dx - 2 sum u f dx. Over M the
    maximality at M* = hess(u_K) is exact (completing the square), so random
    symmetric perturbations must never increase F beyond roundoff and must
    drop by exactly their squared norm. Over admissible u (zero on the
    clamp set and its ring) F(., M*) is constant up to quadrature error.
    """
    rng = np.random.default_rng(seed)
    if u_trials is None:
        u_trials = max(1, trials // 5)
    hu = hessian_field(u_K).values
    mstar = hu.copy()
    d2 = grid.delta**2
    msq = float((mstar[:, 0] ** 2 + 2 * mstar[:, 1] ** 2 + mstar[:, 2] ** 2).sum() * d2)
    f_star = _f_functional(grid, hu, mstar, u_K.values, f.values)

    scale = np.sqrt(max(msq, 1e-30) / grid.n_nodes / d2)
    max_inc = -np.inf
    max_mis = 0.0
    for _ in range(trials):
        N = rng.standard_normal((grid.n_nodes, 3)) * (0.1 * scale)
        nsq = float((N[:, 0] ** 2 + 2 * N[:, 1] ** 2 + N[:, 2] ** 2).sum() * d2)
        f_pert = _f_functional(grid, hu, mstar + N, u_K.values, f.values)
        max_inc = max(max_inc, f_pert - f_star)
        max_mis = max(max_mis, abs((f_star - f_pert) - nsq))

    # admissible test fields: smooth bumps, hard zero on the clamp set + ring
    frozen = set(clamp_set(K))
    for v in list(frozen):
        frozen.update(grid.neighbors(v))
    frozen = np.array(sorted(frozen), dtype=int)
    coords = grid.coords
    ex, ey = grid.extent
    amp_ref = float(np.abs(u_K.values).max()) or 1.0
    spread = 0.0
    for _ in range(u_trials):
        vals = np.zeros(grid.n_nodes)
        for _b in range(4):
            cx = grid.origin[0] + rng.uniform(0.2, 0.8) * ex
            cy = grid.origin[1] + rng.uniform(0.2, 0.8) * ey
            sig = rng.uniform(0.08, 0.2) * min(ex, ey)
            a = rng.uniform(-1.0, 1.0)
            r2 = (coords[:, 0] - cx) ** 2 + (coords[:, 1] - cy) ** 2
            vals += a * np.exp(-r2 / (2 * sig**2))
        vals[frozen] = 0.0
        peak = np.abs(vals).max()
        if peak == 0.0:
            continue
        vals *= amp_ref / peak
        hv = hessian_field(ScalarField2D(grid, vals)).values
        f_u = _f_functional(grid, hv, mstar, vals, f.values)
        spread = max(spread, abs(f_u - (-msq)) / max(msq, 1e-300))

    return SaddleReport(
        f_star=f_star,
        m_energy=msq,
        max_increase=float(max_inc),
        max_drop_mismatch=float(max_mis),
        u_spread=float(spread),
        trials=trials,
    )
