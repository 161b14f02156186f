"""Rectangular grids, connected lattice support sets, and nodal fields.

The domain is a rectangle discretized by an nx-by-ny node lattice with
uniform spacing delta. A support set K is a subgraph of the lattice made of
4-adjacent edges; its length is exactly (edge count) * delta. All objects
here are immutable after construction, so they can be shared freely across
workers; "mutation" always builds a modified copy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .errors import PlateSupportError

__all__ = [
    "Grid2D",
    "SupportGraph",
    "ScalarField2D",
    "VectorField2D",
    "TensorField2D",
    "length",
    "is_connected",
    "hausdorff_distance",
    "dilate",
    "clamp_set",
    "distance_to_support",
    "save_support",
    "load_support",
    "refine_support",
]


@dataclass(frozen=True)
class Grid2D:
    """Uniform node lattice over a rectangle.

    Nodes are indexed row-major: ``index = j * nx + i`` with ``i`` along x
    and ``j`` along y. The physical extent is (nx-1)*delta by (ny-1)*delta.
    """

    nx: int
    ny: int
    delta: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError("grid needs nx >= 4 and ny >= 4 (2-ring interior)")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def extent(self) -> tuple[float, float]:
        return ((self.nx - 1) * self.delta, (self.ny - 1) * self.delta)

    def index(self, i, j):
        return j * self.nx + i

    def ij(self, idx):
        return idx % self.nx, idx // self.nx

    @cached_property
    def coords(self) -> np.ndarray:
        """(n_nodes, 2) array of node coordinates, row-major order."""
        i = np.arange(self.nx)
        j = np.arange(self.ny)
        x = self.origin[0] + i * self.delta
        y = self.origin[1] + j * self.delta
        xx, yy = np.meshgrid(x, y)  # shape (ny, nx)
        return np.column_stack([xx.ravel(), yy.ravel()])

    @cached_property
    def boundary_nodes(self) -> frozenset:
        ii, jj = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        on_rim = (ii == 0) | (ii == self.nx - 1) | (jj == 0) | (jj == self.ny - 1)
        return frozenset(np.flatnonzero(on_rim.ravel()).tolist())

    def neighbors(self, idx):
        """4-neighbors of a node, clipped at the rim."""
        i, j = self.ij(idx)
        out = []
        if i > 0:
            out.append(idx - 1)
        if i < self.nx - 1:
            out.append(idx + 1)
        if j > 0:
            out.append(idx - self.nx)
        if j < self.ny - 1:
            out.append(idx + self.nx)
        return out

    def interior_mask(self) -> np.ndarray:
        """Boolean mask of nodes with all four neighbors present."""
        ii, jj = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        inside = (ii > 0) & (ii < self.nx - 1) & (jj > 0) & (jj < self.ny - 1)
        return inside.ravel()

    def boundary_edges(self):
        """Perimeter edges as canonical (lo, hi) index pairs."""
        edges = []
        for i in range(self.nx - 1):
            edges.append((self.index(i, 0), self.index(i + 1, 0)))
            edges.append((self.index(i, self.ny - 1), self.index(i + 1, self.ny - 1)))
        for j in range(self.ny - 1):
            edges.append((self.index(0, j), self.index(0, j + 1)))
            edges.append((self.index(self.nx - 1, j), self.index(self.nx - 1, j + 1)))
        return frozenset(tuple(sorted(e)) for e in edges)


def _canon(edge):
    a, b = edge
    return (a, b) if a <= b else (b, a)


class SupportGraph:
    """A support set K: lattice nodes plus 4-adjacent edges between them.

    The constructor checks structural validity (edge endpoints declared,
    endpoints 4-adjacent, boundary containment when ``include_boundary``).
    Connectivity is NOT enforced here; use :func:`is_connected`. This keeps
    the type usable for candidate sets during search and for negative tests,
    while optimized supports are validated where the contract requires it.
    """

    __slots__ = ("grid", "nodes", "edges", "include_boundary", "_adj")

    def __init__(self, grid: Grid2D, nodes, edges, include_boundary: bool = False):
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "nodes", frozenset(int(n) for n in nodes))
        object.__setattr__(self, "edges", frozenset(_canon((int(a), int(b))) for a, b in edges))
        object.__setattr__(self, "include_boundary", bool(include_boundary))
        object.__setattr__(self, "_adj", None)
        self._validate()

    def __setattr__(self, *a):  # immutable by contract
        raise AttributeError("SupportGraph is immutable")

    def _validate(self):
        n = self.grid.n_nodes
        for v in self.nodes:
            if not 0 <= v < n:
                raise ValueError(f"node {v} outside grid")
        for a, b in self.edges:
            if a not in self.nodes or b not in self.nodes:
                raise ValueError(f"edge ({a},{b}) has undeclared endpoint")
            ia, ja = self.grid.ij(a)
            ib, jb = self.grid.ij(b)
            if abs(ia - ib) + abs(ja - jb) != 1:
                raise ValueError(f"edge ({a},{b}) is not 4-adjacent")
        if self.include_boundary:
            missing = self.grid.boundary_edges() - self.edges
            if missing:
                raise ValueError("include_boundary set but perimeter edges missing")

    # -- construction helpers -------------------------------------------------

    @classmethod
    def boundary(cls, grid: Grid2D) -> "SupportGraph":
        """K = the full perimeter of the grid rectangle."""
        edges = grid.boundary_edges()
        nodes = set()
        for a, b in edges:
            nodes.add(a)
            nodes.add(b)
        return cls(grid, nodes, edges, include_boundary=True)

    @classmethod
    def from_edges(cls, grid: Grid2D, edges, include_boundary: bool = False) -> "SupportGraph":
        nodes = set()
        for a, b in edges:
            nodes.add(int(a))
            nodes.add(int(b))
        return cls(grid, nodes, edges, include_boundary=include_boundary)

    @classmethod
    def single_node(cls, grid: Grid2D, i: int, j: int) -> "SupportGraph":
        return cls(grid, [grid.index(i, j)], [])

    @classmethod
    def segment(cls, grid: Grid2D, i0, j0, i1, j1) -> "SupportGraph":
        """Axis-aligned lattice path from (i0,j0) to (i1,j1)."""
        if i0 != i1 and j0 != j1:
            raise ValueError("segment must be axis-aligned")
        edges = []
        if i0 == i1:
            for j in range(min(j0, j1), max(j0, j1)):
                edges.append((grid.index(i0, j), grid.index(i0, j + 1)))
        else:
            for i in range(min(i0, i1), max(i0, i1)):
                edges.append((grid.index(i, j0), grid.index(i + 1, j0)))
        if not edges:
            return cls.single_node(grid, i0, j0)
        return cls.from_edges(grid, edges)

    def union(self, other: "SupportGraph") -> "SupportGraph":
        if other.grid != self.grid:
            raise ValueError("supports live on different grids")
        return SupportGraph(
            self.grid,
            self.nodes | other.nodes,
            self.edges | other.edges,
            include_boundary=self.include_boundary or other.include_boundary,
        )

    def with_edge(self, edge) -> "SupportGraph":
        e = _canon(edge)
        return SupportGraph(
            self.grid,
            self.nodes | {e[0], e[1]},
            self.edges | {e},
            include_boundary=self.include_boundary,
        )

    def without_edge(self, edge) -> "SupportGraph":
        """Remove one edge; endpoints left with no incident edge are dropped."""
        e = _canon(edge)
        if e not in self.edges:
            raise KeyError(f"edge {e} not in support")
        edges = self.edges - {e}
        keep = set()
        for a, b in edges:
            keep.add(a)
            keep.add(b)
        nodes = {v for v in self.nodes if v in keep or v not in e}
        if not nodes:  # removing the only edge of a 2-node graph: keep one node
            nodes = {e[0]}
        return SupportGraph(self.grid, nodes, edges, include_boundary=self.include_boundary)

    # -- queries ---------------------------------------------------------------

    @property
    def adjacency(self):
        adj = object.__getattribute__(self, "_adj")
        if adj is None:
            adj = {v: [] for v in self.nodes}
            for a, b in self.edges:
                adj[a].append(b)
                adj[b].append(a)
            object.__setattr__(self, "_adj", adj)
        return adj

    def degree(self, v) -> int:
        return len(self.adjacency.get(v, ()))

    def node_coords(self) -> np.ndarray:
        idx = np.array(sorted(self.nodes), dtype=int)
        return self.grid.coords[idx]

    def diameter(self) -> float:
        pts = self.node_coords()
        if len(pts) == 0:
            return 0.0
        # extreme points of a segment union are lattice nodes
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        return float(np.sqrt(d2.max()))

    def __eq__(self, other):
        return (
            isinstance(other, SupportGraph)
            and self.grid == other.grid
            and self.nodes == other.nodes
            and self.edges == other.edges
        )

    def __hash__(self):
        return hash((self.grid, self.nodes, self.edges))

    def __repr__(self):
        return f"SupportGraph({len(self.nodes)} nodes, {len(self.edges)} edges, include_boundary={self.include_boundary})"


# -- operations on support sets ---------------------------------------------


def length(K: SupportGraph) -> float:
    """H^1 measure of K on the lattice: edge count times spacing, exactly."""
    return len(K.edges) * K.grid.delta


def is_connected(K: SupportGraph) -> bool:
    """True iff K is a single connected piece.

    A single node with no edges counts as connected; any other node without
    an incident edge is a violation.
    """
    if not K.nodes:
        return False
    if not K.edges:
        return len(K.nodes) == 1
    adj = K.adjacency
    start = next(iter(K.nodes))
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen == K.nodes


def hausdorff_distance(K1: SupportGraph, K2: SupportGraph) -> float:
    """Symmetric Hausdorff distance between the node sets of K1 and K2."""
    if not K1.nodes or not K2.nodes:
        raise PlateSupportError("hausdorff_distance needs nonempty supports")
    p1 = K1.node_coords()
    p2 = K2.node_coords()
    d12 = cKDTree(p2).query(p1)[0].max()
    d21 = cKDTree(p1).query(p2)[0].max()
    return float(max(d12, d21))


def distance_to_support(K: SupportGraph, points: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to K (nodes and edge segments)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if not K.nodes:
        raise PlateSupportError("distance to empty support is undefined")
    coords = K.grid.coords
    best = cKDTree(K.node_coords()).query(pts)[0]
    if K.edges:
        # axis-aligned segments: project onto each edge; chunked over points
        # to keep the (points x edges) temporaries bounded
        e = np.array(sorted(K.edges), dtype=int)
        a = coords[e[:, 0]]  # (m, 2)
        b = coords[e[:, 1]]
        ab = b - a
        ab2 = (ab**2).sum(1)
        chunk = max(1, int(4e6 / max(len(e), 1)))
        for lo in range(0, len(pts), chunk):
            p = pts[lo : lo + chunk]
            ap = p[:, None, :] - a[None, :, :]
            t = np.clip((ap * ab[None, :, :]).sum(-1) / ab2[None, :], 0.0, 1.0)
            proj = a[None, :, :] + t[:, :, None] * ab[None, :, :]
            d = np.sqrt(((p[:, None, :] - proj) ** 2).sum(-1)).min(1)
            best[lo : lo + chunk] = np.minimum(best[lo : lo + chunk], d)
    return best


def dilate(K: SupportGraph, h: float) -> frozenset:
    """Grid nodes strictly within distance h of K (nodes and edges)."""
    if not h > 0:
        raise ValueError("dilation radius must be positive")
    d = distance_to_support(K, K.grid.coords)
    return frozenset(np.flatnonzero(d < h).tolist())


def clamp_set(K: SupportGraph) -> frozenset:
    """K's nodes plus their one-ring of 4-neighbors.

    On this set the discrete solution is pinned to zero; adjacency then also
    kills the first differences across K, the lattice stand-in for clamping
    the full 1-jet on the support.
    """
    out = set(K.nodes)
    for v in K.nodes:
        out.update(K.grid.neighbors(v))
    return frozenset(out)


def refine_support(K: SupportGraph, factor: int = 2) -> tuple[Grid2D, SupportGraph]:
    """Copy K onto a grid refined by an integer factor (same geometry).

    Node (i, j) maps to (factor*i, factor*j); every edge becomes ``factor``
    collinear short edges, so the physical set and its length are unchanged.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    g = K.grid
    fine = Grid2D(
        nx=(g.nx - 1) * factor + 1,
        ny=(g.ny - 1) * factor + 1,
        delta=g.delta / factor,
        origin=g.origin,
    )
    edges = []
    for a, b in K.edges:
        ia, ja = g.ij(a)
        ib, jb = g.ij(b)
        fa = (ia * factor, ja * factor)
        fb = (ib * factor, jb * factor)
        di = np.sign(fb[0] - fa[0])
        dj = np.sign(fb[1] - fa[1])
        for s in range(factor):
            p = (fa[0] + s * di, fa[1] + s * dj)
            q = (fa[0] + (s + 1) * di, fa[1] + (s + 1) * dj)
            edges.append((fine.index(*p), fine.index(*q)))
    nodes = set()
    for a, b in edges:
        nodes.add(a)
        nodes.add(b)
    for v in K.nodes:  # isolated nodes survive refinement
        i, j = g.ij(v)
        nodes.add(fine.index(i * factor, j * factor))
    return fine, SupportGraph(fine, nodes, edges, include_boundary=K.include_boundary)


# -- text serialization -------------------------------------------------------


def save_support(K: SupportGraph, path) -> None:
    """Write K as text: header ``grid nx ny delta``, one edge per line.

    Edges are written in row-major node order. Nodes with no incident edge
    (degenerate single-node supports) get ``node i j`` lines so the file
    round-trips.
    """
    lines = [f"grid {K.grid.nx} {K.grid.ny} {K.grid.delta!r}"]
    if K.include_boundary:
        lines.append("boundary 1")
    for a, b in sorted(K.edges):
        ia, ja = K.grid.ij(a)
        ib, jb = K.grid.ij(b)
        lines.append(f"edge {ia} {ja} {ib} {jb}")
    covered = set()
    for a, b in K.edges:
        covered.add(a)
        covered.add(b)
    for v in sorted(K.nodes - covered):
        i, j = K.grid.ij(v)
        lines.append(f"node {i} {j}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_support(path, grid: Grid2D | None = None) -> SupportGraph:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("grid "):
        raise PlateSupportError(f"{path}: missing 'grid nx ny delta' header")
    _, nx, ny, delta = lines[0].split()
    g = Grid2D(int(nx), int(ny), float(delta)) if grid is None else grid
    if grid is not None and (grid.nx, grid.ny) != (int(nx), int(ny)):
        raise PlateSupportError(f"{path}: header grid does not match the provided grid")
    include_boundary = False
    nodes, edges = set(), []
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "boundary":
            include_boundary = parts[1] not in ("0", "false")
        elif parts[0] == "edge":
            i1, j1, i2, j2 = map(int, parts[1:5])
            a, b = g.index(i1, j1), g.index(i2, j2)
            edges.append((a, b))
            nodes.update((a, b))
        elif parts[0] == "node":
            nodes.add(g.index(int(parts[1]), int(parts[2])))
        else:
            raise PlateSupportError(f"{path}: unknown record {parts[0]!r}")
    return SupportGraph(g, nodes, edges, include_boundary=include_boundary)


# -- nodal fields -------------------------------------------------------------


@dataclass(frozen=True)
class ScalarField2D:
    grid: Grid2D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size != self.grid.n_nodes:
            raise ValueError("scalar field length must equal nx*ny")
        object.__setattr__(self, "values", v)
        self.values.setflags(write=False)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.n_nodes))

    @classmethod
    def from_function(cls, grid, fn):
        c = grid.coords
        return cls(grid, np.asarray(fn(c[:, 0], c[:, 1]), dtype=float))

    def as_matrix(self) -> np.ndarray:
        """(ny, nx) view, row j of the matrix = y-line j."""
        return self.values.reshape(self.grid.ny, self.grid.nx)


@dataclass(frozen=True)
class VectorField2D:
    grid: Grid2D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1, 2)
        if v.shape[0] != self.grid.n_nodes:
            raise ValueError("vector field must hold nx*ny 2-vectors")
        object.__setattr__(self, "values", v)
        self.values.setflags(write=False)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.n_nodes, 2)))


@dataclass(frozen=True)
class TensorField2D:
    """Symmetric 2x2 tensors per node, stored as (t11, t12, t22)."""

    grid: Grid2D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1, 3)
        if v.shape[0] != self.grid.n_nodes:
            raise ValueError("tensor field must hold nx*ny symmetric tensors")
        object.__setattr__(self, "values", v)
        self.values.setflags(write=False)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.n_nodes, 3)))

    def frobenius_sq(self) -> np.ndarray:
        """|T|^2 per node; the off-diagonal entry counts twice."""
        v = self.values
        return v[:, 0] ** 2 + 2.0 * v[:, 1] ** 2 + v[:, 2] ** 2

    def inf_norm(self) -> float:
        v = self.values
        return float(np.abs(v).max()) if v.size else 0.0
