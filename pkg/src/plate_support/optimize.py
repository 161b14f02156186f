"""Simulated annealing over connected lattice support sets.

The objective compliance(K) + lam * length(K) is nonsmooth in K and carries
no usable descent structure, so the search walks the space of connected
edge graphs directly: add an incident edge, remove a removable one, or
rewire a leaf. Every iterate stays feasible (connected, boundary kept when
enforced) and a fixed seed reproduces the full trace move for move.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .biharmonic import assemble, solve
from .errors import NoLegalMoveError
from .grid import Grid2D, ScalarField2D, SupportGraph, is_connected, length

__all__ = [
    "OptimizerConfig",
    "RunRecord",
    "objective",
    "propose_move",
    "optimize",
    "pareto_sweep",
]


@dataclass(frozen=True)
class OptimizerConfig:
    lam: float = 1.0  # weight on length(K); the support problem uses 1
    moves_per_temp: int = 25
    temp_init: float | None = None  # default: 5% of the initial objective
    cooling_ratio: float = 0.95
    budget: int = 200  # maximum number of plate solves
    seed: int = 0
    enforce_boundary: bool = True
    warm_start: bool = True
    solver_tol: float = 1e-10
    preconditioner: str = "auto"

    def __post_init__(self):
        problems = []
        if self.lam < 0:
            problems.append("lam must be >= 0")
        if not 0 < self.cooling_ratio < 1:
            problems.append("cooling_ratio must lie in (0, 1)")
        if self.budget < 1:
            problems.append("budget must be >= 1")
        if self.moves_per_temp < 1:
            problems.append("moves_per_temp must be >= 1")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class RunRecord:
    config: dict
    trace: list = field(default_factory=list)  # accepted moves only
    proposed: int = 0
    accepted: int = 0
    solves: int = 0
    best_objective: float = math.inf
    best_compliance: float = math.inf
    best_length: float = 0.0
    best_edges: list = field(default_factory=list)
    status: str = "running"
    wall_clock: float = 0.0
    audit_summary: dict | None = None

    def as_dict(self):
        return {
            "config": self.config,
            "trace": self.trace,
            "proposed": self.proposed,
            "accepted": self.accepted,
            "solves": self.solves,
            "best_objective": self.best_objective,
            "best_compliance": self.best_compliance,
            "best_length": self.best_length,
            "best_edges": self.best_edges,
            "status": self.status,
            "wall_clock": self.wall_clock,
            "audit_summary": self.audit_summary,
        }


def objective(
    grid: Grid2D,
    K: SupportGraph,
    f: ScalarField2D,
    lam: float,
    x0=None,
    tol: float = 1e-10,
    preconditioner: str = "auto",
):
    """compliance(K) + lam * length(K); returns (value, compliance, field)."""
    system = assemble(grid, K, f)
    guess = None
    if x0 is not None:
        guess = x0.values[system.free]
    u, rep = solve(system, tol=tol, x0=guess, preconditioner=preconditioner)
    return rep.compliance + lam * length(K), rep.compliance, u


def _addable_edges(K: SupportGraph):
    g = K.grid
    out = set()
    for v in K.nodes:
        for w in g.neighbors(v):
            e = (v, w) if v <= w else (w, v)
            if e not in K.edges:
                out.add(e)
    return sorted(out)


def _mandatory_edges(K: SupportGraph, enforce_boundary: bool):
    return K.grid.boundary_edges() if enforce_boundary else frozenset()


def _removable_edges(K: SupportGraph, enforce_boundary: bool):
    mandatory = _mandatory_edges(K, enforce_boundary)
    out = []
    for e in sorted(K.edges):
        if e in mandatory:
            continue
        if is_connected(K.without_edge(e)):
            out.append(e)
    return out


def _leaf_edges(K: SupportGraph, enforce_boundary: bool):
    mandatory = _mandatory_edges(K, enforce_boundary)
    out = []
    for e in sorted(K.edges):
        if e in mandatory:
            continue
        if K.degree(e[0]) == 1 or K.degree(e[1]) == 1:
            out.append(e)
    return out


def propose_move(K: SupportGraph, rng, enforce_boundary: bool | None = None):
    """One elementary modification of K; the result is always connected.

    Kinds: 'add' one lattice edge touching K, 'remove' one edge whose removal
    keeps K connected, 'rewire' = remove a leaf edge then add elsewhere.
    Raises NoLegalMoveError when K admits no change at all.
    """
    if enforce_boundary is None:
        enforce_boundary = K.include_boundary
    kinds = ["add", "remove", "rewire"]
    weights = [0.5, 0.3, 0.2]
    order = list(rng.choice(len(kinds), size=3, replace=False, p=weights))
    for ki in order:
        kind = kinds[ki]
        if kind == "add":
            cands = _addable_edges(K)
            if not cands:
                continue
            e = cands[int(rng.integers(len(cands)))]
            return K.with_edge(e), "add"
        if kind == "remove":
            cands = _removable_edges(K, enforce_boundary)
            if not cands:
                continue
            e = cands[int(rng.integers(len(cands)))]
            return K.without_edge(e), "remove"
        if kind == "rewire":
            leafs = _leaf_edges(K, enforce_boundary)
            if not leafs:
                continue
            e = leafs[int(rng.integers(len(leafs)))]
            K1 = K.without_edge(e)
            adds = _addable_edges(K1)
            if not adds:
                continue
            e2 = adds[int(rng.integers(len(adds)))]
            return K1.with_edge(e2), "rewire"
    raise NoLegalMoveError("support admits no legal move")


def _initial_support(grid: Grid2D, config: OptimizerConfig, rng) -> SupportGraph:
    if config.enforce_boundary:
        return SupportGraph.boundary(grid)
    i0 = int(rng.integers(1, grid.nx - 4)) if grid.nx > 5 else 1
    j0 = int(rng.integers(1, grid.ny - 2)) if grid.ny > 3 else 1
    return SupportGraph.segment(grid, i0, j0, min(i0 + 3, grid.nx - 1), j0)


def optimize(
    grid: Grid2D,
    f: ScalarField2D,
    config: OptimizerConfig,
    initial: SupportGraph | None = None,
) -> tuple[SupportGraph, RunRecord]:
    """Metropolis annealing on support sets. Deterministic for a fixed seed."""
    t_start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    record = RunRecord(config=_config_dict(config))

    K = initial if initial is not None else _initial_support(grid, config, rng)
    obj, comp, u = objective(
        grid, K, f, config.lam, tol=config.solver_tol, preconditioner=config.preconditioner
    )
    record.solves = 1
    temp = config.temp_init if config.temp_init is not None else 0.05 * abs(obj)
    if temp <= 0:
        temp = 1e-12

    best_K, best_obj, best_comp = K, obj, comp
    record.trace.append(_trace_row(0, "init", obj, comp, length(K), temp))

    while record.solves < config.budget:
        try:
            cand, kind = propose_move(K, rng, config.enforce_boundary)
        except NoLegalMoveError:
            record.status = "no_legal_move"
            break
        record.proposed += 1
        cand_obj, cand_comp, cand_u = objective(
            grid,
            cand,
            f,
            config.lam,
            x0=u if config.warm_start else None,
            tol=config.solver_tol,
            preconditioner=config.preconditioner,
        )
        record.solves += 1
        delta = cand_obj - obj
        accept = delta <= 0 or rng.random() < math.exp(-delta / temp)
        if accept:
            K, obj, comp, u = cand, cand_obj, cand_comp, cand_u
            record.accepted += 1
            record.trace.append(_trace_row(record.proposed, kind, obj, comp, length(K), temp))
            if obj < best_obj:
                best_K, best_obj, best_comp = K, obj, comp
        sweep = record.proposed // config.moves_per_temp
        base = config.temp_init if config.temp_init is not None else 0.05 * abs(record.trace[0]["objective"])
        temp = max(base * config.cooling_ratio**sweep, 1e-300)
    else:
        record.status = "budget_exhausted"

    record.best_objective = best_obj
    record.best_compliance = best_comp
    record.best_length = length(best_K)
    record.best_edges = [
        [*best_K.grid.ij(a), *best_K.grid.ij(b)] for a, b in sorted(best_K.edges)
    ]
    record.wall_clock = time.perf_counter() - t_start
    return best_K, record


def pareto_sweep(
    grid: Grid2D,
    f: ScalarField2D,
    lambdas,
    config: OptimizerConfig,
) -> tuple[list, list]:
    """One annealing run per penalty weight, warm-started from the previous best.

    Returns (rows, records) with rows of (lam, compliance, length).
    """
    lams = list(lambdas)
    if any(b < a for a, b in zip(lams, lams[1:])):
        raise ValueError("lambdas must be sorted ascending")
    rows, records = [], []
    prev_best = None
    for lam in lams:
        cfg = replace(config, lam=lam)
        best, rec = optimize(grid, f, cfg, initial=prev_best)
        rows.append((lam, rec.best_compliance, rec.best_length))
        records.append(rec)
        prev_best = best
    return rows, records


def _trace_row(move, kind, obj, comp, ln, temp):
    return {
        "move": move,
        "kind": kind,
        "objective": obj,
        "compliance": comp,
        "length": ln,
        "temperature": temp,
    }


def _config_dict(config: OptimizerConfig) -> dict:
    return {
        "lambda": config.lam,
        "moves_per_temp": config.moves_per_temp,
        "temp_init": config.temp_init,
        "cooling_ratio": config.cooling_ratio,
        "budget": config.budget,
        "seed": config.seed,
        "enforce_boundary": config.enforce_boundary,
        "warm_start": config.warm_start,
        "solver_tol": config.solver_tol,
        "preconditioner": config.preconditioner,
    }
