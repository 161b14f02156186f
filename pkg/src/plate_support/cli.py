"""Command line runner: configs in, run records and plot-ready tables out.

    plate-support <solve|dual|optimize|sweep|audit|gamma|probe>
                  --config cfg.json --out outdir [--seed N] [--threads 1]
                  [--oracle]

Configs are JSON; every run directory receives a record.json echoing the
fully resolved config, a content hash of the inputs, and the reports of the
pipeline that ran. Exit codes: 0 success, 2 configuration error, 3 numerical
failure (the failing report is still persisted). Logging level comes from
PLATE_SUPPORT_LOG (quiet, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .audit import ahlfors_audit, griffith_competitor_audit, poincare_probe, thin_poincare_probe
from .biharmonic import assemble, compliance_identity_check, solve, solve_dense
from .dual import CrackMesh, build_G, duality_gap, solve_dual, solve_poisson
from .errors import ConfigError, NoConvergenceError, PlateSupportError
from .gamma3d import gamma_limit_experiment, rigidity_probe
from .grid import Grid2D, ScalarField2D, SupportGraph, is_connected, load_support, save_support
from .io import content_hash, fmt, write_csv, write_field_csv, write_field_matrix, write_json
from .optimize import OptimizerConfig, optimize, pareto_sweep

log = logging.getLogger("plate_support")

SUBCOMMANDS = ("solve", "dual", "optimize", "sweep", "audit", "gamma", "probe")

_DEFAULTS = {
    "solver": {"tol": 1e-10, "max_iter": None, "preconditioner": "auto"},
    "load": {"kind": "constant", "value": 1.0},
    "support": {"kind": "boundary"},
}

_OPT_DEFAULTS = {
    "moves_per_temp": 25,
    "temp_init": None,
    "cooling_ratio": 0.95,
    "budget": 200,
    "seed": 0,
    "enforce_boundary": True,
    "warm_start": True,
}


def validate_config(config_path, subcommand: str = "solve"):
    """Parse, fill defaults, and check a config; returns (config, warnings).

    All problems are collected and raised at once as a ConfigError.
    """
    problems, warnings = [], []
    try:
        raw = json.loads(Path(config_path).read_text())
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {config_path}"])
    except json.JSONDecodeError as e:
        raise ConfigError([f"config is not valid JSON: {e}"])

    cfg = dict(raw)
    grid = cfg.get("grid")
    if not isinstance(grid, dict):
        problems.append("grid section is required")
        grid = {}
    nx = grid.get("nx")
    ny = grid.get("ny")
    if not (isinstance(nx, int) and nx >= 4):
        problems.append("grid.nx must be an integer >= 4")
    if not (isinstance(ny, int) and ny >= 4):
        problems.append("grid.ny must be an integer >= 4")
    delta = grid.get("delta")
    extent = grid.get("extent")
    if delta is None and extent is None:
        problems.append("grid needs either delta or extent")
    if extent is not None and isinstance(nx, int) and isinstance(ny, int) and nx >= 4 and ny >= 4:
        ex, ey = float(extent[0]), float(extent[1])
        dx = ex / (nx - 1)
        dy = ey / (ny - 1)
        if abs(dx - dy) > 1e-12 * max(dx, dy):
            problems.append("grid.extent must give equal spacing along x and y (delta divides both extents)")
        if delta is not None and abs(delta - dx) > 1e-12 * dx:
            problems.append("grid.delta conflicts with grid.extent")
        delta = dx
    if delta is not None and not delta > 0:
        problems.append("grid.delta must be positive")
    grid = {"nx": nx, "ny": ny, "delta": delta, "origin": grid.get("origin", [0.0, 0.0])}
    cfg["grid"] = grid

    load = {**_DEFAULTS["load"], **cfg.get("load", {})}
    if load.get("kind") not in ("constant", "gaussian", "csv"):
        problems.append("load.kind must be one of constant, gaussian, csv")
    if load.get("kind") == "gaussian":
        for k in ("cx", "cy", "sigma", "amp"):
            if k not in load:
                problems.append(f"load.{k} is required for a gaussian load")
    if load.get("kind") == "csv" and "path" not in load:
        problems.append("load.path is required for a csv load")
    cfg["load"] = load

    support = {**_DEFAULTS["support"], **cfg.get("support", {})}
    if support.get("kind") not in ("boundary", "file", "boundary_plus_segment"):
        problems.append("support.kind must be one of boundary, file, boundary_plus_segment")
    if support.get("kind") == "file" and "path" not in support:
        problems.append("support.path is required for a file support")
    if support.get("kind") == "boundary_plus_segment":
        for k in ("i0", "j0", "i1", "j1"):
            if k not in support:
                problems.append(f"support.{k} is required for boundary_plus_segment")
    cfg["support"] = support

    solver = {**_DEFAULTS["solver"], **cfg.get("solver", {})}
    if not solver["tol"] > 0:
        problems.append("solver.tol must be positive")
    cfg["solver"] = solver

    if subcommand in ("optimize", "sweep"):
        opt = {**_OPT_DEFAULTS, **cfg.get("optimizer", {})}
        if "lambda" not in cfg.get("optimizer", {}):
            opt["lambda"] = 1.0
            warnings.append("optimizer.lambda omitted; defaulting to the unit length weight 1.0")
        if opt["lambda"] < 0:
            problems.append("optimizer.lambda must be >= 0")
        if not 0 < opt["cooling_ratio"] < 1:
            problems.append("optimizer.cooling_ratio must lie strictly between 0 and 1")
        if not opt["budget"] >= 1:
            problems.append("optimizer.budget must be >= 1")
        cfg["optimizer"] = opt
    if subcommand == "sweep":
        sweep = cfg.get("sweep", {})
        lams = sweep.get("lambdas")
        if not lams:
            problems.append("sweep.lambdas is required")
        elif any(b < a for a, b in zip(lams, lams[1:])):
            problems.append("sweep.lambdas must be sorted ascending")
        cfg["sweep"] = sweep
    if subcommand == "gamma":
        gm = cfg.get("gamma", {})
        gm.setdefault("alpha", 4.0)
        gm.setdefault("h_ladder", [0.125, 0.0625, 0.03125])
        gm.setdefault("nz_ladder", None)
        if not gm["alpha"] > 3:
            problems.append("gamma.alpha must exceed 3 (the bending regime needs beta > 4)")
        cfg["gamma"] = gm
    if subcommand == "audit":
        au = cfg.get("audit", {})
        au.setdefault("radii", None)
        au.setdefault("centers", "all")
        au.setdefault("f_norm_p", "inf")
        au.setdefault("griffith", True)
        au.setdefault("require_interior", False)
        cfg["audit"] = au
    if subcommand == "probe":
        pr = cfg.get("probe", {})
        pr.setdefault("kind", "poincare")
        if pr["kind"] not in ("poincare", "thin_poincare", "rigidity"):
            problems.append("probe.kind must be one of poincare, thin_poincare, rigidity")
        cfg["probe"] = pr
    if subcommand == "dual":
        cfg["dual"] = cfg.get("dual", {})

    if problems:
        raise ConfigError(problems)
    return cfg, warnings


def _build_grid(cfg) -> Grid2D:
    g = cfg["grid"]
    return Grid2D(g["nx"], g["ny"], float(g["delta"]), tuple(g.get("origin", (0.0, 0.0))))


def _build_load(cfg, grid: Grid2D) -> ScalarField2D:
    ld = cfg["load"]
    if ld["kind"] == "constant":
        return ScalarField2D(grid, np.full(grid.n_nodes, float(ld["value"])))
    if ld["kind"] == "gaussian":
        cx, cy, sig, amp = (float(ld[k]) for k in ("cx", "cy", "sigma", "amp"))
        c = grid.coords
        r2 = (c[:, 0] - cx) ** 2 + (c[:, 1] - cy) ** 2
        return ScalarField2D(grid, amp * np.exp(-r2 / (2 * sig**2)))
    vals = np.zeros(grid.n_nodes)
    with open(ld["path"]) as fh:
        header = fh.readline()
        if not header.lower().startswith("x,"):
            raise ConfigError([f"load csv {ld['path']} must start with an x,y,value header"])
        for k, line in enumerate(fh):
            x, y, v = (float(t) for t in line.strip().split(","))
            i = round((x - grid.origin[0]) / grid.delta)
            j = round((y - grid.origin[1]) / grid.delta)
            if not (0 <= i < grid.nx and 0 <= j < grid.ny):
                raise ConfigError([f"load csv row {k + 2} lies outside the grid"])
            vals[grid.index(i, j)] = v
    return ScalarField2D(grid, vals)


def _build_support(cfg, grid: Grid2D) -> SupportGraph:
    sp = cfg["support"]
    if sp["kind"] == "boundary":
        return SupportGraph.boundary(grid)
    if sp["kind"] == "boundary_plus_segment":
        seg = SupportGraph.segment(grid, sp["i0"], sp["j0"], sp["i1"], sp["j1"])
        return SupportGraph.boundary(grid).union(seg)
    K = load_support(sp["path"], grid)
    return K


def _record_base(subcommand, cfg, warnings, seed, threads):
    extras = [p for p in (cfg["load"].get("path"), cfg["support"].get("path")) if p]
    return {
        "tool": "plate-support",
        "version": __version__,
        "subcommand": subcommand,
        "config": cfg,
        "config_warnings": warnings,
        "seed": seed,
        "threads": threads,
        "content_hash": content_hash(cfg, *extras),
        "reports": {},
        "errors": [],
        "outputs": [],
    }


def run(subcommand: str, config_path, out_dir, seed=None, threads: int = 1, oracle: bool = False) -> int:
    """Execute one pipeline; returns the process exit status."""
    _setup_logging()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if subcommand not in SUBCOMMANDS:
        print(f"unknown subcommand {subcommand!r}", file=sys.stderr)
        return 2
    try:
        cfg, warnings = validate_config(config_path, subcommand)
    except ConfigError as e:
        for p in e.problems:
            log.error("config: %s", p)
            print(f"config error: {p}", file=sys.stderr)
        write_json(out / "record.json", {"subcommand": subcommand, "errors": e.problems, "status": "config_error"})
        return 2

    record = _record_base(subcommand, cfg, warnings, seed, threads)
    t0 = time.perf_counter()
    try:
        grid = _build_grid(cfg)
        f = _build_load(cfg, grid)
        status = _DISPATCH[subcommand](cfg, grid, f, out, record, seed=seed, oracle=oracle)
        record["status"] = status
        rc = 0
    except ConfigError as e:
        for p in e.problems:
            print(f"config error: {p}", file=sys.stderr)
        record["errors"].extend({"kind": "config", "message": p} for p in e.problems)
        record["status"] = "config_error"
        rc = 2
    except (NoConvergenceError, PlateSupportError, np.linalg.LinAlgError) as e:
        log.error("numerical failure: %s", e)
        record["errors"].append({"kind": type(e).__name__, "message": str(e)})
        record["status"] = "numerical_failure"
        rc = 3
    record["wall_clock"] = time.perf_counter() - t0
    write_json(out / "record.json", record)
    return rc


def _run_solve(cfg, grid, f, out, record, seed=None, oracle=False):
    K = _build_support(cfg, grid)
    system = assemble(grid, K, f)
    u, rep = solve(system, tol=cfg["solver"]["tol"], max_iter=cfg["solver"]["max_iter"],
                   preconditioner=cfg["solver"]["preconditioner"])
    mismatch = compliance_identity_check(u, f, system)
    record["reports"]["solve"] = {
        "iterations": rep.iterations,
        "residual_norm": rep.residual_norm,
        "compliance": rep.compliance,
        "hessian_energy": rep.hessian_energy,
        "compliance_identity_mismatch": mismatch,
        "free_nodes": system.n_free,
        "form": system.form,
    }
    if oracle and grid.n_nodes <= 400:
        u_d, rep_d = solve_dense(system)
        record["reports"]["dense_oracle"] = {
            "compliance": rep_d.compliance,
            "max_dev": float(np.abs(u.values - u_d.values).max()),
        }
    write_field_matrix(u, out / "u.txt")
    write_field_csv(u, out / "u.csv")
    record["outputs"] += ["u.txt", "u.csv"]
    return "ok"


def _run_dual(cfg, grid, f, out, record, seed=None, oracle=False):
    ref = cfg.get("dual", {}).get("primal_reference")
    if ref:
        ref_rec = json.loads(Path(ref).read_text())
        rg = ref_rec.get("config", {}).get("grid", {})
        if (rg.get("nx"), rg.get("ny")) != (grid.nx, grid.ny):
            raise ConfigError(
                [f"primal reference grid {rg.get('nx')}x{rg.get('ny')} does not match {grid.nx}x{grid.ny}"]
            )
    K = _build_support(cfg, grid)
    system = assemble(grid, K, f)
    u, rep = solve(system, tol=cfg["solver"]["tol"], preconditioner=cfg["solver"]["preconditioner"])
    phi = solve_poisson(grid, f)
    G = build_G(phi)
    mesh = CrackMesh.build(grid, K)
    sol, drep = solve_dual(mesh, G)
    gap_abs, gap_rel, drep = duality_gap(rep.compliance, drep)
    record["reports"]["dual"] = {
        "primal_compliance": rep.compliance,
        "dual_value": drep.dual_value,
        "gap_abs": gap_abs,
        "gap_rel": gap_rel,
        "components": mesh.n_components,
        "gauge_info": drep.gauge_info,
        "iterations": drep.iterations,
    }
    cc = mesh.cell_centers()
    vv = sol.cell_values()
    rows = [
        (cc[k, 0], cc[k, 1], int(mesh.component_of_cell[k]), vv[k, 0], vv[k, 1])
        for k in range(mesh.n_cells)
    ]
    write_csv(out / "dual_v.csv", ["cell_x", "cell_y", "component", "vx", "vy"], rows)
    record["outputs"].append("dual_v.csv")
    return "ok"


def _run_optimize(cfg, grid, f, out, record, seed=None, oracle=False):
    oc = cfg["optimizer"]
    config = OptimizerConfig(
        lam=oc["lambda"],
        moves_per_temp=oc["moves_per_temp"],
        temp_init=oc["temp_init"],
        cooling_ratio=oc["cooling_ratio"],
        budget=oc["budget"],
        seed=oc["seed"] if seed is None else seed,
        enforce_boundary=oc["enforce_boundary"],
        warm_start=oc["warm_start"],
        solver_tol=cfg["solver"]["tol"],
        preconditioner=cfg["solver"]["preconditioner"],
    )
    best, rec = optimize(grid, f, config)
    # post-run structural audit: the hard length density bound on every node
    radii = [4 * grid.delta, 8 * grid.delta]
    rep_a = ahlfors_audit(grid, best, None, f, sorted(best.nodes), radii)
    rec.audit_summary = {
        "ahlfors_lower_violations": rep_a.lower_violations,
        "radii": radii,
        "connected": is_connected(best),
    }
    record["reports"]["optimize"] = rec.as_dict()
    save_support(best, out / "best_K.txt")
    write_csv(
        out / "trace.csv",
        ["move", "kind", "objective", "compliance", "length", "temperature"],
        rec.trace,
    )
    record["outputs"] += ["best_K.txt", "trace.csv"]
    return rec.status


def _run_sweep(cfg, grid, f, out, record, seed=None, oracle=False):
    oc = cfg["optimizer"]
    config = OptimizerConfig(
        lam=oc["lambda"],
        moves_per_temp=oc["moves_per_temp"],
        temp_init=oc["temp_init"],
        cooling_ratio=oc["cooling_ratio"],
        budget=oc["budget"],
        seed=oc["seed"] if seed is None else seed,
        enforce_boundary=oc["enforce_boundary"],
        warm_start=oc["warm_start"],
        solver_tol=cfg["solver"]["tol"],
        preconditioner=cfg["solver"]["preconditioner"],
    )
    rows, records = pareto_sweep(grid, f, cfg["sweep"]["lambdas"], config)
    write_csv(out / "pareto.csv", ["lambda", "compliance", "length"], rows)
    record["reports"]["sweep"] = {"rows": rows, "runs": [r.as_dict() for r in records]}
    record["outputs"].append("pareto.csv")
    return "ok"


def _run_audit(cfg, grid, f, out, record, seed=None, oracle=False):
    au = cfg["audit"]
    K = _build_support(cfg, grid)
    system = assemble(grid, K, f)
    u, rep = solve(system, tol=cfg["solver"]["tol"], preconditioner=cfg["solver"]["preconditioner"])
    phi = solve_poisson(grid, f)
    G = build_G(phi)
    sol, drep = solve_dual(CrackMesh.build(grid, K), G)
    radii = au["radii"] or [4 * grid.delta, 8 * grid.delta, 16 * grid.delta]
    centers = sorted(K.nodes) if au["centers"] == "all" else [int(c) for c in au["centers"]]
    rep_a = ahlfors_audit(grid, K, sol, f, centers, radii, f_norm_p=au["f_norm_p"])
    write_csv(
        out / "ahlfors.csv",
        ["center", "x", "y", "r", "length_in_ball", "lower_applicable", "lower_ok",
         "energy_in_ball", "upper_applicable", "C_needed"],
        rep_a.rows,
    )
    summary = {
        "ahlfors": {
            "lower_violations": rep_a.lower_violations,
            "calibrated_C": rep_a.calibrated_C,
            "f_norm": rep_a.f_norm,
            "diam": rep_a.diam,
            "r0": rep_a.r0,
        },
        "dual_value": drep.dual_value,
        "primal_compliance": rep.compliance,
    }
    record["outputs"].append("ahlfors.csv")
    if au["griffith"]:
        inner = [c for c in centers if _ball_fits(grid, c, min(radii))]
        if inner:
            rep_g = griffith_competitor_audit(
                grid, K, sol, inner,
                [r for r in radii if _any_fits(grid, inner, r)],
                require_interior=au["require_interior"],
            )
            write_csv(
                out / "griffith.csv",
                ["center", "r", "min_side", "comp_side", "excess", "C_needed",
                 "competitor_connected", "circle_raw", "circle_corrected", "removed_edges"],
                rep_g.rows,
            )
            summary["griffith"] = {
                "calibrated_C": rep_g.calibrated_C,
                "circle_overshoot": rep_g.circle_overshoot,
            }
            record["outputs"].append("griffith.csv")
    record["reports"]["audit"] = summary
    return "ok"


def _ball_fits(grid, node, r):
    x = grid.coords[int(node)]
    x0, y0 = grid.origin
    ex, ey = grid.extent
    return (x[0] - r >= x0 and x[0] + r <= x0 + ex and x[1] - r >= y0 and x[1] + r <= y0 + ey)


def _any_fits(grid, centers, r):
    return any(_ball_fits(grid, c, r) for c in centers)


def _run_gamma(cfg, grid, f, out, record, seed=None, oracle=False):
    gm = cfg["gamma"]
    K = _build_support(cfg, grid)
    res = gamma_limit_experiment(
        grid, K, f, gm["alpha"], gm["h_ladder"], nz_ladder=gm["nz_ladder"],
        solver_tol=cfg["solver"]["tol"],
    )
    write_csv(
        out / "ladder.csv",
        ["h", "E_h", "J_h", "scaled", "gap_to_I"],
        [{k: r[k] for k in ("h", "E_h", "J_h", "scaled", "gap_to_I")} for r in res["rows"]],
    )
    record["reports"]["gamma"] = res
    record["outputs"].append("ladder.csv")
    return "ok"


def _run_probe(cfg, grid, f, out, record, seed=None, oracle=False):
    pr = cfg["probe"]
    K = _build_support(cfg, grid)
    if pr["kind"] == "poincare":
        c = poincare_probe(grid, K)
        record["reports"]["probe"] = {"kind": "poincare", "constant": c}
    elif pr["kind"] == "thin_poincare":
        hs = pr.get("h_ladder", [0.25, 0.125, 0.0625])
        rows = thin_poincare_probe(grid, K, hs, nz=pr.get("nz", 9))
        write_csv(out / "thin_poincare.csv", ["h", "constant"], rows)
        record["reports"]["probe"] = {"kind": "thin_poincare", "rows": rows}
        record["outputs"].append("thin_poincare.csv")
    else:
        res = rigidity_probe(
            n=pr.get("n", 9),
            patch_radius=pr.get("patch_radius", 0.25),
            trials=pr.get("trials", 20),
            seed=pr.get("seed", 0) if seed is None else seed,
            n_fine=pr.get("n_fine"),
        )
        record["reports"]["probe"] = {"kind": "rigidity", **res}
    return "ok"


_DISPATCH = {
    "solve": _run_solve,
    "dual": _run_dual,
    "optimize": _run_optimize,
    "sweep": _run_sweep,
    "audit": _run_audit,
    "gamma": _run_gamma,
    "probe": _run_probe,
}


def _setup_logging():
    level = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("PLATE_SUPPORT_LOG", "quiet"), logging.WARNING
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plate-support", description=__doc__)
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="recorded in the run record; kernels are single threaded")
    parser.add_argument("--oracle", action="store_true",
                        help="cross-check small solves against the dense direct oracle")
    args = parser.parse_args(argv)
    return run(args.subcommand, args.config, args.out, seed=args.seed,
               threads=args.threads, oracle=args.oracle)


if __name__ == "__main__":
    sys.exit(main())
