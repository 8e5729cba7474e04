"""Command line driver: mesh, coarsen, solve and convergence pipelines.

Exit codes: 0 success, 2 configuration, 3 geometry, 4 meshing/coarsening,
5 solver.  Outputs are deterministic for a fixed configuration (timings
in the JSON summary are excluded from that guarantee).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import assembly as asm
from . import cases as case_mod
from . import coarsening as coa
from . import meshing as msh
from . import postprocess as post
from . import solver as slv
from .errors import ConfigError, DfnError
from .geometry import load_network

SUMMARY_SCHEMA = 1


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dfnvem",
        description="Mixed virtual element Darcy solver for discrete "
                    "fracture networks",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_model=True):
        sp.add_argument("--case", choices=case_mod.CASE_NAMES,
                        help="built-in benchmark case")
        sp.add_argument("--network", type=Path,
                        help="network JSON file (alternative to --case)")
        sp.add_argument("--family", default="triangular",
                        help="mesh family of the case")
        sp.add_argument("--level", type=int, default=1)
        sp.add_argument("--h", type=float, default=0.1,
                        help="target mesh size for network files")
        sp.add_argument("--c-depth", type=int, default=0)
        sp.add_argument("--eps-str", type=float, default=0.25)
        sp.add_argument("--out", type=Path, default=Path("out"))
        sp.add_argument("--threads", type=int,
                        default=int(os.environ.get("DFN_VEM_THREADS", "1")))
        if with_model:
            sp.add_argument("--model", choices=("cc", "dc"), default=None)
            sp.add_argument("--solver", choices=("direct", "minres"),
                            default="direct")
            sp.add_argument("--tol", type=float, default=1e-10)

    common(sub.add_parser("mesh", help="mesh a case or network and export"),
           with_model=False)
    common(sub.add_parser("coarsen", help="mesh then agglomerate"),
           with_model=False)
    common(sub.add_parser("solve", help="full pipeline on one level"))
    conv = sub.add_parser("convergence", help="refinement ladder with orders")
    common(conv)
    conv.add_argument("--levels", type=int, default=4)
    return p


def _network_meshes(args):
    """Meshes for a file-based network at a uniform target size."""
    network, raw = load_network(args.network)
    ids = sorted(f.id for f in network.fractures)

    def mesh_one(fid):
        frac = network.fracture(fid)
        return fid, msh.triangulate_fracture(frac, network.traces_of(fid),
                                             args.h)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            meshes = dict(pool.map(mesh_one, ids))
    else:
        meshes = dict(mesh_one(fid) for fid in ids)
    if args.c_depth > 0:
        meshes = case_mod._coarsen_meshes(network, meshes, args.c_depth)
    bcs = asm.boundary_spec_from_json(raw, network)
    return network, meshes, bcs, raw


def _case_setup(args):
    if args.network is not None:
        return None
    if args.case is None:
        raise ConfigError("either --case or --network is required")
    return case_mod.get_case(args.case)


def _write_summary(out_dir: Path, payload: dict):
    payload = {"schema": SUMMARY_SCHEMA, **payload}
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _report_dict(r: post.ErrorReport) -> dict:
    return {
        "level": r.level, "h_avg": r.h_avg, "h_max": r.h_max,
        "err_p": r.err_p, "err_u": r.err_u,
        "err_p_hat": r.err_p_hat, "err_u_hat": r.err_u_hat,
        "order_p": r.order_p, "order_u": r.order_u,
        "order_p_hat": r.order_p_hat, "order_u_hat": r.order_u_hat,
        "min_p": r.min_p, "max_p": r.max_p, "size": r.size,
        "sparsity": r.sparsity, "n_cells": r.n_cells,
        "faces": list(r.faces),
    }


def cmd_mesh(args) -> dict:
    out = {"command": "mesh"}
    args.out.mkdir(parents=True, exist_ok=True)
    if args.network is not None:
        network, meshes, _, _ = _network_meshes(args)
    else:
        case = _case_setup(args)
        network = case.network()
        meshes = case.meshes(args.family, args.level)
    stats = {}
    for fid, mesh in sorted(meshes.items()):
        msh.save_mesh(mesh, args.out / f"fracture_{fid}.mesh.txt")
        stats[str(fid)] = msh.mesh_stats(mesh)
    out["mesh_stats"] = stats
    return out


def cmd_coarsen(args) -> dict:
    out = {"command": "coarsen"}
    args.out.mkdir(parents=True, exist_ok=True)
    if args.network is not None:
        network, _ = load_network(args.network)
        raw_meshes = {
            f.id: msh.triangulate_fracture(f, network.traces_of(f.id), args.h)
            for f in network.fractures
        }
    else:
        case = _case_setup(args)
        network = case.network()
        raw_meshes = case.meshes("triangular", args.level)
    depth = args.c_depth if args.c_depth > 0 else 1
    stats = {}
    for fid, mesh in sorted(raw_meshes.items()):
        frac = network.fracture(fid)
        tips = [frac.frame.to_local(p)
                for ln in network.traces_of(fid) for p in (ln.p0, ln.p1)
                if frac.boundary_distance(p) > 100 * frac.tol]
        coarse, part = coa.agglomerate(mesh, tips_local=tips, c_depth=depth,
                                       eps_str=args.eps_str)
        coarse.frame = frac.frame
        post.export_partition_csv(part, args.out / f"partition_{fid}.csv")
        msh.save_mesh(coarse, args.out / f"fracture_{fid}_coarse.mesh.txt")
        stats[str(fid)] = {
            "fine_cells": mesh.n_cells,
            "coarse_cells": coarse.n_cells,
            **{f"coarse_{k}": v for k, v in msh.mesh_stats(coarse).items()},
        }
    out["coarsen_stats"] = stats
    return out


def _solve_once(args, level=None):
    level = level if level is not None else args.level
    if args.network is not None:
        network, meshes, bcs, raw = _network_meshes(args)
        problem = asm.prepare_problem(network, meshes)
        model = args.model or "cc"
        dofs = asm.build_dof_map(problem, model)
        assemble = asm.assemble_cc if model == "cc" else asm.assemble_dc
        system = assemble(problem, dofs, bcs)
        report = slv.solve(system, method=args.solver, tol=args.tol)
        solution = asm.extract_solution(system, report.x)
        err = None
        case = None
    else:
        case = _case_setup(args)
        model = args.model or case.model
        problem, system, solution, report, err = case_mod.run_level(
            case, args.family, level, model=model, solver=args.solver,
            tol=args.tol)
    return problem, system, solution, report, err, case, model


def cmd_solve(args) -> dict:
    t0 = time.monotonic()
    problem, system, solution, report, err, case, model = _solve_once(args)
    args.out.mkdir(parents=True, exist_ok=True)
    tag = args.case or Path(args.network).stem
    post.export_vtk(problem, solution,
                    args.out / f"{tag}_{args.family}_{args.level}.vtk")
    if problem.traces:
        post.export_line_vtk(
            problem, solution,
            args.out / f"{tag}_{args.family}_{args.level}_lines.vtk")
    out = {
        "command": "solve", "model": model, "size": system.size,
        "sparsity": system.sparsity, "residual": report.residual,
        "solver": report.method,
        "timings": {"total_s": time.monotonic() - t0},
    }
    if err is not None:
        out["errors"] = _report_dict(err)
    balance = global_flux_balance(problem, system, solution)
    out["flux_balance"] = balance
    return out


def cmd_convergence(args) -> dict:
    t0 = time.monotonic()
    if args.network is not None:
        raise ConfigError("convergence studies need a built-in case")
    case = _case_setup(args)
    model = args.model or case.model
    reports, runs = case_mod.run_convergence(case, args.family, args.levels,
                                             model=model, solver=args.solver)
    args.out.mkdir(parents=True, exist_ok=True)
    tag = f"{case.name}_{args.family}"
    post.export_csv(reports, args.out / f"{tag}.csv")
    if reports[-1].err_p_hat is not None:
        post.export_csv(reports, args.out / f"{tag}_intersection.csv",
                        intersection=True)
    problem, system, solution, _ = runs[-1]
    post.export_vtk(problem, solution, args.out / f"{tag}_finest.vtk")
    return {
        "command": "convergence", "model": model, "case": case.name,
        "family": args.family,
        "levels": [_report_dict(r) for r in reports],
        "timings": {"total_s": time.monotonic() - t0},
    }


def global_flux_balance(problem, system, solution) -> dict:
    """Net boundary outflow versus total injected source."""
    total_out = 0.0
    total_abs = 0.0
    for fid in sorted(problem.meshes):
        mesh = problem.meshes[fid]
        for e in mesh.boundary_edges:
            v = float(solution.edge_flux[fid][int(e)])
            total_out += v
            total_abs += abs(v)
    total_src = 0.0
    for fid in sorted(problem.meshes):
        mesh = problem.meshes[fid]
        if problem.source is not None:
            c3 = mesh.frame.to_global(mesh.cell_centroids)
            total_src += float(
                (mesh.cell_areas * np.asarray(problem.source(fid, c3))).sum()
            )
    for _, _, s in problem.point_sources:
        total_src += s
    if problem.line_source is not None:
        for gid, tm in problem.traces.items():
            vals = np.asarray(problem.line_source(gid, tm.elem_mid_3d()))
            total_src += float((tm.elem_len * vals).sum())
    scale = max(total_abs, abs(total_src), 1e-300)
    return {
        "boundary_outflow": total_out,
        "total_source": total_src,
        "relative_imbalance": abs(total_out - total_src) / scale,
    }


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "mesh":
            payload = cmd_mesh(args)
        elif args.command == "coarsen":
            payload = cmd_coarsen(args)
        elif args.command == "solve":
            payload = cmd_solve(args)
        elif args.command == "convergence":
            payload = cmd_convergence(args)
        else:
            raise ConfigError(f"unknown command {args.command!r}")
    except DfnError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    _write_summary(args.out, payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
