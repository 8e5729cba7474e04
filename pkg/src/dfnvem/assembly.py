"""Global saddle-point assembly for both intersection coupling models.

The pressure-continuous model (``cc``) enforces flux balance across every
trace element with one Lagrange multiplier per element, which doubles as
the single-valued interface pressure.  The flow-carrying model (``dc``)
instead adds Robin-type exchange terms weighted by the inverse effective
normal permeability, a 1D mixed-VEM system along every intersection, and
point multipliers where intersections meet.

Edge flux dofs are integrated normal fluxes oriented outward from the
lower-indexed adjacent cell; duplicated interface edges have a single
adjacent cell, so their dof is that cell's outward flux.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import vem
from .errors import (
    ConflictingBC,
    MissingIntersectionProps,
    UnconstrainedPressureWarning,
)
from .geometry import FractureNetwork, point_segment_distance
from .meshing import PolyMesh, corefine_network, split_interface_dofs

__all__ = [
    "BoundarySpec",
    "DiscreteProblem",
    "DofMap",
    "SaddleSystem",
    "Solution",
    "prepare_problem",
    "build_dof_map",
    "assemble_cc",
    "assemble_dc",
    "apply_bc",
    "extract_solution",
]


# ------------------------------------------------------------------ #
# problem bundle
# ------------------------------------------------------------------ #

@dataclass
class BoundarySpec:
    """Boundary data resolved per boundary edge / intersection endpoint.

    ``fracture_bc(fid, mid3)`` returns ``("dirichlet", g)`` or
    ``("neumann", q)`` with q the outward normal flux density;
    ``gamma_end(gid, end, point3)`` returns ``("dirichlet", g)`` or
    ``("tip", None)``.
    """

    fracture_bc: callable
    gamma_end: callable = None

    def __post_init__(self):
        if self.gamma_end is None:
            self.gamma_end = lambda gid, end, p: ("tip", None)

    @classmethod
    def dirichlet(cls, g, g_hat=None):
        """All-Dirichlet data from pressure functions of 3D position."""
        def scalar(v):
            return float(np.asarray(v).ravel()[0])

        def frac(fid, mid3):
            return ("dirichlet", scalar(g(fid, mid3)))

        def gend(gid, end, p3):
            if g_hat is None:
                return ("tip", None)
            return ("dirichlet", scalar(g_hat(gid, p3)))

        return cls(fracture_bc=frac, gamma_end=gend)

    @classmethod
    def no_flow(cls):
        return cls(fracture_bc=lambda fid, mid3: ("neumann", 0.0))


@dataclass
class DiscreteProblem:
    """Meshed network plus coefficient and source data."""

    network: FractureNetwork
    meshes: dict                      # fid -> PolyMesh (side-split)
    traces: dict                      # gid -> TraceMesh
    lam: dict                         # fid -> (n_cells, 2, 2)
    varsigma: dict                    # fid -> float
    source: callable = None           # (fid, pts3) -> values
    line_source: callable = None      # (gid, pts3) -> values
    point_sources: list = field(default_factory=list)  # (fid, xyz, strength)


def prepare_problem(network: FractureNetwork, meshes: dict, lam=None,
                    source=None, line_source=None, point_sources=()):
    """Co-refine traces, split interface dofs and bundle the coefficients.

    ``meshes`` maps fracture id to its (not yet split) mesh and is
    modified in place by the co-refinement.  ``lam`` overrides the
    fractures' effective permeability: a dict of per-cell arrays, a
    callable ``(fid, centers3) -> (n, 2, 2)``, or ``None`` to use
    ``aperture * k_tangential``.
    """
    traces = corefine_network(meshes, network)
    split = {fid: split_interface_dofs(meshes[fid], traces, fid)
             for fid in sorted(meshes)}
    lam_arrays, sigma = {}, {}
    for fid, mesh in split.items():
        frac = network.fracture(fid)
        n = mesh.n_cells
        if lam is None:
            arr = np.broadcast_to(frac.effective_permeability, (n, 2, 2)).copy()
        elif callable(lam):
            centers3 = mesh.frame.to_global(mesh.cell_centroids)
            arr = np.asarray(lam(fid, centers3), float)
        else:
            arr = np.asarray(lam[fid], float)
        lam_arrays[fid] = arr
        sigma[fid] = vem.stabilization_parameter(arr)
    return DiscreteProblem(
        network=network, meshes=split, traces=traces, lam=lam_arrays,
        varsigma=sigma, source=source, line_source=line_source,
        point_sources=list(point_sources),
    )


# ------------------------------------------------------------------ #
# dof map
# ------------------------------------------------------------------ #

@dataclass
class DofMap:
    """Global numbering of flux, pressure and multiplier unknowns."""

    model: str
    edge_dof: dict
    cell_dof: dict
    line_flux: dict        # gid -> (n_bp,) dof ids; xi breakpoints hold the
                           # left-side dof, the right-side lives in line_dup
    line_dup: dict         # gid -> {bp_index: (left_dof, right_dof)}
    line_pressure: dict    # gid -> (n_elems,)
    elem_mult: dict        # gid -> (n_elems,)  (cc only)
    xi_mult: dict          # xi id -> dof      (dc only)
    total: int
    blocks: dict

    def flux_like(self) -> np.ndarray:
        idx = [d for arr in self.edge_dof.values() for d in arr]
        for gid, arr in self.line_flux.items():
            idx.extend(int(v) for v in arr if v >= 0)
            for left, right in self.line_dup.get(gid, {}).values():
                idx.extend((int(left), int(right)))
        return np.unique(np.asarray(idx, int))


def build_dof_map(problem: DiscreteProblem, model: str) -> DofMap:
    """Deterministic numbering: fracture fluxes, fracture pressures,
    per-line 1D fluxes and pressures (dc), then multipliers."""
    if model not in ("cc", "dc"):
        raise ValueError(f"unknown model {model!r}")
    nxt = 0
    edge_dof, cell_dof = {}, {}
    for fid in sorted(problem.meshes):
        ne = problem.meshes[fid].n_edges
        edge_dof[fid] = np.arange(nxt, nxt + ne)
        nxt += ne
    n_frac_flux = nxt
    for fid in sorted(problem.meshes):
        nc = problem.meshes[fid].n_cells
        cell_dof[fid] = np.arange(nxt, nxt + nc)
        nxt += nc
    n_frac_press = nxt
    line_flux, line_dup, line_pressure, elem_mult, xi_mult = {}, {}, {}, {}, {}
    if model == "dc":
        for gid in sorted(problem.traces):
            tm = problem.traces[gid]
            nbp = tm.n_elems + 1
            dofs = np.empty(nbp, int)
            dup = {}
            xi_idx = {idx for idx, _ in tm.xi_breaks}
            for i in range(nbp):
                if i in xi_idx:
                    dup[i] = (nxt, nxt + 1)
                    dofs[i] = nxt
                    nxt += 2
                else:
                    dofs[i] = nxt
                    nxt += 1
            line_flux[gid] = dofs
            line_dup[gid] = dup
        n_line_flux = nxt
        for gid in sorted(problem.traces):
            tm = problem.traces[gid]
            line_pressure[gid] = np.arange(nxt, nxt + tm.n_elems)
            nxt += tm.n_elems
        n_line_press = nxt
        for pt in problem.network.points:
            xi_mult[pt.id] = nxt
            nxt += 1
    else:
        n_line_flux = n_line_press = nxt
        for gid in sorted(problem.traces):
            tm = problem.traces[gid]
            elem_mult[gid] = np.arange(nxt, nxt + tm.n_elems)
            nxt += tm.n_elems
    blocks = {
        "fracture_flux": np.arange(0, n_frac_flux),
        "fracture_pressure": np.arange(n_frac_flux, n_frac_press),
        "line_flux": np.arange(n_frac_press, n_line_flux),
        "line_pressure": np.arange(n_line_flux, n_line_press),
        "multiplier": np.arange(n_line_press, nxt),
    }
    return DofMap(model=model, edge_dof=edge_dof, cell_dof=cell_dof,
                  line_flux=line_flux, line_dup=line_dup,
                  line_pressure=line_pressure, elem_mult=elem_mult,
                  xi_mult=xi_mult, total=nxt, blocks=blocks)


# ------------------------------------------------------------------ #
# saddle system
# ------------------------------------------------------------------ #

@dataclass
class SaddleSystem:
    """Sparse symmetric indefinite system with block bookkeeping."""

    A: sparse.csr_matrix
    rhs: np.ndarray
    dofs: DofMap
    problem: DiscreteProblem
    model: str
    constrained: dict = field(default_factory=dict)  # dof -> value
    pinned: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.A.shape[0]

    @property
    def sparsity(self) -> float:
        return self.A.nnz / float(self.size) ** 2

    def symmetry_error(self) -> float:
        d = (self.A - self.A.T).tocoo()
        return 0.0 if d.nnz == 0 else float(np.abs(d.data).max())


def _local_element(mesh: PolyMesh, k: int, lam_k, varsigma):
    es = mesh.cells[k]
    return vem.local_matrices_2d(
        area=float(mesh.cell_areas[k]),
        centroid=mesh.cell_centroids[k],
        diameter=float(mesh.cell_diameters[k]),
        edge_len=mesh.edge_len[es],
        edge_normal=mesh.cell_outward_normals(k),
        edge_mid=mesh.edge_mid[es],
        lam=lam_k,
        varsigma=varsigma,
    )


def _orientation(mesh: PolyMesh, k: int, es) -> np.ndarray:
    """+1 where the global dof (outward from the first adjacent cell)
    coincides with this cell's outward flux."""
    return np.where(mesh.edge_cells[es, 0] == k, 1.0, -1.0)


def _cell_source(problem, fid, mesh) -> np.ndarray:
    vals = np.zeros(mesh.n_cells)
    if problem.source is not None:
        centers3 = mesh.frame.to_global(mesh.cell_centroids)
        vals += mesh.cell_areas * np.asarray(
            problem.source(fid, centers3), float
        )
    for sfid, xyz, strength in problem.point_sources:
        if sfid != fid:
            continue
        d = np.linalg.norm(
            mesh.cell_centroids - mesh.frame.to_local(np.asarray(xyz, float)),
            axis=1,
        )
        vals[int(np.argmin(d))] += strength
    return vals


def _assemble_fractures(problem, dofs, rows, cols, vals, rhs):
    for fid in sorted(problem.meshes):
        mesh = problem.meshes[fid]
        edof = dofs.edge_dof[fid]
        cdof = dofs.cell_dof[fid]
        lam_f = problem.lam[fid]
        sig = problem.varsigma[fid]
        fsrc = _cell_source(problem, fid, mesh)
        for k in range(mesh.n_cells):
            es = mesh.cells[k]
            elem = _local_element(mesh, k, lam_f[k], sig)
            g = edof[es]
            s = _orientation(mesh, k, es)
            M = elem.M * np.outer(s, s)
            nn = len(es)
            rows.extend(np.repeat(g, nn))
            cols.extend(np.tile(g, nn))
            vals.extend(M.ravel())
            # b(u, q) = -(div u, q): entries -s on (pressure row, flux col).
            rows.extend([cdof[k]] * nn)
            cols.extend(g)
            vals.extend(-s)
            rows.extend(g)
            cols.extend([cdof[k]] * nn)
            vals.extend(-s)
            rhs[cdof[k]] -= fsrc[k]


def _interface_entries_cc(problem, dofs, rows, cols, vals):
    for gid in sorted(problem.traces):
        tm = problem.traces[gid]
        mult = dofs.elem_mult[gid]
        for (fid, side), eids in sorted(tm.side_edges.items()):
            edof = dofs.edge_dof[fid]
            for elem, e in enumerate(eids):
                if e < 0:
                    continue
                d = int(edof[int(e)])
                m = int(mult[elem])
                rows.extend([d, m])
                cols.extend([m, d])
                vals.extend([1.0, 1.0])


def _line_props(problem, gid):
    line = problem.network.line(gid)
    apertures = {f.id: f.aperture for f in problem.network.fractures}
    if line.k_hat is None or line.k_tilde is None:
        raise MissingIntersectionProps(f"intersection {gid} lacks k_hat/k_tilde")
    if line.k_hat <= 0 or line.k_tilde <= 0:
        raise MissingIntersectionProps(
            f"intersection {gid}: permeabilities must be positive; model "
            "blocking/conducting limits with extreme finite values"
        )
    lam_hat = line.effective_tangential(apertures)
    lam_tilde = {fid: line.effective_normal(apertures[fid])
                 for fid in line.parents if fid in problem.meshes}
    return lam_hat, lam_tilde


def _elem_end_dofs(dofs, gid, tm, j):
    """Global 1D dofs of element j handling duplicated xi breakpoints.

    Returns ((dof_left, dof_right)); at a duplicated breakpoint the
    element left of it uses the left-side copy.
    """
    dup = dofs.line_dup.get(gid, {})
    left_bp, right_bp = j, j + 1
    if left_bp in dup:
        d_left = dup[left_bp][1]    # element right of xi: right-side copy
    else:
        d_left = dofs.line_flux[gid][left_bp]
    if right_bp in dup:
        d_right = dup[right_bp][0]  # element left of xi: left-side copy
    else:
        d_right = dofs.line_flux[gid][right_bp]
    return int(d_left), int(d_right)


def _interface_entries_dc(problem, dofs, rows, cols, vals, rhs):
    for gid in sorted(problem.traces):
        tm = problem.traces[gid]
        lam_hat, lam_tilde = _line_props(problem, gid)
        phat = dofs.line_pressure[gid]
        lens = tm.elem_len
        # Robin exchange and jump coupling on every side of every parent.
        for (fid, side), eids in sorted(tm.side_edges.items()):
            edof = dofs.edge_dof[fid]
            lt = lam_tilde[fid]
            for elem, e in enumerate(eids):
                if e < 0:
                    continue
                d = int(edof[int(e)])
                rows.append(d)
                cols.append(d)
                vals.append(1.0 / (lt * lens[elem]))
                p = int(phat[elem])
                rows.extend([d, p])
                cols.extend([p, d])
                vals.extend([1.0, 1.0])
        # 1D mixed VEM along the line.
        for j in range(tm.n_elems):
            elem1d = vem.local_matrices_1d(float(lens[j]), lam_hat)
            d_left, d_right = _elem_end_dofs(dofs, gid, tm, j)
            g = (d_left, d_right)
            s = (-1.0, 1.0)   # outward dof = sign * (tangential value)
            for a in range(2):
                for b in range(2):
                    rows.append(g[a])
                    cols.append(g[b])
                    vals.append(s[a] * s[b] * elem1d.M[a, b])
            p = int(phat[j])
            # b(u, q) = -(div u, q) = -(u_right - u_left).
            rows.extend([p, p, d_left, d_right])
            cols.extend([d_left, d_right, p, p])
            vals.extend([1.0, -1.0, 1.0, -1.0])
            if problem.line_source is not None:
                mid3 = tm.line.p0 + tm.elem_mid[j] * tm.line.direction
                rhs[p] -= float(lens[j]) * float(
                    np.asarray(problem.line_source(gid, mid3[None])).ravel()[0]
                )
        # Point multipliers where intersection lines meet.
        for bp_idx, xi_id in tm.xi_breaks:
            mu = dofs.xi_mult[xi_id]
            d_left, d_right = dofs.line_dup[gid][bp_idx]
            # Outward flux of the element left of xi is +u(t); of the
            # element right of xi is -u(t).
            for d, sgn in ((int(d_left), 1.0), (int(d_right), -1.0)):
                rows.extend([d, mu])
                cols.extend([mu, d])
                vals.extend([sgn, sgn])


def _finish(problem, dofs, model, rows, cols, vals, rhs) -> SaddleSystem:
    A = sparse.csr_matrix(
        (np.asarray(vals, float), (np.asarray(rows, int), np.asarray(cols, int))),
        shape=(dofs.total, dofs.total),
    )
    A.sum_duplicates()
    return SaddleSystem(A=A, rhs=rhs, dofs=dofs, problem=problem, model=model)


def assemble_cc(problem: DiscreteProblem, dofs: DofMap,
                bcs: BoundarySpec | None = None) -> SaddleSystem:
    """Pressure-continuous coupling: per-element Lagrange multipliers
    enforce total flux balance across every trace element and act as the
    interface pressure."""
    rows, cols, vals = [], [], []
    rhs = np.zeros(dofs.total)
    _assemble_fractures(problem, dofs, rows, cols, vals, rhs)
    _interface_entries_cc(problem, dofs, rows, cols, vals)
    system = _finish(problem, dofs, "cc", rows, cols, vals, rhs)
    if bcs is not None:
        apply_bc(system, bcs)
    return system


def assemble_dc(problem: DiscreteProblem, dofs: DofMap,
                bcs: BoundarySpec | None = None) -> SaddleSystem:
    """Discontinuous coupling with tangential intersection flow."""
    rows, cols, vals = [], [], []
    rhs = np.zeros(dofs.total)
    _assemble_fractures(problem, dofs, rows, cols, vals, rhs)
    _interface_entries_dc(problem, dofs, rows, cols, vals, rhs)
    system = _finish(problem, dofs, "dc", rows, cols, vals, rhs)
    if bcs is not None:
        apply_bc(system, bcs)
    return system


# ------------------------------------------------------------------ #
# boundary conditions
# ------------------------------------------------------------------ #

def apply_bc(system: SaddleSystem, bcs: BoundarySpec) -> SaddleSystem:
    """Impose boundary data on an assembled system, in place.

    Dirichlet pressures add ``-g`` (times the signed dof weight) to the
    boundary flux rows; Neumann fluxes and intersection tips are
    eliminated symmetrically.  A floating component (no Dirichlet data
    anywhere) gets one pressure pinned to zero with a warning.
    """
    problem, dofs = system.problem, system.dofs
    eliminate = {}
    dirichlet_flags = {}
    for fid in sorted(problem.meshes):
        mesh = problem.meshes[fid]
        edof = dofs.edge_dof[fid]
        mids3 = mesh.frame.to_global(mesh.edge_mid)
        has_dirichlet = False
        for e in mesh.boundary_edges:
            kind, value = bcs.fracture_bc(fid, mids3[int(e)])
            if kind == "dirichlet":
                system.rhs[int(edof[e])] -= float(value)
                has_dirichlet = True
            elif kind == "neumann":
                eliminate[int(edof[e])] = float(value) * float(mesh.edge_len[e])
            else:
                raise ConflictingBC(f"unknown BC kind {kind!r}")
        dirichlet_flags[("f", fid)] = has_dirichlet
    if system.model == "dc":
        for gid in sorted(problem.traces):
            tm = problem.traces[gid]
            has_dirichlet = False
            for end in (0, 1):
                p3 = tm.line.p0 if end == 0 else tm.line.p1
                kind, value = bcs.gamma_end(gid, end, p3)
                bp = 0 if end == 0 else tm.n_elems
                dof = int(dofs.line_flux[gid][bp])
                sgn = -1.0 if end == 0 else 1.0
                if kind == "dirichlet":
                    system.rhs[dof] -= sgn * float(value)
                    has_dirichlet = True
                elif kind == "tip":
                    eliminate[dof] = 0.0
                else:
                    raise ConflictingBC(f"unknown end kind {kind!r}")
            dirichlet_flags[("g", gid)] = has_dirichlet
    _pin_floating_components(system, dirichlet_flags)
    if eliminate:
        _eliminate_dofs(system, eliminate)
    system.constrained.update(eliminate)
    return system


def _eliminate_dofs(system: SaddleSystem, values: dict):
    """Replace rows/columns by identity, preserving symmetry via the RHS."""
    n = system.size
    idx = np.fromiter(values.keys(), int)
    val = np.fromiter((values[i] for i in idx), float)
    x = np.zeros(n)
    x[idx] = val
    system.rhs -= system.A @ x
    keep = np.ones(n)
    keep[idx] = 0.0
    P = sparse.diags(keep)
    system.A = (P @ system.A @ P).tocsr()
    system.A = (system.A + sparse.csr_matrix(
        (np.ones(len(idx)), (idx, idx)), shape=(n, n))).tocsr()
    system.rhs[idx] = val


def _pin_floating_components(system: SaddleSystem, dirichlet_flags: dict):
    """Pin one pressure per connected component without Dirichlet data."""
    problem = system.problem
    ids = sorted(problem.meshes)
    comp = {("f", fid): ("f", fid) for fid in ids}
    for gid in sorted(problem.traces):
        comp[("g", gid)] = ("g", gid)

    def find(a):
        while comp[a] != a:
            comp[a] = comp[comp[a]]
            a = comp[a]
        return a

    def union(a, b):
        comp[find(a)] = find(b)

    for gid, tm in problem.traces.items():
        for fid in tm.line.parents:
            if fid in problem.meshes:
                union(("f", fid), ("g", gid))
    for pt in problem.network.points:
        lines = [g for g in pt.parent_lines if g in problem.traces]
        for g in lines[1:]:
            union(("g", lines[0]), ("g", g))
    have = {}
    for key, flag in dirichlet_flags.items():
        root = find(key)
        have[root] = have.get(root, False) or flag
    for fid in ids:
        root = find(("f", fid))
        if have.get(root, False):
            continue
        dof = int(system.dofs.cell_dof[fid][0])
        warnings.warn(
            f"component of fracture {fid} has no Dirichlet data; pinning "
            "one pressure to zero (analysis assumes Dirichlet somewhere)",
            UnconstrainedPressureWarning,
        )
        _eliminate_dofs(system, {dof: 0.0})
        system.pinned.append(dof)
        have[root] = True


# ------------------------------------------------------------------ #
# solution extraction
# ------------------------------------------------------------------ #

@dataclass
class Solution:
    """Per-fracture and per-intersection fields recovered from a solve."""

    pressure: dict            # fid -> (n_cells,)
    edge_flux: dict           # fid -> (n_edges,)  global orientation
    velocity: dict            # fid -> (n_cells, 3) projected at centroids
    line_pressure: dict       # gid -> (n_elems,)
    line_flux: dict           # gid -> (n_bp,) tangential values
    interface_pressure: dict  # gid -> (n_elems,) cc multipliers
    x: np.ndarray


def extract_solution(system: SaddleSystem, x: np.ndarray) -> Solution:
    problem, dofs = system.problem, system.dofs
    pressure, edge_flux, velocity = {}, {}, {}
    for fid in sorted(problem.meshes):
        mesh = problem.meshes[fid]
        pressure[fid] = x[dofs.cell_dof[fid]]
        edge_flux[fid] = x[dofs.edge_dof[fid]]
        vel = np.empty((mesh.n_cells, 3))
        lam_f = problem.lam[fid]
        sig = problem.varsigma[fid]
        for k in range(mesh.n_cells):
            es = mesh.cells[k]
            elem = _local_element(mesh, k, lam_f[k], sig)
            s = _orientation(mesh, k, es)
            vel[k] = vem.project_velocity(
                elem, s * x[dofs.edge_dof[fid][es]], frame=mesh.frame
            )
        velocity[fid] = vel
    line_pressure, line_flux, interface_pressure = {}, {}, {}
    if system.model == "dc":
        for gid in problem.traces:
            line_pressure[gid] = x[dofs.line_pressure[gid]]
            line_flux[gid] = x[dofs.line_flux[gid]].copy()
    else:
        for gid in problem.traces:
            interface_pressure[gid] = x[dofs.elem_mult[gid]]
    return Solution(pressure=pressure, edge_flux=edge_flux, velocity=velocity,
                    line_pressure=line_pressure, line_flux=line_flux,
                    interface_pressure=interface_pressure, x=x)


# ------------------------------------------------------------------ #
# JSON boundary selectors
# ------------------------------------------------------------------ #

def boundary_spec_from_json(raw: dict, network: FractureNetwork) -> BoundarySpec:
    """Compile the network file's BC selectors into a BoundarySpec.

    Fracture selectors pick boundary edges by polygon-edge index or by an
    axis-aligned box containing the edge midpoint; unselected edges are
    no-flow.  Intersection endpoints default to zero-flux tips.
    """
    frac_rules = {}
    for item in raw.get("boundary_conditions", []):
        fid = int(item["fracture"])
        frac_rules.setdefault(fid, []).append(item)
    gamma_rules = {}
    for item in raw.get("intersection_conditions", []):
        key = (int(item["gamma"]), int(item["end"]))
        gamma_rules[key] = item

    def fracture_bc(fid, mid3):
        frac = network.fracture(fid)
        hit = None
        for item in frac_rules.get(fid, []):
            ok = False
            if "edge" in item:
                i = int(item["edge"])
                a = frac.vertices[i]
                b = frac.vertices[(i + 1) % len(frac.vertices)]
                ok = point_segment_distance(mid3, a, b) <= 100 * frac.tol
            elif "box" in item:
                lo, hi = (np.asarray(v, float) for v in item["box"])
                ok = bool((mid3 >= lo - 1e-12).all() and (mid3 <= hi + 1e-12).all())
            if not ok:
                continue
            rule = (item.get("type", "dirichlet"), float(item.get("value", 0.0)))
            if hit is not None and hit != rule:
                raise ConflictingBC(
                    f"fracture {fid}: conflicting BCs at {mid3}"
                )
            hit = rule
        return hit if hit is not None else ("neumann", 0.0)

    def gamma_end(gid, end, p3):
        item = gamma_rules.get((gid, end))
        if item is None:
            return ("tip", None)
        if item.get("type", "tip") == "dirichlet":
            return ("dirichlet", float(item.get("value", 0.0)))
        return ("tip", None)

    return BoundarySpec(fracture_bc=fracture_bc, gamma_end=gamma_end)
