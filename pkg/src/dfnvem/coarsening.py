"""AMG-style mesh agglomeration driven by a TPFA strength matrix.

A two-point flux approximation of the Darcy operator provides the
coupling strengths between neighbouring cells.  Intersection traces are
treated as boundaries, so no coupling ever crosses a trace and coarse
cells cannot straddle one.  Cells flanking an immersed trace tip are
promoted to coarse seeds a priori, which keeps the two sides of the tip
in different coarse cells.  The split/merge sweep is repeated
``c_depth`` times.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import DegenerateCell
from .meshing import PolyMesh

__all__ = [
    "StrengthMatrix",
    "CoarsePartition",
    "tpfa_matrix",
    "cf_split",
    "agglomerate",
]


@dataclass
class StrengthMatrix:
    """TPFA matrix with lazily computed strong-coupling sets."""

    A: sparse.csr_matrix

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def strong_sets(self, eps_str: float):
        """``S[i]``: columns j with ``-A_ij >= eps_str * max_k(-A_ik)``."""
        A = self.A
        S = [set() for _ in range(self.n)]
        for i in range(self.n):
            cols = A.indices[A.indptr[i]:A.indptr[i + 1]]
            vals = A.data[A.indptr[i]:A.indptr[i + 1]]
            neg = vals < 0
            if not neg.any():
                continue
            thresh = eps_str * (-vals[neg]).max()
            for j, v in zip(cols[neg], vals[neg]):
                if -v >= thresh and j != i:
                    S[i].add(int(j))
        return S


def _cell_lambda(lam, centroids: np.ndarray) -> np.ndarray:
    n = len(centroids)
    if callable(lam):
        out = np.asarray(lam(centroids), float)
        if out.shape != (n, 2, 2):
            raise ValueError("permeability callback must return (n, 2, 2)")
        return out
    lam = np.asarray(lam, float)
    if lam.shape == (2, 2):
        return np.broadcast_to(lam, (n, 2, 2))
    return lam


def tpfa_matrix(mesh: PolyMesh, lam, dirichlet_boundary: bool = True) -> StrengthMatrix:
    """Two-point flux approximation matrix of one fracture mesh.

    Half transmissibilities are ``|e| (n . lam d) / |d|^2`` with ``d``
    from the cell centroid to the edge midpoint, harmonically averaged
    across interior edges.  Trace edges always act as Dirichlet-like
    closures contributing to the diagonal only; outer boundary edges do
    so when ``dirichlet_boundary`` is set, otherwise they are no-flow.
    """
    n = mesh.n_cells
    lam_c = _cell_lambda(lam, mesh.cell_centroids)
    areas = mesh.cell_areas
    if (areas <= 0).any():
        raise DegenerateCell("mesh contains non-positive cell areas")
    centroids = mesh.cell_centroids

    def half_trans(cell, eid, nrm):
        d = mesh.edge_mid[eid] - centroids[cell]
        dd = float(d @ d)
        if dd <= 0.0:
            raise DegenerateCell(
                f"cell {cell}: centroid coincides with edge {eid} midpoint"
            )
        alpha = mesh.edge_len[eid] * float(nrm @ (lam_c[cell] @ d)) / dd
        # Non-convex agglomerates can produce non-positive contributions;
        # clamp so the strength graph stays usable.
        return max(alpha, 1e-12 * mesh.edge_len[eid])

    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    # Outward normals per (cell, position) are needed edge by edge.
    normal_of = {}
    for k in range(n):
        nrm = mesh.cell_outward_normals(k)
        for pos, e in enumerate(mesh.cells[k]):
            normal_of[(k, int(e))] = nrm[pos]
    ec = mesh.edge_cells
    for e in range(mesh.n_edges):
        c0, c1 = ec[e]
        on_trace = mesh.edge_trace[e] >= 0
        if c0 >= 0 and c1 >= 0 and not on_trace:
            a0 = half_trans(int(c0), e, normal_of[(int(c0), e)])
            a1 = half_trans(int(c1), e, normal_of[(int(c1), e)])
            T = a0 * a1 / (a0 + a1)
            rows += [int(c0), int(c1)]
            cols += [int(c1), int(c0)]
            vals += [-T, -T]
            diag[int(c0)] += T
            diag[int(c1)] += T
        else:
            closures = [c for c in (c0, c1) if c >= 0]
            if on_trace or dirichlet_boundary:
                for c in closures:
                    diag[int(c)] += half_trans(int(c), e, normal_of[(int(c), e)])
    rows += list(range(n))
    cols += list(range(n))
    vals += list(diag)
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A.sum_duplicates()
    return StrengthMatrix(A=A)


def cf_split(strength: StrengthMatrix, eps_str: float = 0.25,
             premark_c=()) -> np.ndarray:
    """Coarse/fine labelling by strong negative couplings.

    Repeatedly picks the undecided cell maximizing
    ``#(S_i^T & U) + 2 #(S_i^T & F)`` (ties to the lowest index), marks
    it coarse and its strong dependents fine.  Cells without strong
    couplings in either direction become coarse.  Returns 1 for C, 0
    for F.
    """
    if not 0.0 < eps_str < 1.0:
        raise ValueError("eps_str must lie in (0, 1)")
    n = strength.n
    S = strength.strong_sets(eps_str)
    ST = [set() for _ in range(n)]
    for i in range(n):
        for j in S[i]:
            ST[j].add(i)
    UNDECIDED, FINE, COARSE = -1, 0, 1
    labels = np.full(n, UNDECIDED, np.int8)
    lam = np.array([len(ST[i]) for i in range(n)], float)

    def mark_coarse(i):
        labels[i] = COARSE
        for k in S[i]:
            if labels[k] == UNDECIDED:
                lam[k] -= 1.0
                heapq.heappush(heap, (-lam[k], k))
        for j in sorted(ST[i]):
            if labels[j] == UNDECIDED:
                mark_fine(j)

    def mark_fine(j):
        labels[j] = FINE
        for k in S[j]:
            if labels[k] == UNDECIDED:
                lam[k] += 1.0
                heapq.heappush(heap, (-lam[k], k))

    heap = []
    for i in np.where([len(S[i]) == 0 and len(ST[i]) == 0 for i in range(n)])[0]:
        labels[i] = COARSE
    premark = [int(i) for i in sorted(set(premark_c)) if labels[i] == UNDECIDED]
    for i in premark:
        labels[i] = COARSE
    for i in premark:
        mark_coarse(i)
    for i in sorted(np.where(labels == UNDECIDED)[0]):
        heapq.heappush(heap, (-lam[i], int(i)))
    while heap:
        neg, i = heapq.heappop(heap)
        if labels[i] != UNDECIDED or -neg != lam[i]:
            continue
        mark_coarse(i)
    # Anything untouched (only positive couplings) becomes coarse.
    labels[labels == UNDECIDED] = COARSE
    return labels.astype(int)


def _cell_trace_sides(mesh: PolyMesh):
    """Per-cell set of (trace id, side) labels of its trace edges."""
    out = [set() for _ in range(mesh.n_cells)]
    ec = mesh.edge_cells
    for e in np.where(mesh.edge_trace >= 0)[0]:
        gid = int(mesh.edge_trace[e])
        mid = mesh.edge_mid[e]
        a, b = mesh.edge_nodes[e]
        t = mesh.nodes[b] - mesh.nodes[a]
        for c in ec[e]:
            if c < 0:
                continue
            d = mesh.cell_centroids[int(c)] - mid
            side = 1 if t[0] * d[1] - t[1] * d[0] > 0 else -1
            out[int(c)].add((gid, side))
    return out


def _attach_fine(strength: StrengthMatrix, S, labels, trace_sides) -> np.ndarray:
    """Merge each F cell into a C neighbour without mixing trace sides."""
    n = strength.n
    A = strength.A
    part = np.full(n, -1, int)
    group_sides = {}
    next_id = 0
    for i in np.where(labels == 1)[0]:
        part[i] = next_id
        group_sides[next_id] = set(trace_sides[i])
        next_id += 1

    def conflict(gid_set, add):
        s = gid_set | add
        return any((g, 1) in s and (g, -1) in s for g, _ in s)

    for i in np.where(labels == 0)[0]:
        i = int(i)
        cols = A.indices[A.indptr[i]:A.indptr[i + 1]]
        vals = A.data[A.indptr[i]:A.indptr[i + 1]]
        cand = []
        for j, v in zip(cols, vals):
            j = int(j)
            if j == i or labels[j] != 1 or v >= 0:
                continue
            in_strong = 1 if j in S[i] else 0
            cand.append((-in_strong, v, j))  # strong first, then most negative
        cand.sort()
        placed = False
        for _, _, j in cand:
            g = part[j]
            if conflict(group_sides[g], trace_sides[i]):
                continue
            part[i] = g
            group_sides[g] |= trace_sides[i]
            placed = True
            break
        if not placed:
            part[i] = next_id
            group_sides[next_id] = set(trace_sides[i])
            next_id += 1
    # Renumber by first appearance for determinism.
    remap = {}
    out = np.empty(n, int)
    for i in range(n):
        g = part[i]
        if g not in remap:
            remap[g] = len(remap)
        out[i] = remap[g]
    return out


def _tip_cells(mesh: PolyMesh, tips_local) -> list:
    """Cells sharing an immersed tip node and owning a trace edge."""
    if tips_local is None or len(tips_local) == 0:
        return []
    tips_local = np.atleast_2d(np.asarray(tips_local, float))
    tol = 1e-9 * max(mesh.cell_diameters.max(), 1.0)
    has_trace = np.zeros(mesh.n_cells, bool)
    for k in range(mesh.n_cells):
        es = mesh.cells[k]
        if (mesh.edge_trace[es] >= 0).any():
            has_trace[k] = True
    out = []
    for k in np.where(has_trace)[0]:
        ids = np.unique(mesh.edge_nodes[mesh.cells[k]])
        d = np.linalg.norm(
            mesh.nodes[ids][:, None, :] - tips_local[None, :, :], axis=2
        )
        if d.min() < tol:
            out.append(int(k))
    return out


def _build_coarse_mesh(mesh: PolyMesh, part: np.ndarray) -> PolyMesh:
    """Agglomerate cells; internal edges vanish, hanging nodes remain."""
    ec = mesh.edge_cells
    keep = []
    for e in range(mesh.n_edges):
        c0, c1 = ec[e]
        if c1 < 0 or mesh.edge_trace[e] >= 0 or part[c0] != part[c1]:
            keep.append(e)
    keep = np.asarray(keep, int)
    new_eid = -np.ones(mesh.n_edges, int)
    new_eid[keep] = np.arange(len(keep))
    n_coarse = part.max() + 1
    cell_edges = [[] for _ in range(n_coarse)]
    cell_signs = [[] for _ in range(n_coarse)]
    for k in range(mesh.n_cells):
        g = part[k]
        for e, s in zip(mesh.cells[k], mesh.cell_signs[k]):
            c0, c1 = ec[e]
            other = c1 if c0 == k else c0
            if other >= 0 and part[other] == g and mesh.edge_trace[e] < 0:
                continue
            cell_edges[g].append(int(new_eid[e]))
            cell_signs[g].append(int(s))
    areas = np.zeros(n_coarse)
    centroids = np.zeros((n_coarse, 2))
    np.add.at(areas, part, mesh.cell_areas)
    np.add.at(centroids, part, mesh.cell_areas[:, None] * mesh.cell_centroids)
    centroids /= areas[:, None]

    # Node renumbering restricted to kept edges.
    old_nodes = mesh.edge_nodes[keep]
    used = np.unique(old_nodes)
    nid = -np.ones(mesh.n_nodes, int)
    nid[used] = np.arange(len(used))
    edge_nodes = nid[old_nodes]

    # Try to order each coarse cell's edges into a single boundary loop.
    ordered_edges, ordered_signs, chained = [], [], []
    for g in range(n_coarse):
        es = np.asarray(cell_edges[g], int)
        ss = np.asarray(cell_signs[g], np.int8)
        loop = _chain_loop(edge_nodes, es, ss)
        if loop is None:
            ordered_edges.append(es)
            ordered_signs.append(ss)
            chained.append(False)
        else:
            ordered_edges.append(es[loop])
            ordered_signs.append(ss[loop])
            chained.append(True)
    return PolyMesh(
        mesh.nodes[used], edge_nodes, ordered_edges, ordered_signs,
        frame=mesh.frame,
        edge_trace=mesh.edge_trace[keep],
        edge_trace_elem=mesh.edge_trace_elem[keep],
        edge_trace_side=mesh.edge_trace_side[keep],
        areas=areas, centroids=centroids, chained=np.asarray(chained, bool),
    )


def _chain_loop(edge_nodes, es, ss):
    """Order edges into one closed walk; None if pinched or multi-loop."""
    if len(es) == 0:
        return None
    start = {}
    for pos, (e, s) in enumerate(zip(es, ss)):
        a, b = edge_nodes[e]
        tail = a if s > 0 else b
        if tail in start:
            return None
        start[tail] = pos
    order = [0]
    a, b = edge_nodes[es[0]]
    cur = b if ss[0] > 0 else a
    first = a if ss[0] > 0 else b
    for _ in range(len(es) - 1):
        pos = start.get(int(cur))
        if pos is None or pos in order:
            return None
        order.append(pos)
        a, b = edge_nodes[es[pos]]
        cur = b if ss[pos] > 0 else a
    if int(cur) != int(first) or len(order) != len(es):
        return None
    return np.asarray(order, int)


@dataclass
class CoarsePartition:
    """Composed fine-to-coarse map across all sweeps."""

    cell_to_coarse: np.ndarray
    levels: int

    @property
    def n_coarse(self) -> int:
        return int(self.cell_to_coarse.max()) + 1

    def members(self) -> list:
        out = [[] for _ in range(self.n_coarse)]
        for i, g in enumerate(self.cell_to_coarse):
            out[int(g)].append(i)
        return out


def agglomerate(mesh: PolyMesh, tips_local=None, c_depth: int = 1,
                eps_str: float = 0.25, lam=np.eye(2)):
    """Apply ``c_depth`` coarsening sweeps to a fracture mesh.

    ``tips_local`` holds frame coordinates of trace tips immersed in this
    fracture; the flanking cells are pre-marked coarse on every sweep.
    ``lam`` is a constant 2x2 tensor or a callback
    ``centroids -> (n, 2, 2)`` re-evaluated on each coarse level.
    Returns ``(coarse_mesh, CoarsePartition)``.
    """
    if c_depth < 0:
        raise ValueError("c_depth must be non-negative")
    total = np.arange(mesh.n_cells)
    current = mesh
    for _ in range(c_depth):
        strength = tpfa_matrix(current, lam)
        S = strength.strong_sets(eps_str)
        labels = cf_split(strength, eps_str,
                          premark_c=_tip_cells(current, tips_local))
        part = _attach_fine(strength, S, labels, _cell_trace_sides(current))
        if part.max() + 1 >= current.n_cells:
            break
        current = _build_coarse_mesh(current, part)
        total = part[total]
    return current, CoarsePartition(cell_to_coarse=total, levels=c_depth)
