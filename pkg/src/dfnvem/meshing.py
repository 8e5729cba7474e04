"""Per-fracture polygonal meshes and the conforming-but-nonmatching glue.

Each fracture is meshed independently in its own 2D frame; intersection
traces enter the triangulation as internal constraint polylines.  Trace
partitions shared by several fractures are then co-refined to the union
of breakpoints, and finally every edge lying on a trace is duplicated
into a plus and a minus side copy so that interface fluxes can jump.

Meshes are edge-based: cells reference edges with a traversal sign, so
hanging nodes and agglomerated (possibly non star-shaped) cells from the
coarsening module are representable without special cases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from .errors import (
    ConstraintConflict,
    EmptyDomain,
    InconsistentEndpoints,
    MeshError,
)
from .geometry import (
    Frame,
    IntersectionLine,
    point_segment_distance,
    polygon_area,
    segments_cross,
)

__all__ = [
    "PolyMesh",
    "TraceMesh",
    "cartesian_mesh",
    "random_mesh",
    "triangulate",
    "trace_draft",
    "corefine",
    "corefine_network",
    "split_interface_dofs",
    "mesh_stats",
    "save_mesh",
    "load_mesh",
]


class PolyMesh:
    """Polygonal tessellation of one fracture in frame coordinates.

    ``cells[k]`` lists edge indices and ``cell_signs[k]`` the traversal
    direction: +1 means edge ``(a, b)`` is walked a->b in the cell's
    counterclockwise boundary, so its outward normal is the right-hand
    side of a->b.  Agglomerated cells may carry an unordered edge set;
    their area and centroid are then supplied explicitly.
    """

    def __init__(self, nodes, edge_nodes, cells, cell_signs, frame=None,
                 edge_trace=None, edge_trace_elem=None, edge_trace_side=None,
                 areas=None, centroids=None, chained=None):
        self.nodes = np.asarray(nodes, float)
        self.edge_nodes = np.asarray(edge_nodes, int)
        self.cells = [np.asarray(c, int) for c in cells]
        self.cell_signs = [np.asarray(s, np.int8) for s in cell_signs]
        self.frame = frame
        ne = len(self.edge_nodes)
        self.edge_trace = (np.full(ne, -1, int) if edge_trace is None
                           else np.asarray(edge_trace, int))
        self.edge_trace_elem = (np.full(ne, -1, int) if edge_trace_elem is None
                                else np.asarray(edge_trace_elem, int))
        self.edge_trace_side = (np.zeros(ne, np.int8) if edge_trace_side is None
                                else np.asarray(edge_trace_side, np.int8))
        self._areas = None if areas is None else np.asarray(areas, float)
        self._centroids = None if centroids is None else np.asarray(centroids, float)
        self.chained = (np.ones(len(self.cells), bool) if chained is None
                        else np.asarray(chained, bool))
        self._cache = {}

    # -------------------------------------------------------------- #
    # construction helpers
    # -------------------------------------------------------------- #

    @classmethod
    def from_cells(cls, nodes, cell_nodes, frame=None):
        """Build from per-cell CCW node loops, deduplicating edges."""
        nodes = np.asarray(nodes, float)
        edge_id = {}
        edge_list = []
        cells, signs = [], []
        for loop in cell_nodes:
            loop = list(loop)
            if polygon_area(nodes[loop]) < 0:
                loop = loop[::-1]
            es, ss = [], []
            for a, b in zip(loop, loop[1:] + loop[:1]):
                key = (a, b) if a < b else (b, a)
                if key not in edge_id:
                    edge_id[key] = len(edge_list)
                    edge_list.append(key)
                es.append(edge_id[key])
                ss.append(1 if (a, b) == key else -1)
            cells.append(es)
            signs.append(ss)
        return cls(nodes, np.array(edge_list, int), cells, signs, frame=frame)

    def copy(self) -> "PolyMesh":
        return PolyMesh(
            self.nodes.copy(), self.edge_nodes.copy(),
            [c.copy() for c in self.cells], [s.copy() for s in self.cell_signs],
            frame=self.frame, edge_trace=self.edge_trace.copy(),
            edge_trace_elem=self.edge_trace_elem.copy(),
            edge_trace_side=self.edge_trace_side.copy(),
            areas=None if self._areas is None else self._areas.copy(),
            centroids=None if self._centroids is None else self._centroids.copy(),
            chained=self.chained.copy(),
        )

    # -------------------------------------------------------------- #
    # cached geometry
    # -------------------------------------------------------------- #

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_edges(self):
        return len(self.edge_nodes)

    @property
    def n_cells(self):
        return len(self.cells)

    def _invalidate(self):
        self._cache.clear()

    @property
    def edge_len(self):
        if "edge_len" not in self._cache:
            d = self.nodes[self.edge_nodes[:, 1]] - self.nodes[self.edge_nodes[:, 0]]
            self._cache["edge_len"] = np.linalg.norm(d, axis=1)
        return self._cache["edge_len"]

    @property
    def edge_mid(self):
        if "edge_mid" not in self._cache:
            self._cache["edge_mid"] = 0.5 * (
                self.nodes[self.edge_nodes[:, 0]] + self.nodes[self.edge_nodes[:, 1]]
            )
        return self._cache["edge_mid"]

    @property
    def edge_cells(self):
        """(E, 2) adjacent cell ids, -1 where absent."""
        if "edge_cells" not in self._cache:
            ec = np.full((self.n_edges, 2), -1, int)
            for k, es in enumerate(self.cells):
                for e in es:
                    if ec[e, 0] < 0:
                        ec[e, 0] = k
                    elif ec[e, 1] < 0:
                        ec[e, 1] = k
                    else:
                        raise MeshError(f"edge {e} bounds more than two cells")
            self._cache["edge_cells"] = ec
        return self._cache["edge_cells"]

    def outward_normal(self, cell: int, pos: int) -> np.ndarray:
        """Unit outward normal of the cell's ``pos``-th edge."""
        e = self.cells[cell][pos]
        a, b = self.edge_nodes[e]
        t = (self.nodes[b] - self.nodes[a]) / self.edge_len[e]
        nrm = np.array([t[1], -t[0]])
        return nrm if self.cell_signs[cell][pos] > 0 else -nrm

    def cell_outward_normals(self, cell: int) -> np.ndarray:
        es = self.cells[cell]
        a = self.edge_nodes[es, 0]
        b = self.edge_nodes[es, 1]
        t = (self.nodes[b] - self.nodes[a]) / self.edge_len[es][:, None]
        nrm = np.column_stack([t[:, 1], -t[:, 0]])
        return nrm * np.asarray(self.cell_signs[cell], float)[:, None]

    def _loop_nodes(self, cell: int):
        es, ss = self.cells[cell], self.cell_signs[cell]
        return [self.edge_nodes[e][0 if s > 0 else 1] for e, s in zip(es, ss)]

    @property
    def cell_areas(self):
        if "areas" not in self._cache:
            if self._areas is not None:
                self._cache["areas"] = self._areas
            else:
                self._cache["areas"] = np.array(
                    [polygon_area(self.nodes[self._loop_nodes(k)])
                     for k in range(self.n_cells)]
                )
        return self._cache["areas"]

    @property
    def cell_centroids(self):
        if "centroids" not in self._cache:
            if self._centroids is not None:
                self._cache["centroids"] = self._centroids
            else:
                cen = np.empty((self.n_cells, 2))
                for k in range(self.n_cells):
                    pts = self.nodes[self._loop_nodes(k)]
                    nxt = np.roll(pts, -1, axis=0)
                    cr = pts[:, 0] * nxt[:, 1] - nxt[:, 0] * pts[:, 1]
                    if abs(cr.sum()) < 1e-300:
                        raise MeshError(f"cell {k} has zero area")
                    cen[k] = ((pts + nxt) * cr[:, None]).sum(axis=0) / (3 * cr.sum())
                self._cache["centroids"] = cen
        return self._cache["centroids"]

    @property
    def cell_diameters(self):
        if "diameters" not in self._cache:
            diam = np.empty(self.n_cells)
            for k in range(self.n_cells):
                ids = np.unique(self.edge_nodes[self.cells[k]])
                pts = self.nodes[ids]
                d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
                diam[k] = np.sqrt(d2.max())
            self._cache["diameters"] = diam
        return self._cache["diameters"]

    @property
    def boundary_edges(self):
        """Outer-boundary edges: one adjacent cell and not on a trace."""
        return np.where((self.edge_cells[:, 1] < 0) & (self.edge_trace < 0))[0]

    def cell_nodes_3d(self, cell: int) -> np.ndarray:
        return self.frame.to_global(self.nodes[self._loop_nodes(cell)])

    # -------------------------------------------------------------- #
    # mutation (used by co-refinement)
    # -------------------------------------------------------------- #

    def split_edge(self, eid: int, points: np.ndarray):
        """Split edge ``eid`` at interior points ordered from node a to b."""
        points = np.atleast_2d(points)
        a, b = self.edge_nodes[eid]
        new_ids = list(range(self.n_nodes, self.n_nodes + len(points)))
        self.nodes = np.vstack([self.nodes, points])
        chain_nodes = [a] + new_ids + [b]
        sub_edges = [eid]
        pairs = list(zip(chain_nodes[:-1], chain_nodes[1:]))
        self.edge_nodes[eid] = pairs[0]
        for pair in pairs[1:]:
            sub_edges.append(len(self.edge_nodes))
            self.edge_nodes = np.vstack([self.edge_nodes, pair])
            for arr_name in ("edge_trace", "edge_trace_elem"):
                arr = getattr(self, arr_name)
                setattr(self, arr_name, np.append(arr, arr[eid]))
            self.edge_trace_side = np.append(self.edge_trace_side,
                                             self.edge_trace_side[eid])
        for k in range(self.n_cells):
            es = self.cells[k]
            hits = np.where(es == eid)[0]
            if len(hits) == 0:
                continue
            pos = int(hits[0])
            sign = int(self.cell_signs[k][pos])
            ins_edges = sub_edges if sign > 0 else sub_edges[::-1]
            self.cells[k] = np.concatenate(
                [es[:pos], ins_edges, es[pos + 1:]]
            ).astype(int)
            self.cell_signs[k] = np.concatenate(
                [self.cell_signs[k][:pos], [sign] * len(ins_edges),
                 self.cell_signs[k][pos + 1:]]
            ).astype(np.int8)
        self._invalidate()
        return sub_edges

    def duplicate_edge(self, eid: int) -> int:
        """Append a copy of ``eid`` (same nodes and tags); returns its id."""
        new_id = self.n_edges
        self.edge_nodes = np.vstack([self.edge_nodes, self.edge_nodes[eid]])
        self.edge_trace = np.append(self.edge_trace, self.edge_trace[eid])
        self.edge_trace_elem = np.append(self.edge_trace_elem,
                                         self.edge_trace_elem[eid])
        self.edge_trace_side = np.append(self.edge_trace_side,
                                         self.edge_trace_side[eid])
        self._invalidate()
        return new_id


# ------------------------------------------------------------------ #
# structured generators (unit square in frame coordinates)
# ------------------------------------------------------------------ #

def cartesian_mesh(n: int, ny: int | None = None, frame: Frame | None = None,
                   bounds=((0.0, 0.0), (1.0, 1.0))) -> PolyMesh:
    """Cartesian grid, by default n x n on the unit square."""
    ny = n if ny is None else ny
    (x0, y0), (x1, y1) = bounds
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return i * (ny + 1) + j

    loops = [
        [nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)]
        for i in range(n) for j in range(ny)
    ]
    return PolyMesh.from_cells(nodes, loops, frame=frame)


def random_mesh(n: int, seed: int, amplitude: float = 0.3,
                frame: Frame | None = None) -> PolyMesh:
    """Cartesian grid with randomly moved internal nodes.

    Each interior node is displaced uniformly within ``amplitude * h``;
    a validity check keeps every quad simple and star-shaped with respect
    to its centroid, resampling offending nodes.
    """
    mesh = cartesian_mesh(n, frame=frame)
    rng = np.random.default_rng(seed)
    h = 1.0 / n
    nodes = mesh.nodes.copy()
    interior = np.where(
        (nodes[:, 0] > 1e-12) & (nodes[:, 0] < 1 - 1e-12)
        & (nodes[:, 1] > 1e-12) & (nodes[:, 1] < 1 - 1e-12)
    )[0]
    base = nodes[interior].copy()
    nodes[interior] = base + rng.uniform(-amplitude * h, amplitude * h,
                                         (len(interior), 2))

    def quad_ok(pts):
        # Simple and star-shaped with respect to the centroid.
        c = pts.mean(axis=0)
        for i in range(4):
            a, b = pts[i], pts[(i + 1) % 4]
            cr = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if cr <= 1e-12:
                return False
        return True

    node_cells = {}
    for k, es in enumerate(mesh.cells):
        for nid_ in np.unique(mesh.edge_nodes[es]):
            node_cells.setdefault(nid_, []).append(k)
    loops = [mesh._loop_nodes(k) for k in range(mesh.n_cells)]
    for _ in range(50):
        bad = set()
        for k, loop in enumerate(loops):
            if not quad_ok(nodes[loop]):
                bad.update(i for i in loop if i in set(interior))
        if not bad:
            break
        for i in sorted(bad):
            j = np.where(interior == i)[0][0]
            nodes[i] = base[j] + rng.uniform(-amplitude * h, amplitude * h, 2)
    else:
        raise MeshError("random mesh validity check failed to converge")
    mesh.nodes = nodes
    mesh._invalidate()
    return mesh


# ------------------------------------------------------------------ #
# constrained triangulation
# ------------------------------------------------------------------ #

def _subdivide(p0, p1, h):
    """Points splitting segment p0-p1 into pieces of length <= h."""
    L = np.linalg.norm(p1 - p0)
    n = max(1, int(np.ceil(L / h - 1e-12)))
    ts = np.linspace(0.0, 1.0, n + 1)
    return p0 + np.outer(ts, p1 - p0)


def _points_in_polygon(pts: np.ndarray, poly: np.ndarray, tol: float):
    """Vectorized even-odd test; ``tol > 0`` includes a boundary band."""
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), bool)
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        cond = (y0 > y) != (y1 > y)
        if y1 != y0:
            xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            inside ^= cond & (xc > x)
    if tol > 0:
        segs = [(poly[i], poly[(i + 1) % n]) for i in range(n)]
        inside |= _points_segments_mindist(pts, segs) <= tol
    return inside


def _points_segments_mindist(pts: np.ndarray, segs) -> np.ndarray:
    pts = np.atleast_2d(pts)
    best = np.full(len(pts), np.inf)
    for a, b in segs:
        a = np.asarray(a, float)
        d = np.asarray(b, float) - a
        L2 = float(d @ d)
        if L2 == 0.0:
            dist = np.linalg.norm(pts - a, axis=1)
        else:
            t = np.clip((pts - a) @ d / L2, 0.0, 1.0)
            dist = np.linalg.norm(pts - a - t[:, None] * d, axis=1)
        best = np.minimum(best, dist)
    return best


class _PointPool:
    """Deduplicating point registry for the PSLG."""

    def __init__(self, tol):
        self.tol = tol
        self.pts = []
        self.tags = []  # list of dicts: {"boundary": True, "trace": {gid: t}}

    def add(self, p, kind=None, gid=None, t=None):
        p = np.asarray(p, float)
        for i, q in enumerate(self.pts):
            if np.linalg.norm(q - p) <= self.tol:
                break
        else:
            self.pts.append(p)
            self.tags.append({"boundary": False, "trace": {}})
            i = len(self.pts) - 1
        if kind == "boundary":
            self.tags[i]["boundary"] = True
        elif kind == "trace":
            self.tags[i]["trace"][gid] = t
        return i


def triangulate(polygon: np.ndarray, traces=None, h_target: float = 0.1,
                tol: float | None = None, frame: Frame | None = None,
                jitter: float = 0.15, seed: int = 1234) -> PolyMesh:
    """Constrained Delaunay triangulation of a polygon with trace segments.

    ``polygon`` is the CCW boundary in frame coordinates and ``traces`` a
    list of ``(gid, p0, p1)`` constraint segments (frame coordinates).
    All constraints are subdivided to ``h_target`` and recovered exactly:
    every trace is covered by a chain of mesh edges tagged with its id.
    Interior points come from a lightly jittered hexagonal lattice, so
    the result is deterministic but unstructured.
    """
    polygon = np.asarray(polygon, float)
    if traces is None:
        traces = []
    area = polygon_area(polygon)
    if area < 0:
        polygon = polygon[::-1]
        area = -area
    if area <= 1e-300:
        raise EmptyDomain("polygon has no area")
    if h_target <= 0:
        raise EmptyDomain("h_target must be positive")
    diag = np.linalg.norm(polygon.max(0) - polygon.min(0))
    if tol is None:
        tol = 1e-9 * diag

    # Split traces at mutual crossing points so constraints never cross.
    pieces = []  # (gid, q0, q1)
    for gid, p0, p1 in traces:
        p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
        cuts = [0.0, 1.0]
        for gid2, q0, q1 in traces:
            if gid2 == gid:
                continue
            q0, q1 = np.asarray(q0, float), np.asarray(q1, float)
            d1, d2 = p1 - p0, q1 - q0
            den = d1[0] * d2[1] - d1[1] * d2[0]
            if abs(den) < 1e-14:
                continue
            r = q0 - p0
            s = (r[0] * d2[1] - r[1] * d2[0]) / den
            u = (r[0] * d1[1] - r[1] * d1[0]) / den
            if -1e-12 <= s <= 1 + 1e-12 and -1e-12 <= u <= 1 + 1e-12:
                cuts.append(float(np.clip(s, 0, 1)))
        for s0, s1 in zip(sorted(set(cuts))[:-1], sorted(set(cuts))[1:]):
            if s1 - s0 > tol:
                pieces.append((gid, p0 + s0 * (p1 - p0), p0 + s1 * (p1 - p0)))

    # Conflict detection: non-touching constraints closer than tol.
    def seg_distance(a0, a1, b0, b1):
        return min(
            point_segment_distance(a0, b0, b1),
            point_segment_distance(a1, b0, b1),
            point_segment_distance(b0, a0, a1),
            point_segment_distance(b1, a0, a1),
        )

    for i, (g1, a0, a1) in enumerate(pieces):
        for g2, b0, b1 in pieces[i + 1:]:
            if g1 == g2:
                continue
            d = seg_distance(a0, a1, b0, b1)
            if tol < d < 100 * tol and not segments_cross(a0, a1, b0, b1, tol):
                raise ConstraintConflict(
                    f"traces {g1} and {g2} are {d:.3e} apart without meeting"
                )

    pool = _PointPool(max(tol, 1e-12 * diag))
    nbv = len(polygon)
    # Hard vertices: polygon corners and trace piece endpoints.  Any
    # constraint segment passing through one (a trace ending mid-edge on
    # the boundary, a T-junction between traces) is split there first so
    # consecutive constraint points are always Delaunay-connectable.
    hard = [polygon[i] for i in range(nbv)]
    for _, q0, q1 in pieces:
        hard.extend((q0, q1))

    def forced_subdivide(a, b):
        d = b - a
        L = np.linalg.norm(d)
        u = d / L
        cuts = [0.0, L]
        for p in hard:
            t = float((p - a) @ u)
            if tol < t < L - tol and point_segment_distance(p, a, b) <= tol:
                cuts.append(t)
        cuts = sorted(set(cuts))
        out = [a]
        for t0, t1 in zip(cuts[:-1], cuts[1:]):
            seg = _subdivide(a + t0 * u, a + t1 * u, h_target)
            out.extend(seg[1:])
        return out

    chains = []  # lists of point ids that must appear as edges
    for i in range(nbv):
        seg = forced_subdivide(polygon[i], polygon[(i + 1) % nbv])
        ids = [pool.add(p, "boundary") for p in seg]
        chains.append(ids)
    # Record trace parameters along each full trace for later tagging.
    trace_geom = {gid: (np.asarray(p0, float), np.asarray(p1, float))
                  for gid, p0, p1 in traces}
    for gid, q0, q1 in pieces:
        seg = forced_subdivide(q0, q1)
        p0, p1 = trace_geom[gid]
        u = (p1 - p0) / np.linalg.norm(p1 - p0)
        ids = [pool.add(p, "trace", gid, float((p - p0) @ u)) for p in seg]
        chains.append(ids)

    # Hexagonal interior lattice with deterministic jitter.
    rng = np.random.default_rng(seed)
    s = h_target
    lo, hi = polygon.min(0), polygon.max(0)
    rows = np.arange(lo[1] - s, hi[1] + s, s * np.sqrt(3) / 2)
    cand = []
    for j, y in enumerate(rows):
        off = 0.5 * s if j % 2 else 0.0
        xs = np.arange(lo[0] - s + off, hi[0] + s, s)
        cand.append(np.column_stack([xs, np.full(len(xs), y)]))
    cand = np.vstack(cand) if cand else np.zeros((0, 2))
    if len(cand):
        cand = cand + rng.uniform(-jitter * s, jitter * s, cand.shape)
    constraint_segs = [(polygon[i], polygon[(i + 1) % nbv]) for i in range(nbv)]
    constraint_segs += [(q0, q1) for _, q0, q1 in pieces]
    if len(cand):
        ok = _points_in_polygon(cand, polygon, 0.0)
        ok &= _points_segments_mindist(cand, constraint_segs) >= 0.5 * s
        for p in cand[ok]:
            # Lattice points are well separated; skip dedup.
            pool.pts.append(p)
            pool.tags.append({"boundary": False, "trace": {}})

    # Delaunay with constraint-edge recovery by midpoint insertion.  Four
    # distant padding points keep every real point off the convex hull,
    # which prevents zero-area slivers between collinear boundary points.
    center = 0.5 * (lo + hi)
    pad = np.array([center + 10 * diag * np.array(d)
                    for d in ((-1, -1), (1, -1), (1, 1), (-1, 1))])
    for _ in range(12):
        pts = np.asarray(pool.pts)
        if len(pts) < 3:
            raise EmptyDomain("not enough points to triangulate")
        tri = Delaunay(np.vstack([pts, pad]))
        n_real = len(pts)
        edge_set = set()
        for simplex in tri.simplices:
            for a, b in ((0, 1), (1, 2), (2, 0)):
                i, j = simplex[a], simplex[b]
                edge_set.add((min(i, j), max(i, j)))
        missing = []
        new_chains = []
        for chain in chains:
            new_chain = [chain[0]]
            for a, b in zip(chain[:-1], chain[1:]):
                if (min(a, b), max(a, b)) not in edge_set:
                    missing.append((a, b))
                    mid = 0.5 * (pts[a] + pts[b])
                    tag_a = pool.tags[a]
                    mid_id = pool.add(mid)
                    # Propagate shared tags so the midpoint stays a
                    # constraint vertex.
                    tag_b = pool.tags[b]
                    if tag_a["boundary"] and tag_b["boundary"]:
                        pool.tags[mid_id]["boundary"] = True
                    for gid in set(tag_a["trace"]) & set(tag_b["trace"]):
                        pool.tags[mid_id]["trace"][gid] = 0.5 * (
                            tag_a["trace"][gid] + tag_b["trace"][gid]
                        )
                    new_chain.extend([mid_id, b])
                else:
                    new_chain.append(b)
            new_chains.append(new_chain)
        chains = new_chains
        if not missing:
            break
    else:
        raise MeshError("constraint recovery did not converge")

    # Keep real triangles inside the polygon; after recovery constraints
    # are unions of Delaunay edges, so the centroid test is sufficient.
    real = tri.simplices[(tri.simplices < n_real).all(axis=1)]
    all_pts = np.vstack([pts, pad])
    centers = all_pts[real].mean(axis=1)
    inside = _points_in_polygon(centers, polygon, tol)
    keep_tris = [s for s, ok in zip(real, inside) if ok]
    if not keep_tris:
        raise EmptyDomain("no triangles inside the polygon")
    used = np.unique(np.concatenate(keep_tris))
    renum = -np.ones(len(pts), int)
    renum[used] = np.arange(len(used))
    loops = []
    for simplex in keep_tris:
        p = pts[simplex]
        cross = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - \
                (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0])
        if cross < 0:
            simplex = simplex[::-1]
        loops.append(renum[simplex])
    mesh = PolyMesh.from_cells(pts[used], loops, frame=frame)

    # Tag trace edges from constraint vertex parameters.
    node_trace = {}
    for old in used:
        if renum[old] < 0:
            continue
        for gid, t in pool.tags[old]["trace"].items():
            node_trace.setdefault(gid, []).append((t, renum[old]))
    edge_lookup = {}
    for e, (a, b) in enumerate(mesh.edge_nodes):
        edge_lookup[(min(a, b), max(a, b))] = e
    for gid, items in node_trace.items():
        items.sort()
        for (t0, a), (t1, b) in zip(items[:-1], items[1:]):
            e = edge_lookup.get((min(a, b), max(a, b)))
            if e is None:
                raise MeshError(f"trace {gid} not covered by mesh edges")
            mesh.edge_trace[e] = gid
    mesh._invalidate()
    return mesh


def triangulate_fracture(fracture, lines, h_target, **kw) -> PolyMesh:
    """Triangulate a fracture honoring its intersection traces."""
    poly = fracture.local_polygon
    traces = []
    for ln in lines:
        q0 = fracture.frame.to_local(ln.p0)
        q1 = fracture.frame.to_local(ln.p1)
        traces.append((ln.id, q0, q1))
    return triangulate(poly, traces, h_target, frame=fracture.frame, **kw)


# ------------------------------------------------------------------ #
# trace co-refinement
# ------------------------------------------------------------------ #

@dataclass
class TraceMesh:
    """Shared 1D partition of one intersection line.

    ``edges[fid]`` maps each 1D element to the single covering mesh edge
    of that fracture (before side splitting); ``side_edges[(fid, side)]``
    holds the per-side copies afterwards.  ``xi_breaks`` lists forced
    breakpoints at two-codimensional intersection points.
    """

    gamma: int
    line: IntersectionLine
    breakpoints: np.ndarray
    edges: dict = field(default_factory=dict)
    side_edges: dict = field(default_factory=dict)
    xi_breaks: list = field(default_factory=list)

    @property
    def n_elems(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def elem_len(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def elem_mid(self) -> np.ndarray:
        return 0.5 * (self.breakpoints[:-1] + self.breakpoints[1:])

    def elem_mid_3d(self) -> np.ndarray:
        return self.line.p0 + np.outer(self.elem_mid, self.line.direction)


def trace_draft(mesh: PolyMesh, line: IntersectionLine) -> np.ndarray:
    """Breakpoint parameters of the mesh's partition of one trace."""
    eids = np.where(mesh.edge_trace == line.id)[0]
    if len(eids) == 0:
        raise InconsistentEndpoints(
            f"mesh has no edges on trace {line.id}"
        )
    nodes = np.unique(mesh.edge_nodes[eids])
    pts3 = mesh.frame.to_global(mesh.nodes[nodes])
    ts = np.sort([line.param_of(p) for p in np.atleast_2d(pts3)])
    return np.asarray(ts, float)


def corefine(drafts: list, length: float, tol: float) -> np.ndarray:
    """Union of parents' breakpoints merged within tolerance.

    Every draft must span ``[0, length]``; duplicates are resolved toward
    the smaller coordinate.  Raises ``InconsistentEndpoints`` when the
    parents disagree on the segment endpoints.
    """
    for ts in drafts:
        if abs(ts[0]) > tol or abs(ts[-1] - length) > tol:
            raise InconsistentEndpoints(
                f"trace draft spans [{ts[0]:.3e}, {ts[-1]:.3e}], "
                f"expected [0, {length:.3e}]"
            )
    allts = np.sort(np.concatenate([np.asarray(d, float) for d in drafts]))
    merged = [allts[0]]
    for t in allts[1:]:
        if t - merged[-1] > tol:
            merged.append(t)
    merged[0], merged[-1] = 0.0, length
    return np.asarray(merged)


def _apply_breakpoints(mesh: PolyMesh, line: IntersectionLine,
                       breaks: np.ndarray, tol: float):
    """Split the mesh's trace edges so they match the union partition."""
    eids = list(np.where(mesh.edge_trace == line.id)[0])
    for e in eids:
        a, b = mesh.edge_nodes[e]
        ta = line.param_of(mesh.frame.to_global(mesh.nodes[a]))
        tb = line.param_of(mesh.frame.to_global(mesh.nodes[b]))
        lo, hi = min(ta, tb), max(ta, tb)
        inner = breaks[(breaks > lo + tol) & (breaks < hi - tol)]
        if len(inner) == 0:
            continue
        if tb < ta:
            inner = inner[::-1]
        pts3 = line.p0 + np.outer(inner, line.direction)
        mesh.split_edge(e, mesh.frame.to_local(pts3))
    # Assign element indices from edge midpoints.
    eids = np.where(mesh.edge_trace == line.id)[0]
    mids3 = mesh.frame.to_global(mesh.edge_mid[eids])
    tm = np.array([line.param_of(p) for p in np.atleast_2d(mids3)])
    elems = np.searchsorted(breaks, tm) - 1
    if len(np.unique(elems)) != len(breaks) - 1 or len(eids) != len(breaks) - 1:
        raise MeshError(
            f"trace {line.id}: partition mismatch after corefinement"
        )
    mesh.edge_trace_elem[eids] = elems


def corefine_network(meshes: dict, network) -> dict:
    """Co-refine every trace across its parent fractures.

    Returns a ``TraceMesh`` per intersection line; the per-fracture meshes
    are modified in place (edge splits only).  Intersection points are
    forced into every partition.
    """
    tol = max(network.tol, 1e-12)
    out = {}
    for ln in network.lines:
        parents = [f for f in ln.parents if f in meshes]
        drafts = [trace_draft(meshes[f], ln) for f in parents]
        breaks = corefine(drafts, ln.length, 100 * tol)
        for pt in network.points:
            if ln.id in pt.parent_lines:
                t = ln.param_of(pt.location)
                if np.min(np.abs(breaks - t)) > 100 * tol:
                    breaks = np.sort(np.append(breaks, t))
        tm = TraceMesh(gamma=ln.id, line=ln, breakpoints=breaks)
        for pt in network.points:
            if ln.id in pt.parent_lines:
                t = ln.param_of(pt.location)
                idx = int(np.argmin(np.abs(breaks - t)))
                tm.xi_breaks.append((idx, pt.id))
        for f in parents:
            _apply_breakpoints(meshes[f], ln, breaks, 100 * tol)
            eids = np.where(meshes[f].edge_trace == ln.id)[0]
            order = np.argsort(meshes[f].edge_trace_elem[eids])
            tm.edges[f] = eids[order]
        out[ln.id] = tm
    return out


def split_interface_dofs(mesh: PolyMesh, trace_meshes: dict, fid: int,
                         tol: float = 1e-12) -> PolyMesh:
    """Duplicate every trace edge into a plus and a minus side copy.

    Side labels come from the sign of ``(cell centroid - trace point) .
    (n x t)`` evaluated in 3D, which is deterministic and frame
    independent.  Edges where the trace runs along the fracture boundary
    keep a single copy on their only side.  Tip nodes are shared, never
    duplicated.
    """
    mesh = mesh.copy()
    for tm in trace_meshes.values():
        if fid not in tm.edges:
            continue
        line = tm.line
        side_vec = np.cross(mesh.frame.n, line.direction)
        plus = np.full(tm.n_elems, -1, int)
        minus = np.full(tm.n_elems, -1, int)
        for elem, e in enumerate(tm.edges[fid]):
            e = int(e)
            cells = [int(c) for c in mesh.edge_cells[e] if c >= 0]
            mid3 = mesh.frame.to_global(mesh.edge_mid[e])

            def side_of(cell):
                c3 = mesh.frame.to_global(mesh.cell_centroids[cell])
                return 1 if (c3 - mid3) @ side_vec > 0 else -1

            if len(cells) == 2:
                s0, s1 = side_of(cells[0]), side_of(cells[1])
                if s0 == s1:
                    raise MeshError(
                        f"trace {line.id}: cells on the same side of edge {e}"
                    )
                dup = mesh.duplicate_edge(e)
                # Rewire the second cell to the copy.
                k = cells[1]
                es = mesh.cells[k]
                es[np.where(es == e)[0][0]] = dup
                mesh._invalidate()
                first, second = (e, dup)
                mesh.edge_trace_side[first] = s0
                mesh.edge_trace_side[second] = s1
                if s0 > 0:
                    plus[elem], minus[elem] = first, second
                else:
                    plus[elem], minus[elem] = second, first
            elif len(cells) == 1:
                s0 = side_of(cells[0])
                mesh.edge_trace_side[e] = s0
                if s0 > 0:
                    plus[elem] = e
                else:
                    minus[elem] = e
            else:
                raise MeshError(f"trace edge {e} has no adjacent cell")
        if (plus >= 0).any():
            tm.side_edges[(fid, 1)] = plus
        if (minus >= 0).any():
            tm.side_edges[(fid, -1)] = minus
    return mesh


# ------------------------------------------------------------------ #
# statistics and text IO
# ------------------------------------------------------------------ #

def _star_shaped(mesh: PolyMesh, cell: int) -> bool:
    if not mesh.chained[cell]:
        return False
    pts = mesh.nodes[mesh._loop_nodes(cell)]
    c = mesh.cell_centroids[cell]
    nxt = np.roll(pts, -1, axis=0)
    cross = (nxt[:, 0] - pts[:, 0]) * (c[1] - pts[:, 1]) - \
            (nxt[:, 1] - pts[:, 1]) * (c[0] - pts[:, 0])
    return bool((cross > -1e-12 * mesh.cell_diameters[cell] ** 2).all())


def mesh_stats(mesh: PolyMesh) -> dict:
    """Cell/edge counts, diameter statistics and edges-per-cell range."""
    epc = np.array([len(c) for c in mesh.cells])
    return {
        "n_cells": mesh.n_cells,
        "n_edges": mesh.n_edges,
        "n_nodes": mesh.n_nodes,
        "h_max": float(mesh.cell_diameters.max()),
        "h_avg": float(mesh.cell_diameters.mean()),
        "edges_per_cell_min": int(epc.min()),
        "edges_per_cell_avg": float(epc.mean()),
        "edges_per_cell_max": int(epc.max()),
        "n_non_star": int(sum(not _star_shaped(mesh, k)
                              for k in range(mesh.n_cells))),
    }


def save_mesh(mesh: PolyMesh, path) -> None:
    """Minimal text format: node, edge and signed-cell tables."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# dfnvem mesh 1\n")
        fh.write(f"nodes {mesh.n_nodes}\n")
        for x, y in mesh.nodes:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        fh.write(f"edges {mesh.n_edges}\n")
        for e in range(mesh.n_edges):
            a, b = mesh.edge_nodes[e]
            fh.write(f"{a} {b} {mesh.edge_trace[e]} "
                     f"{mesh.edge_trace_elem[e]} {mesh.edge_trace_side[e]}\n")
        fh.write(f"cells {mesh.n_cells}\n")
        for es, ss in zip(mesh.cells, mesh.cell_signs):
            signed = [int(s) * (int(e) + 1) for e, s in zip(es, ss)]
            fh.write(" ".join(str(v) for v in signed) + "\n")


def load_mesh(path, frame: Frame | None = None) -> PolyMesh:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("# dfnvem mesh"):
            raise MeshError(f"{path}: not a dfnvem mesh file")
        tag, n = fh.readline().split()
        assert tag == "nodes"
        nodes = np.array([[float(v) for v in fh.readline().split()]
                          for _ in range(int(n))])
        tag, n = fh.readline().split()
        assert tag == "edges"
        rows = [[int(v) for v in fh.readline().split()] for _ in range(int(n))]
        rows = np.asarray(rows, int)
        tag, n = fh.readline().split()
        assert tag == "cells"
        cells, signs = [], []
        for _ in range(int(n)):
            signed = [int(v) for v in fh.readline().split()]
            cells.append([abs(v) - 1 for v in signed])
            signs.append([1 if v > 0 else -1 for v in signed])
    return PolyMesh(nodes, rows[:, :2], cells, signs, frame=frame,
                    edge_trace=rows[:, 2], edge_trace_elem=rows[:, 3],
                    edge_trace_side=rows[:, 4])
