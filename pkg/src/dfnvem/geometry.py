"""Planar fractures in 3D, local frames, and intersection geometry.

A fracture is a planar simple polygon embedded in 3D carrying an aperture
and a tangential permeability tensor expressed in its local frame.
Fracture pairs meet in line segments (the one-codimensional intersections),
and those segments may meet each other in points (two-codimensional
intersections).  All functions here are pure; fracture pairs can be
processed in parallel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CollinearOverlap,
    CollinearVertices,
    ConfigError,
    CoplanarOverlap,
    GeometryError,
    NonPlanarPolygon,
)

__all__ = [
    "Frame",
    "Fracture",
    "IntersectionLine",
    "IntersectionPoint",
    "FractureNetwork",
    "build_frame",
    "intersect_fractures",
    "intersect_lines",
    "build_network",
    "load_network",
]

_PARALLEL_TOL = 1e-8


# ------------------------------------------------------------------ #
# 2D polygon helpers (shared with the meshing module)
# ------------------------------------------------------------------ #

def polygon_area(pts: np.ndarray) -> float:
    """Signed shoelace area of a 2D polygon (positive if CCW)."""
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def point_in_polygon(p, poly: np.ndarray, tol: float) -> bool:
    """Even-odd test treating the polygon as closed (boundary counts)."""
    if point_on_polygon_boundary(p, poly, tol):
        return True
    inside = False
    x, y = p
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        if (y0 > y) != (y1 > y):
            xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            if xc > x:
                inside = not inside
    return inside


def point_on_polygon_boundary(p, poly: np.ndarray, tol: float) -> bool:
    n = len(poly)
    for i in range(n):
        if point_segment_distance(p, poly[i], poly[(i + 1) % n]) <= tol:
            return True
    return False


def point_segment_distance(p, a, b) -> float:
    p, a, b = np.asarray(p, float), np.asarray(a, float), np.asarray(b, float)
    d = b - a
    L2 = float(d @ d)
    if L2 == 0.0:
        return float(np.linalg.norm(p - a))
    t = np.clip(float((p - a) @ d) / L2, 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * d)))


def segments_cross(a0, a1, b0, b1, tol: float) -> bool:
    """True if the open interiors of two 2D segments cross transversally."""
    a0, a1, b0, b1 = (np.asarray(v, float) for v in (a0, a1, b0, b1))
    d1, d2 = a1 - a0, b1 - b0
    den = d1[0] * d2[1] - d1[1] * d2[0]
    scale = max(np.linalg.norm(d1), np.linalg.norm(d2), 1.0)
    if abs(den) <= _PARALLEL_TOL * scale * scale:
        return False
    r = b0 - a0
    t = (r[0] * d2[1] - r[1] * d2[0]) / den
    u = (r[0] * d1[1] - r[1] * d1[0]) / den
    eps_t = tol / max(np.linalg.norm(d1), tol)
    eps_u = tol / max(np.linalg.norm(d2), tol)
    return eps_t < t < 1 - eps_t and eps_u < u < 1 - eps_u


def polygon_is_simple(pts: np.ndarray, tol: float) -> bool:
    n = len(pts)
    for i in range(n):
        a0, a1 = pts[i], pts[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if segments_cross(a0, a1, pts[j], pts[(j + 1) % n], tol):
                return False
    return True


def clip_line_to_polygon(q0, d2, poly: np.ndarray, tol: float):
    """Parameter intervals of the line ``q0 + t*d2`` inside a 2D polygon.

    Works for non-convex polygons; boundary runs count as inside.
    Returns a list of (t0, t1) with t0 < t1.
    """
    q0 = np.asarray(q0, float)
    d2 = np.asarray(d2, float)
    n = len(poly)
    ts = []
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        e = b - a
        den = d2[0] * e[1] - d2[1] * e[0]
        r = a - q0
        if abs(den) <= _PARALLEL_TOL * max(np.linalg.norm(e), 1.0):
            # Edge parallel to the line: if collinear, its endpoints are
            # crossing parameters.
            if abs(d2[0] * r[1] - d2[1] * r[0]) <= tol:
                for v in (a, b):
                    ts.append(float((v - q0) @ d2) / float(d2 @ d2))
            continue
        t = (r[0] * e[1] - r[1] * e[0]) / den
        u = (r[0] * d2[1] - r[1] * d2[0]) / den
        if -tol <= u * np.linalg.norm(e) <= np.linalg.norm(e) + tol:
            ts.append(t)
    if not ts:
        return []
    ts = sorted(ts)
    merged = [ts[0]]
    for t in ts[1:]:
        if t - merged[-1] > tol:
            merged.append(t)
    intervals = []
    for t0, t1 in zip(merged[:-1], merged[1:]):
        mid = q0 + 0.5 * (t0 + t1) * d2
        if point_in_polygon(mid, poly, tol):
            intervals.append((t0, t1))
    # Fuse adjacent intervals sharing an endpoint.
    fused: list[list[float]] = []
    for t0, t1 in intervals:
        if fused and abs(fused[-1][1] - t0) <= tol:
            fused[-1][1] = t1
        else:
            fused.append([t0, t1])
    return [(lo, hi) for lo, hi in fused]


# ------------------------------------------------------------------ #
# Frames and fractures
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class Frame:
    """Orthonormal right-handed tangent frame of a planar polygon."""

    origin: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    n: np.ndarray

    def to_local(self, pts: np.ndarray) -> np.ndarray:
        """Map 3D points to in-plane (u, v) coordinates."""
        q = np.atleast_2d(pts) - self.origin
        out = np.column_stack([q @ self.t1, q @ self.t2])
        return out[0] if np.ndim(pts) == 1 else out

    def to_global(self, uv: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(uv)
        out = self.origin + np.outer(q[:, 0], self.t1) + np.outer(q[:, 1], self.t2)
        return out[0] if np.ndim(uv) == 1 else out

    def vector_to_global(self, vec2: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(vec2)
        out = np.outer(q[:, 0], self.t1) + np.outer(q[:, 1], self.t2)
        return out[0] if np.ndim(vec2) == 1 else out

    def vector_to_local(self, vec3: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(vec3)
        out = np.column_stack([q @ self.t1, q @ self.t2])
        return out[0] if np.ndim(vec3) == 1 else out

    @property
    def normal_projector(self) -> np.ndarray:
        return np.outer(self.n, self.n)

    @property
    def tangent_projector(self) -> np.ndarray:
        return np.eye(3) - self.normal_projector


def build_frame(vertices: np.ndarray, tol_plane: float | None = None) -> Frame:
    """Best-fit plane frame of a polygon.

    The first tangent is the first nondegenerate edge direction so that
    local 2D coordinates are reproducible across runs; the second tangent
    is ``n x t1``.

    Raises ``CollinearVertices`` or ``NonPlanarPolygon``.
    """
    pts = np.asarray(vertices, float)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 3:
        raise CollinearVertices("need at least 3 three-dimensional points")
    center = pts.mean(axis=0)
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    if tol_plane is None:
        tol_plane = 1e-9 * max(diag, 1e-300)
    u, s, vt = np.linalg.svd(pts - center, full_matrices=False)
    if diag == 0.0 or s[1] <= 1e-12 * s[0]:
        raise CollinearVertices("vertices are collinear")
    n = vt[2]
    # Deterministic sign: largest-magnitude component positive.
    k = int(np.argmax(np.abs(n)))
    if n[k] < 0:
        n = -n
    dev = np.abs((pts - center) @ n)
    if dev.max() > tol_plane:
        raise NonPlanarPolygon(
            f"max deviation {dev.max():.3e} exceeds tolerance {tol_plane:.3e}"
        )
    t1 = None
    for i in range(len(pts)):
        e = pts[(i + 1) % len(pts)] - pts[i]
        e = e - (e @ n) * n
        L = np.linalg.norm(e)
        if L > 1e-12 * diag:
            t1 = e / L
            break
    if t1 is None:
        raise CollinearVertices("no nondegenerate edge")
    t2 = np.cross(n, t1)
    return Frame(origin=pts[0].copy(), t1=t1, t2=t2 / np.linalg.norm(t2), n=n)


@dataclass
class Fracture:
    """Planar polygonal fracture with aperture and tangential permeability.

    ``k_tangential`` is a symmetric positive definite 2x2 tensor expressed
    in the fracture frame; the effective permeability entering the flow
    model is ``aperture * k_tangential``.
    """

    id: int
    vertices: np.ndarray
    aperture: float = 1.0
    k_tangential: np.ndarray = field(default_factory=lambda: np.eye(2))
    frame: Frame = None
    tol: float = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, float)
        self.k_tangential = np.asarray(self.k_tangential, float)
        if self.aperture <= 0.0:
            raise GeometryError(f"fracture {self.id}: aperture must be positive")
        if not np.allclose(self.k_tangential, self.k_tangential.T):
            raise GeometryError(f"fracture {self.id}: permeability not symmetric")
        if np.linalg.eigvalsh(self.k_tangential).min() <= 0.0:
            raise GeometryError(f"fracture {self.id}: permeability not SPD")
        if self.frame is None:
            self.frame = build_frame(self.vertices, self.tol)
        if self.tol is None:
            diag = np.linalg.norm(self.vertices.max(0) - self.vertices.min(0))
            self.tol = 1e-9 * diag
        local = self.frame.to_local(self.vertices)
        if not polygon_is_simple(local, self.tol):
            raise GeometryError(f"fracture {self.id}: polygon is not simple")
        if polygon_area(local) < 0:
            # Store a CCW copy in local coordinates for clipping queries.
            local = local[::-1]
        self.local_polygon = local

    @property
    def effective_permeability(self) -> np.ndarray:
        return self.aperture * self.k_tangential

    def contains(self, p3: np.ndarray, tol: float | None = None) -> bool:
        tol = self.tol if tol is None else tol
        if abs((np.asarray(p3, float) - self.frame.origin) @ self.frame.n) > 10 * tol:
            return False
        return point_in_polygon(self.frame.to_local(p3), self.local_polygon, tol)

    def boundary_distance(self, p3: np.ndarray) -> float:
        q = self.frame.to_local(p3)
        poly = self.local_polygon
        return min(
            point_segment_distance(q, poly[i], poly[(i + 1) % len(poly)])
            for i in range(len(poly))
        )


@dataclass
class IntersectionLine:
    """One-codimensional intersection segment between fractures.

    ``k_hat`` is the tangential permeability of the intersection and
    ``k_tilde`` the normal one; the effective values are
    ``lambda_hat = d_i * d_j * k_hat`` and ``lambda_tilde_m = k_tilde / d_m``
    per parent fracture ``m``.
    """

    id: int
    p0: np.ndarray
    p1: np.ndarray
    parents: tuple
    k_hat: float = 1.0
    k_tilde: float = 1.0
    end_kind: tuple = ("boundary", "boundary")

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, float)
        self.p1 = np.asarray(self.p1, float)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))

    @property
    def direction(self) -> np.ndarray:
        return (self.p1 - self.p0) / self.length

    def point_at(self, t: float) -> np.ndarray:
        return self.p0 + t * self.direction

    def param_of(self, p3: np.ndarray) -> float:
        return float((np.asarray(p3, float) - self.p0) @ self.direction)

    def effective_tangential(self, apertures: dict) -> float:
        d = [apertures[f] for f in self.parents[:2]]
        return d[0] * d[1] * self.k_hat

    def effective_normal(self, aperture: float) -> float:
        return self.k_tilde / aperture


@dataclass
class IntersectionPoint:
    """Two-codimensional meeting point of intersection lines."""

    id: int
    location: np.ndarray
    parent_lines: tuple

    def __post_init__(self):
        self.location = np.asarray(self.location, float)


# ------------------------------------------------------------------ #
# Intersections
# ------------------------------------------------------------------ #

def _coplanar_intersection(a: Fracture, b: Fracture, tol: float):
    """Shared boundary segment of two coplanar fractures, if any.

    Positive-area overlap is rejected: the flow model only supports line
    intersections.
    """
    pa = a.local_polygon
    pb = a.frame.to_local(b.vertices)
    if polygon_area(pb) < 0:
        pb = pb[::-1]
    na, nb = len(pa), len(pb)
    for i in range(na):
        for j in range(nb):
            if segments_cross(pa[i], pa[(i + 1) % na], pb[j], pb[(j + 1) % nb], tol):
                raise CoplanarOverlap(
                    f"fractures {a.id} and {b.id} are coplanar and overlap"
                )
    for q in pb:
        if point_in_polygon(q, pa, tol) and not point_on_polygon_boundary(q, pa, tol):
            raise CoplanarOverlap(
                f"fractures {a.id} and {b.id} are coplanar and overlap"
            )
    for q in pa:
        if point_in_polygon(q, pb, tol) and not point_on_polygon_boundary(q, pb, tol):
            raise CoplanarOverlap(
                f"fractures {a.id} and {b.id} are coplanar and overlap"
            )
    # Collect collinear overlaps of boundary edges.
    pieces = []
    for i in range(na):
        a0, a1 = pa[i], pa[(i + 1) % na]
        da = a1 - a0
        La = np.linalg.norm(da)
        ua = da / La
        for j in range(nb):
            b0, b1 = pb[j], pb[(j + 1) % nb]
            if (
                point_segment_distance(b0, a0 - 2 * La * ua, a1 + 2 * La * ua) > tol
                or point_segment_distance(b1, a0 - 2 * La * ua, a1 + 2 * La * ua) > tol
            ):
                continue
            t0, t1 = sorted([float((b0 - a0) @ ua), float((b1 - a0) @ ua)])
            lo, hi = max(0.0, t0), min(La, t1)
            if hi - lo > tol:
                pieces.append((a0 + lo * ua, a0 + hi * ua))
    if not pieces:
        return None
    ends = np.array([q for seg in pieces for q in seg])
    far = int(np.argmax(np.linalg.norm(ends - ends[0], axis=1)))
    u = ends[far] - ends[0]
    u = u / np.linalg.norm(u)
    ts = (ends - ends[0]) @ u
    perp = ends - ends[0] - np.outer(ts, u)
    if np.linalg.norm(perp, axis=1).max() > 10 * tol:
        raise CoplanarOverlap(
            f"fractures {a.id} and {b.id} share non-collinear boundary pieces"
        )
    q0 = ends[0] + ts.min() * u
    q1 = ends[0] + ts.max() * u
    return a.frame.to_global(q0), a.frame.to_global(q1)


def intersect_fractures(a: Fracture, b: Fracture, tol: float | None = None):
    """Intersection segment of two fractures, clipped to both polygons.

    Returns an ``IntersectionLine`` (id -1, to be assigned by the network
    builder) or ``None`` for disjoint, parallel or point-contact pairs.
    Coplanar pairs sharing a boundary segment are supported; coplanar
    pairs overlapping with positive area raise ``CoplanarOverlap``.
    """
    if tol is None:
        tol = max(a.tol, b.tol)
    na, nb = a.frame.n, b.frame.n
    cross = np.cross(na, nb)
    cn = np.linalg.norm(cross)
    if cn < _PARALLEL_TOL:
        off = abs((b.frame.origin - a.frame.origin) @ na)
        if off > 10 * tol:
            return None
        seg = _coplanar_intersection(a, b, tol)
        if seg is None:
            return None
        p0, p1 = seg
        return IntersectionLine(
            id=-1, p0=p0, p1=p1, parents=(a.id, b.id),
            end_kind=("boundary", "boundary"),
        )
    d = cross / cn
    # Minimal-norm point on both planes.
    A = np.vstack([na, nb])
    rhs = np.array([na @ a.frame.origin, nb @ b.frame.origin])
    p0 = np.linalg.lstsq(A, rhs, rcond=None)[0]

    def clip(frac):
        q0 = frac.frame.to_local(p0)
        d2 = frac.frame.vector_to_local(d)
        nd = np.linalg.norm(d2)
        if nd < _PARALLEL_TOL:
            return []
        # Parameter along d (3D arclength) equals parameter along d2 / |d2|.
        ivs = clip_line_to_polygon(q0, d2 / nd, frac.local_polygon, tol)
        return ivs

    iva = clip(a)
    ivb = clip(b)
    best = None
    for ta0, ta1 in iva:
        for tb0, tb1 in ivb:
            lo, hi = max(ta0, tb0), min(ta1, tb1)
            if hi - lo > tol and (best is None or hi - lo > best[1] - best[0]):
                best = (lo, hi)
    if best is None:
        return None
    p_start, p_end = p0 + best[0] * d, p0 + best[1] * d
    kinds = []
    for p in (p_start, p_end):
        on_b = min(a.boundary_distance(p), b.boundary_distance(p)) <= 10 * tol
        kinds.append("boundary" if on_b else "immersed")
    return IntersectionLine(
        id=-1, p0=p_start, p1=p_end, parents=(a.id, b.id), end_kind=tuple(kinds)
    )


def intersect_lines(a: IntersectionLine, b: IntersectionLine,
                    tol: float = 1e-9):
    """Common interior point of two intersection segments, or ``None``.

    Raises ``CollinearOverlap`` when the segments overlap along a line;
    crossings at segment endpoints are not reported (the model requires
    points interior to each parent line).
    """
    d1 = a.p1 - a.p0
    d2 = b.p1 - b.p0
    L1, L2 = np.linalg.norm(d1), np.linalg.norm(d2)
    r = b.p0 - a.p0
    cr = np.cross(d1 / L1, d2 / L2)
    if np.linalg.norm(cr) < _PARALLEL_TOL:
        if point_segment_distance(b.p0, a.p0, a.p1) < tol or \
                point_segment_distance(b.p1, a.p0, a.p1) < tol:
            u = d1 / L1
            t0, t1 = sorted([float((b.p0 - a.p0) @ u), float((b.p1 - a.p0) @ u)])
            if min(L1, t1) - max(0.0, t0) > tol:
                raise CollinearOverlap(
                    f"intersection lines {a.id} and {b.id} overlap"
                )
        return None
    M = np.array([[d1 @ d1, -(d1 @ d2)], [-(d1 @ d2), d2 @ d2]])
    rhs = np.array([r @ d1, -(r @ d2)])
    s, u = np.linalg.solve(M, rhs)
    pa = a.p0 + s * d1
    pb = b.p0 + u * d2
    if np.linalg.norm(pa - pb) > tol:
        return None
    eps1, eps2 = tol / L1, tol / L2
    if not (eps1 < s < 1 - eps1 and eps2 < u < 1 - eps2):
        return None
    return IntersectionPoint(id=-1, location=0.5 * (pa + pb),
                             parent_lines=(a.id, b.id))


# ------------------------------------------------------------------ #
# Network assembly
# ------------------------------------------------------------------ #

@dataclass
class FractureNetwork:
    """Fractures plus computed intersection lines and points."""

    fractures: list
    lines: list
    points: list
    tol: float

    def fracture(self, fid: int) -> Fracture:
        return self._by_id[fid]

    def __post_init__(self):
        self._by_id = {f.id: f for f in self.fractures}

    def traces_of(self, fid: int) -> list:
        return [ln for ln in self.lines if fid in ln.parents]

    def line(self, gid: int) -> IntersectionLine:
        return self.lines[gid]

    @property
    def bbox_diagonal(self) -> float:
        pts = np.vstack([f.vertices for f in self.fractures])
        return float(np.linalg.norm(pts.max(0) - pts.min(0)))


def _same_segment(a: IntersectionLine, b: IntersectionLine, tol: float) -> bool:
    d00 = np.linalg.norm(a.p0 - b.p0) + np.linalg.norm(a.p1 - b.p1)
    d01 = np.linalg.norm(a.p0 - b.p1) + np.linalg.norm(a.p1 - b.p0)
    return min(d00, d01) < tol


def build_network(fractures: list, tol: float | None = None,
                  intersection_props: dict | None = None) -> FractureNetwork:
    """Compute all fracture intersections and assemble the network.

    Segments produced by different fracture pairs that coincide within
    tolerance are merged into a single line carrying every parent, so
    more than two fractures may meet along one intersection.

    ``intersection_props`` maps a frozenset of parent ids to a dict with
    ``k_hat`` / ``k_tilde`` overriding the unit defaults.
    """
    fractures = sorted(fractures, key=lambda f: f.id)
    if tol is None:
        pts = np.vstack([f.vertices for f in fractures])
        tol = 1e-9 * float(np.linalg.norm(pts.max(0) - pts.min(0)))
    raw = []
    for i, fa in enumerate(fractures):
        for fb in fractures[i + 1:]:
            seg = intersect_fractures(fa, fb, tol)
            if seg is not None:
                raw.append(seg)
    merge_tol = max(tol * 1e3, tol)
    lines: list[IntersectionLine] = []
    for seg in raw:
        for ln in lines:
            if _same_segment(seg, ln, merge_tol):
                ln.parents = tuple(sorted(set(ln.parents) | set(seg.parents)))
                break
        else:
            lines.append(seg)
    for k, ln in enumerate(lines):
        ln.id = k
        props = None
        if intersection_props:
            props = intersection_props.get(frozenset(ln.parents))
            if props is None and len(ln.parents) > 2:
                for key, val in intersection_props.items():
                    if key <= set(ln.parents):
                        props = val
                        break
        if props:
            ln.k_hat = float(props.get("k_hat", ln.k_hat))
            ln.k_tilde = float(props.get("k_tilde", ln.k_tilde))

    points: list[IntersectionPoint] = []
    for i, la in enumerate(lines):
        for lb in lines[i + 1:]:
            pt = intersect_lines(la, lb, merge_tol)
            if pt is None:
                continue
            for known in points:
                if np.linalg.norm(known.location - pt.location) < merge_tol:
                    known.parent_lines = tuple(
                        sorted(set(known.parent_lines) | set(pt.parent_lines))
                    )
                    break
            else:
                points.append(pt)
    for k, pt in enumerate(points):
        pt.id = k
    return FractureNetwork(fractures=fractures, lines=lines, points=points,
                           tol=tol)


def load_network(path) -> tuple:
    """Read a network from the JSON input format.

    Returns ``(network, raw_dict)``; boundary condition selectors in the
    file are interpreted by the assembly module.
    """
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if "fractures" not in data:
        raise ConfigError("network file lacks a 'fractures' array")
    fractures = []
    for spec in data["fractures"]:
        k = spec.get("k_tangential", [1.0, 0.0, 1.0])
        kxx, kxy, kyy = (float(v) for v in k)
        fractures.append(
            Fracture(
                id=int(spec["id"]),
                vertices=np.asarray(spec["vertices"], float),
                aperture=float(spec.get("aperture", 1.0)),
                k_tangential=np.array([[kxx, kxy], [kxy, kyy]]),
            )
        )
    props = {}
    for isec in data.get("intersections", []):
        key = frozenset(int(v) for v in isec["fractures"])
        props[key] = {
            "k_hat": isec.get("k_hat", 1.0),
            "k_tilde": isec.get("k_tilde", 1.0),
        }
    network = build_network(fractures, intersection_props=props)
    return network, data
