"""Polygonal boundaries, triangulation, point location, mesh deformation,
quality, remeshing, containment, and the Hausdorff metric.

Meshes are straight-edged conforming triangulations.  The generator builds a
Delaunay triangulation over boundary points, optional internal constraint
rings, and a hexagonal interior lattice; constraint segments are protected by
a point-free margin (so they appear as Delaunay edges) with an explicit
channel-retriangulation recovery pass as a fallback.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.spatial import Delaunay

from . import kernels


class InvalidShapeError(ValueError):
    """Raised for degenerate or self-intersecting boundary input."""


class MeshQualityError(RuntimeError):
    """Raised when no generator variant meets the angle/edge targets."""


# ---------------------------------------------------------------------------
# polylines


@dataclasses.dataclass
class Polyline:
    points: np.ndarray
    closed: bool = True

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise InvalidShapeError("polyline points must have shape (n, 2)")
        if len(self.points) < (3 if self.closed else 2):
            raise InvalidShapeError("polyline has too few points")

    @property
    def n(self) -> int:
        return len(self.points)

    def segments(self):
        """(starts, ends) arrays; closed polylines wrap around."""
        p = self.points
        if self.closed:
            return p, np.roll(p, -1, axis=0)
        return p[:-1], p[1:]

    def segment_lengths(self) -> np.ndarray:
        a, b = self.segments()
        return np.linalg.norm(b - a, axis=1)

    def perimeter(self) -> float:
        return float(self.segment_lengths().sum())

    def signed_area(self) -> float:
        if not self.closed:
            return 0.0
        x, y = self.points[:, 0], self.points[:, 1]
        return float(0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def ensure_ccw(self) -> "Polyline":
        if self.closed and self.signed_area() < 0:
            return Polyline(self.points[::-1].copy(), closed=True)
        return self

    def is_simple(self) -> bool:
        """True when no two non-adjacent segments intersect and no segment
        is degenerate."""
        a, b = self.segments()
        if np.any(np.linalg.norm(b - a, axis=1) == 0.0):
            return False
        n = len(a)
        if n < 3:
            return True
        # visit the upper-triangular pair set in row blocks so the temporary
        # index arrays stay bounded for large boundaries
        block = max(1, 2_000_000 // n)
        for i0 in range(0, n, block):
            i1 = min(i0 + block, n)
            i = np.repeat(np.arange(i0, i1), n)
            j = np.tile(np.arange(n), i1 - i0)
            keep = j > i
            # adjacent segments share an endpoint and may touch there
            adjacent = (j - i == 1)
            if self.closed:
                adjacent |= (i == 0) & (j == n - 1)
            keep &= ~adjacent
            i, j = i[keep], j[keep]
            if len(i) and _segments_intersect(a[i], b[i], a[j], b[j]).any():
                return False
        return True

    def validate_closed_simple(self):
        if not self.closed:
            raise InvalidShapeError("boundary polyline must be closed")
        if np.any(np.linalg.norm(np.roll(self.points, -1, axis=0)
                                 - self.points, axis=1) == 0.0):
            raise InvalidShapeError("consecutive duplicate points")
        if abs(self.signed_area()) == 0.0:
            raise InvalidShapeError("zero enclosed area")
        if not self.is_simple():
            raise InvalidShapeError("self-intersecting boundary")

    def resample(self, spacing: float) -> "Polyline":
        """Arclength-uniform resampling of a closed polyline, keeping the
        first vertex as anchor."""
        if not self.closed:
            raise InvalidShapeError("resample expects a closed polyline")
        p = np.vstack([self.points, self.points[:1]])
        seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        total = cum[-1]
        n_new = max(3, int(round(total / spacing)))
        if n_new > 20000:
            raise InvalidShapeError(
                f"resampling to {n_new} points exceeds the supported "
                "boundary size; perimeter/spacing ratio is implausible")
        targets = total * np.arange(n_new) / n_new
        x = np.interp(targets, cum, p[:, 0])
        y = np.interp(targets, cum, p[:, 1])
        return Polyline(np.column_stack([x, y]), closed=True)

    def bbox(self):
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return lo, hi


def _cross(o, a, b):
    return ((a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1])
            - (a[..., 1] - o[..., 1]) * (b[..., 0] - o[..., 0]))


def _segments_intersect(p1, p2, q1, q2):
    """Vectorized proper-or-touching intersection test for segment pairs."""
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    proper = ((d1 > 0) != (d2 > 0)) & ((d3 > 0) != (d4 > 0)) \
        & (d1 != 0) & (d2 != 0) & (d3 != 0) & (d4 != 0)
    touch = np.zeros_like(proper)
    for d, a, b, c in ((d1, q1, q2, p1), (d2, q1, q2, p2),
                       (d3, p1, p2, q1), (d4, p1, p2, q2)):
        on = (d == 0) & _on_segment(a, b, c)
        touch |= on
    return proper | touch


def _on_segment(a, b, c):
    return ((np.minimum(a[..., 0], b[..., 0]) <= c[..., 0])
            & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0]))
            & (np.minimum(a[..., 1], b[..., 1]) <= c[..., 1])
            & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1])))


def points_in_polygon(pts, poly_points):
    """Even-odd crossing test, vectorized over query points."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    x = pts[:, 0][:, None]
    y = pts[:, 1][:, None]
    x1 = poly_points[:, 0][None, :]
    y1 = poly_points[:, 1][None, :]
    x2 = np.roll(poly_points[:, 0], -1)[None, :]
    y2 = np.roll(poly_points[:, 1], -1)[None, :]
    cond = (y1 <= y) != (y2 <= y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xin = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
    crossing = cond & (x < xin)
    return (crossing.sum(axis=1) % 2) == 1


def point_segment_distance(pts, seg_a, seg_b):
    """Distances from each point to each segment, shape (n_pts, n_segs)."""
    pts = np.atleast_2d(pts)
    ab = seg_b - seg_a
    L2 = np.einsum("sc,sc->s", ab, ab)
    L2safe = np.where(L2 > 0, L2, 1.0)
    ap = pts[:, None, :] - seg_a[None, :, :]
    u = np.einsum("psc,sc->ps", ap, ab) / L2safe
    u = np.clip(np.where(L2 > 0, u, 0.0), 0.0, 1.0)
    q = ap - u[:, :, None] * ab[None, :, :]
    return np.sqrt(np.einsum("psc,psc->ps", q, q))


# ---------------------------------------------------------------------------
# shape specifications


@dataclasses.dataclass(frozen=True)
class ShapeSpec:
    """Circle, ellipse, or explicit polyline region boundary."""

    kind: str
    center: tuple = (0.0, 0.0)
    radius: float = 0.0
    semi_axis_x: float = 0.0
    semi_axis_y: float = 0.0
    polyline: Polyline | None = None

    @staticmethod
    def circle(cx: float, cy: float, r: float) -> "ShapeSpec":
        if r <= 0:
            raise InvalidShapeError("circle radius must be positive")
        return ShapeSpec("circle", center=(cx, cy), radius=r)

    @staticmethod
    def ellipse(cx: float, cy: float, a: float, b: float) -> "ShapeSpec":
        if a <= 0 or b <= 0:
            raise InvalidShapeError("ellipse semi-axes must be positive")
        return ShapeSpec("ellipse", center=(cx, cy), semi_axis_x=a,
                         semi_axis_y=b)

    @staticmethod
    def from_polyline(poly: Polyline) -> "ShapeSpec":
        poly.validate_closed_simple()
        return ShapeSpec("polyline", polyline=poly)

    def perimeter(self) -> float:
        if self.kind == "circle":
            return 2.0 * math.pi * self.radius
        if self.kind == "ellipse":
            return Polyline(self.sample_boundary(4096).points).perimeter()
        return self.polyline.perimeter()

    def sample_boundary(self, n: int) -> Polyline:
        cx, cy = self.center
        if self.kind == "circle":
            t = 2.0 * math.pi * np.arange(n) / n
            pts = np.column_stack([cx + self.radius * np.cos(t),
                                   cy + self.radius * np.sin(t)])
            return Polyline(pts, closed=True)
        if self.kind == "ellipse":
            t = 2.0 * math.pi * np.arange(n) / n
            pts = np.column_stack([cx + self.semi_axis_x * np.cos(t),
                                   cy + self.semi_axis_y * np.sin(t)])
            return Polyline(pts, closed=True)
        if self.kind == "polyline":
            total = self.polyline.perimeter()
            return self.polyline.resample(total / n)
        raise InvalidShapeError(f"unknown shape kind {self.kind!r}")

    def contains(self, pts) -> np.ndarray:
        """Strict interior test for an array of points."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        cx, cy = self.center
        dx = pts[:, 0] - cx
        dy = pts[:, 1] - cy
        if self.kind == "circle":
            return dx * dx + dy * dy < self.radius ** 2
        if self.kind == "ellipse":
            return ((dx / self.semi_axis_x) ** 2
                    + (dy / self.semi_axis_y) ** 2) < 1.0
        return points_in_polygon(pts, self.polyline.points)


def discretize_boundary(spec: ShapeSpec, h: float) -> Polyline:
    """Sample a shape boundary at roughly spacing h (uniform parameter for
    analytic curves, uniform arclength for polylines)."""
    if h <= 0:
        raise InvalidShapeError("spacing h must be positive")
    if spec.kind == "circle" and spec.radius <= 0:
        raise InvalidShapeError("degenerate circle")
    if spec.kind == "ellipse" and (spec.semi_axis_x <= 0
                                   or spec.semi_axis_y <= 0):
        raise InvalidShapeError("degenerate ellipse")
    n = max(3, int(round(spec.perimeter() / h)))
    return spec.sample_boundary(n)


# ---------------------------------------------------------------------------
# mesh


@dataclasses.dataclass
class QualityReport:
    min_angle_deg: float
    min_area: float
    max_edge: float
    max_edge_ratio: float
    n_triangles: int


class Mesh:
    """Conforming triangulation with labeled boundary edges.

    vertices: (nv, 2) float; triangles: (nt, 3) int, counterclockwise;
    boundary_edges: (nb, 2) int; boundary_labels: (nb,) int.
    """

    def __init__(self, vertices, triangles, boundary_edges, boundary_labels,
                 h_target):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.boundary_edges = np.ascontiguousarray(boundary_edges,
                                                   dtype=np.int64)
        self.boundary_labels = np.ascontiguousarray(boundary_labels,
                                                    dtype=np.int64)
        self.h_target = float(h_target)
        self._cache = {}

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def tri_coords(self):
        return self.vertices[self.triangles]

    def signed_areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            t = self.tri_coords()
            e1 = t[:, 1] - t[:, 0]
            e2 = t[:, 2] - t[:, 0]
            self._cache["areas"] = 0.5 * (e1[:, 0] * e2[:, 1]
                                          - e1[:, 1] * e2[:, 0])
        return self._cache["areas"]

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (min, max) pairs, ordered
        lexicographically."""
        if "edges" not in self._cache:
            t = self.triangles
            pairs = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            pairs.sort(axis=1)
            self._cache["edges"] = np.unique(pairs, axis=0)
        return self._cache["edges"]

    def edge_lookup(self, pairs: np.ndarray) -> np.ndarray:
        """Indices into self.edges for given (any-order) vertex pairs."""
        e = self.edges
        key = e[:, 0] * self.n_vertices + e[:, 1]
        p = np.sort(np.asarray(pairs), axis=1)
        want = p[:, 0] * self.n_vertices + p[:, 1]
        idx = np.searchsorted(key, want)
        if np.any(idx >= len(key)) or np.any(key[np.minimum(idx, len(key) - 1)]
                                             != want):
            raise KeyError("pair is not a mesh edge")
        return idx

    def diameter(self) -> float:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def _locate_arrays(self):
        if "locate" in self._cache:
            return self._cache["locate"]
        t = self.tri_coords()
        v0 = np.ascontiguousarray(t[:, 0])
        e1 = np.ascontiguousarray(t[:, 1] - t[:, 0])
        e2 = np.ascontiguousarray(t[:, 2] - t[:, 0])
        areas2 = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        # distance scale per barycentric unit: 2*area / opposite edge length
        L0 = np.linalg.norm(t[:, 2] - t[:, 1], axis=1)  # edge opposite v0
        L1 = np.linalg.norm(t[:, 2] - t[:, 0], axis=1)
        L2 = np.linalg.norm(t[:, 1] - t[:, 0], axis=1)
        with np.errstate(divide="ignore"):
            lamscale = np.column_stack([areas2 / L0, areas2 / L1,
                                        areas2 / L2])
        lamscale[~np.isfinite(lamscale)] = 0.0

        diam = self.diameter()
        snap = 1e-8 * diam
        lo = self.vertices.min(axis=0) - 1e-9 * diam
        hi = self.vertices.max(axis=0) + 1e-9 * diam
        mean_size = math.sqrt(max(np.median(areas2) * 0.5, 1e-300))
        cell = max(1.5 * mean_size, 1e-12)
        ngx = max(1, int(math.ceil((hi[0] - lo[0]) / cell)))
        ngy = max(1, int(math.ceil((hi[1] - lo[1]) / cell)))
        inv_cx = ngx / (hi[0] - lo[0])
        inv_cy = ngy / (hi[1] - lo[1])

        pad = snap + 1e-12 * diam
        bmin = t.min(axis=1) - pad
        bmax = t.max(axis=1) + pad
        cx0 = np.clip(np.floor((bmin[:, 0] - lo[0]) * inv_cx), 0,
                      ngx - 1).astype(np.int64)
        cx1 = np.clip(np.floor((bmax[:, 0] - lo[0]) * inv_cx), 0,
                      ngx - 1).astype(np.int64)
        cy0 = np.clip(np.floor((bmin[:, 1] - lo[1]) * inv_cy), 0,
                      ngy - 1).astype(np.int64)
        cy1 = np.clip(np.floor((bmax[:, 1] - lo[1]) * inv_cy), 0,
                      ngy - 1).astype(np.int64)
        counts = (cx1 - cx0 + 1) * (cy1 - cy0 + 1)
        tri_ids = np.repeat(np.arange(self.n_triangles, dtype=np.int64),
                            counts)
        cell_ids = np.empty(int(counts.sum()), dtype=np.int64)
        pos = 0
        for ti in range(self.n_triangles):
            xs = np.arange(cx0[ti], cx1[ti] + 1)
            ys = np.arange(cy0[ti], cy1[ti] + 1)
            block = (ys[:, None] * ngx + xs[None, :]).ravel()
            cell_ids[pos:pos + len(block)] = block
            pos += len(block)
        order = np.lexsort((tri_ids, cell_ids))
        cell_ids = cell_ids[order]
        tri_ids = tri_ids[order]
        cell_ptr = np.zeros(ngx * ngy + 1, dtype=np.int64)
        np.add.at(cell_ptr, cell_ids + 1, 1)
        cell_ptr = np.cumsum(cell_ptr)

        arrays = dict(v0=v0, e1=e1, e2=e2, lamscale=lamscale,
                      x0=float(lo[0]), y0=float(lo[1]),
                      inv_cx=float(inv_cx), inv_cy=float(inv_cy),
                      ngx=ngx, ngy=ngy, cell_ptr=cell_ptr,
                      cell_items=np.ascontiguousarray(tri_ids),
                      snap=snap)
        self._cache["locate"] = arrays
        return arrays

    def boundary_loop(self) -> np.ndarray:
        """Vertex indices of the (single) boundary loop in traversal order."""
        if "loop" in self._cache:
            return self._cache["loop"]
        nxt = {}
        # orient each boundary edge so the domain lies on its left
        tri_of = self.boundary_triangles()
        for k, (i, j) in enumerate(self.boundary_edges):
            a, b, c = self.triangles[tri_of[k]]
            ordered = (a, b, c, a)
            forward = None
            for s in range(3):
                if ordered[s] == i and ordered[s + 1] == j:
                    forward = (i, j)
                    break
                if ordered[s] == j and ordered[s + 1] == i:
                    forward = (j, i)
                    break
            if forward is None:
                raise InvalidShapeError("boundary edge not in its triangle")
            nxt[forward[0]] = forward[1]
        if len(nxt) != len(self.boundary_edges):
            raise InvalidShapeError("boundary is not a single loop")
        start = self.boundary_edges[0, 0]
        loop = [start]
        cur = nxt[start]
        while cur != start:
            loop.append(cur)
            cur = nxt[cur]
            if len(loop) > len(nxt):
                raise InvalidShapeError("boundary loop does not close")
        if len(loop) != len(nxt):
            raise InvalidShapeError("multiple boundary loops present")
        self._cache["loop"] = np.asarray(loop, dtype=np.int64)
        return self._cache["loop"]

    def boundary_polyline(self) -> Polyline:
        return Polyline(self.vertices[self.boundary_loop()].copy(),
                        closed=True)

    def boundary_triangles(self) -> np.ndarray:
        """For each boundary edge, the index of its unique adjacent
        triangle."""
        if "btris" in self._cache:
            return self._cache["btris"]
        t = self.triangles
        pairs = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        pairs.sort(axis=1)
        owner = np.tile(np.arange(self.n_triangles), 3)
        key = pairs[:, 0] * self.n_vertices + pairs[:, 1]
        order = np.argsort(key, kind="stable")
        key = key[order]
        owner = owner[order]
        be = np.sort(self.boundary_edges, axis=1)
        want = be[:, 0] * self.n_vertices + be[:, 1]
        idx = np.searchsorted(key, want)
        if np.any(key[np.minimum(idx, len(key) - 1)] != want):
            raise InvalidShapeError("boundary edge missing from triangles")
        self._cache["btris"] = owner[idx]
        return self._cache["btris"]

    def validate(self):
        if np.any(self.signed_areas() <= 0):
            raise InvalidShapeError("non-positive triangle area")
        t = self.triangles
        pairs = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        pairs.sort(axis=1)
        uniq, counts = np.unique(pairs, axis=0, return_counts=True)
        if counts.max(initial=0) > 2:
            raise InvalidShapeError("edge shared by more than two triangles")
        bmask = counts == 1
        be = np.sort(self.boundary_edges, axis=1)
        be_sorted = be[np.lexsort((be[:, 1], be[:, 0]))]
        if not np.array_equal(uniq[bmask], be_sorted):
            raise InvalidShapeError("boundary edge list inconsistent")
        self.boundary_loop()


def locate_many(mesh: Mesh, pts: np.ndarray):
    """Locate many points; returns (elems, lams) with elem −1 for Outside."""
    arr = mesh._locate_arrays()
    pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=np.float64)
    return kernels.locate_many(
        pts, arr["v0"], arr["e1"], arr["e2"], arr["lamscale"],
        arr["x0"], arr["y0"], arr["inv_cx"], arr["inv_cy"],
        arr["ngx"], arr["ngy"], arr["cell_ptr"], arr["cell_items"],
        1e-10, arr["snap"])


def locate_point(mesh: Mesh, x):
    """Single-point location: (element, barycentrics) or None if outside."""
    elems, lams = locate_many(mesh, np.asarray(x, dtype=np.float64)[None, :])
    if elems[0] < 0:
        return None
    return int(elems[0]), lams[0]


def boundary_normals(mesh: Mesh) -> np.ndarray:
    """Outward unit normal per boundary edge."""
    v = mesh.vertices
    be = mesh.boundary_edges
    tang = v[be[:, 1]] - v[be[:, 0]]
    n = np.column_stack([tang[:, 1], -tang[:, 0]])
    n /= np.linalg.norm(n, axis=1)[:, None]
    mid = 0.5 * (v[be[:, 0]] + v[be[:, 1]])
    cent = mesh.tri_coords()[mesh.boundary_triangles()].mean(axis=1)
    flip = np.einsum("ec,ec->e", n, mid - cent) < 0
    n[flip] *= -1.0
    return n


def deform_mesh(mesh: Mesh, displacement: np.ndarray, step: float) -> Mesh:
    """Move vertices to x + step*theta(x); connectivity is kept and validity
    is not guaranteed (callers check quality)."""
    displacement = np.asarray(displacement, dtype=np.float64)
    if displacement.shape != mesh.vertices.shape:
        raise ValueError("displacement must be a per-vertex 2D field")
    return Mesh(mesh.vertices + step * displacement, mesh.triangles,
                mesh.boundary_edges, mesh.boundary_labels, mesh.h_target)


def mesh_quality(mesh: Mesh) -> QualityReport:
    t = mesh.tri_coords()
    d0 = t[:, 1] - t[:, 0]
    d1 = t[:, 2] - t[:, 1]
    d2 = t[:, 0] - t[:, 2]
    L0 = np.linalg.norm(d0, axis=1)
    L1 = np.linalg.norm(d1, axis=1)
    L2 = np.linalg.norm(d2, axis=1)

    def angle(u, v, lu, lv):
        c = -np.einsum("tc,tc->t", u, v) / (lu * lv)
        return np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))

    a0 = angle(d2, d0, L2, L0)
    a1 = angle(d0, d1, L0, L1)
    a2 = angle(d1, d2, L1, L2)
    max_edge = float(max(L0.max(), L1.max(), L2.max()))
    return QualityReport(
        min_angle_deg=float(np.minimum(np.minimum(a0, a1), a2).min()),
        min_area=float(mesh.signed_areas().min()),
        max_edge=max_edge,
        max_edge_ratio=max_edge / mesh.h_target,
        n_triangles=mesh.n_triangles,
    )


# ---------------------------------------------------------------------------
# triangulation


# (lattice offset fractions, margin factor, smoothing rounds) variants tried
# in order until the quality targets hold
_GEN_VARIANTS = (
    ((0.0, 0.0), 0.56, 3),
    ((0.31, 0.17), 0.56, 3),
    ((0.0, 0.0), 0.62, 3),
    ((0.5, 0.25), 0.56, 4),
    ((0.13, 0.41), 0.50, 4),
    ((0.0, 0.0), 0.68, 2),
)


def triangulate(boundary: Polyline, h: float,
                internal: Polyline | None = None) -> Mesh:
    """Triangulate the region enclosed by a closed simple polyline.

    All boundary segments appear as boundary edges of the mesh; when an
    internal constraint ring is given, its segments appear as interior mesh
    edges.  Quality targets: min angle >= 20 degrees, max edge <= 1.5h.
    """
    boundary.validate_closed_simple()
    outer = boundary.ensure_ccw()
    if h <= 0:
        raise InvalidShapeError("h must be positive")
    lo, hi = boundary.bbox()
    if (hi[0] - lo[0]) * (hi[1] - lo[1]) / (h * h) > 4e6:
        raise MeshQualityError(
            "domain extent implies more elements than the generator "
            "supports; refusing to build the interior lattice")

    last_fail = None
    for offsets, margin_f, rounds in _GEN_VARIANTS:
        try:
            mesh = _triangulate_once(outer, h, internal, offsets, margin_f,
                                     rounds)
        except (InvalidShapeError, _RecoveryError) as exc:
            last_fail = str(exc)
            continue
        q = mesh_quality(mesh)
        if q.min_angle_deg >= 20.0 and q.max_edge <= 1.5 * h + 1e-12:
            return mesh
        last_fail = (f"min_angle={q.min_angle_deg:.2f}, "
                     f"max_edge_ratio={q.max_edge_ratio:.3f}")
    raise MeshQualityError(
        f"no generator variant met quality targets (last: {last_fail})")


class _RecoveryError(RuntimeError):
    pass


def _triangulate_once(outer, h, internal, offsets, margin_f, rounds):
    ring = outer.points
    n_outer = len(ring)
    pts = [ring]
    seg_i = list(range(n_outer))
    seg_j = [(k + 1) % n_outer for k in range(n_outer)]

    n_fixed = n_outer
    if internal is not None:
        ipts = internal.points
        # map internal points onto coincident existing points where present
        idx_map = []
        extra = []
        for p in ipts:
            d = np.linalg.norm(ring - p, axis=1)
            k = int(np.argmin(d))
            if d[k] <= 1e-12:
                idx_map.append(k)
            else:
                idx_map.append(n_fixed + len(extra))
                extra.append(p)
        if extra:
            pts.append(np.asarray(extra))
        n_int = len(ipts)
        limit = n_int if internal.closed else n_int - 1
        for k in range(limit):
            a = idx_map[k]
            b = idx_map[(k + 1) % n_int]
            seg_i.append(a)
            seg_j.append(b)
        n_fixed += len(extra)

    fixed = np.vstack(pts)
    seg_a = fixed[np.asarray(seg_i)]
    seg_b = fixed[np.asarray(seg_j)]
    seg_len = np.linalg.norm(seg_b - seg_a, axis=1)

    lattice = _hex_lattice(outer, h, offsets)
    if len(lattice):
        inside = points_in_polygon(lattice, ring)
        lattice = lattice[inside]
    lattice = _filter_margin(lattice, seg_a, seg_b, seg_len, h, margin_f)

    points = np.vstack([fixed, lattice]) if len(lattice) else fixed

    # Laplacian smoothing relaxes the cleared band around constraints;
    # points that crowd a constraint segment or leave the domain are dropped
    for _ in range(rounds):
        if len(points) <= n_fixed:
            break
        tri = Delaunay(points)
        indptr, indices = tri.vertex_neighbor_vertices
        moved = points.copy()
        for v in range(n_fixed, len(points)):
            nb = indices[indptr[v]:indptr[v + 1]]
            if len(nb):
                moved[v] = points[nb].mean(axis=0)
        free = moved[n_fixed:]
        keep = points_in_polygon(free, ring)
        free = free[keep]
        if len(free):
            d = point_segment_distance(free, seg_a, seg_b).min(axis=1)
            free = free[d >= 0.45 * h]
        points = np.vstack([fixed, free]) if len(free) else fixed

    tri = Delaunay(points)
    triangles = [tuple(int(v) for v in s) for s in tri.simplices]
    constraints = list(zip(seg_i, seg_j))
    triangles = _recover_constraints(points, triangles, constraints)

    tarr = np.asarray(triangles, dtype=np.int64)
    cent = points[tarr].mean(axis=1)
    keep = points_in_polygon(cent, ring)
    tarr = tarr[keep]
    if len(tarr) == 0:
        raise InvalidShapeError("empty triangulation")

    # enforce counterclockwise orientation
    t = points[tarr]
    a2 = ((t[:, 1, 0] - t[:, 0, 0]) * (t[:, 2, 1] - t[:, 0, 1])
          - (t[:, 1, 1] - t[:, 0, 1]) * (t[:, 2, 0] - t[:, 0, 0]))
    sw = a2 < 0
    tarr[sw] = tarr[sw][:, [0, 2, 1]]

    # drop unused vertices, renumber
    used = np.unique(tarr)
    remap = -np.ones(len(points), dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = points[used]
    tarr = remap[tarr]

    pairs = np.vstack([tarr[:, [0, 1]], tarr[:, [1, 2]], tarr[:, [2, 0]]])
    pairs.sort(axis=1)
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    bedges = uniq[counts == 1]

    want = np.sort(np.column_stack([remap[np.asarray(seg_i[:n_outer])],
                                    remap[np.asarray(seg_j[:n_outer])]]),
                   axis=1)
    have = set(map(tuple, bedges))
    if set(map(tuple, want)) != have:
        raise InvalidShapeError("boundary segments not preserved")
    if len(seg_i) > n_outer:
        all_edges = set(map(tuple, uniq))
        inner_pairs = np.sort(np.column_stack(
            [remap[np.asarray(seg_i[n_outer:])],
             remap[np.asarray(seg_j[n_outer:])]]), axis=1)
        if not all(tuple(p) in all_edges for p in inner_pairs):
            raise InvalidShapeError("internal constraint segments lost")

    mesh = Mesh(verts, tarr, bedges, np.ones(len(bedges), dtype=np.int64), h)
    mesh.validate()
    return mesh


def _hex_lattice(outer, h, offsets):
    lo, hi = outer.bbox()
    dy = h * math.sqrt(3.0) / 2.0
    ox = offsets[0] * h
    oy = offsets[1] * h
    ys = np.arange(lo[1] - h + oy, hi[1] + h, dy)
    rows = []
    for r, y in enumerate(ys):
        shift = 0.5 * h if (r % 2) else 0.0
        xs = np.arange(lo[0] - h + ox + shift, hi[0] + h, h)
        rows.append(np.column_stack([xs, np.full(len(xs), y)]))
    return np.vstack(rows) if rows else np.zeros((0, 2))


def _filter_margin(lattice, seg_a, seg_b, seg_len, h, margin_f):
    if len(lattice) == 0:
        return np.zeros((0, 2))
    d = point_segment_distance(lattice, seg_a, seg_b)
    margin = np.maximum(margin_f * h, 0.5 * seg_len + 0.06 * h)
    return lattice[(d >= margin[None, :]).all(axis=1)]


def _recover_constraints(points, triangles, constraints):
    edge_set = set()
    for t in triangles:
        for u, v in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            edge_set.add((min(u, v), max(u, v)))
    missing = [(a, b) for a, b in constraints
               if (min(a, b), max(a, b)) not in edge_set]
    for a, b in missing:
        triangles = _insert_segment(points, triangles, a, b)
    return triangles


def _insert_segment(points, triangles, a, b):
    """Force segment (a, b) into the triangulation by removing the channel
    of triangles it crosses and ear-clipping the two side polygons."""
    pa, pb = points[a], points[b]

    def orient(i):
        return (pb[0] - pa[0]) * (points[i][1] - pa[1]) \
            - (pb[1] - pa[1]) * (points[i][0] - pa[0])

    incident = [t for t in triangles if a in t]
    current = None
    cross_edge = None
    for t in incident:
        others = [v for v in t if v != a]
        o1, o2 = orient(others[0]), orient(others[1])
        if o1 == 0.0 or o2 == 0.0:
            raise _RecoveryError("constraint passes through a vertex")
        if (o1 > 0) != (o2 > 0):
            # the far edge straddles the constraint line; confirm the segment
            # actually enters this triangle
            q1, q2 = points[others[0]], points[others[1]]
            if _segments_intersect(pa[None], pb[None], q1[None],
                                   q2[None])[0]:
                current = t
                cross_edge = (others[0], others[1])
                break
    if current is None:
        raise _RecoveryError("no starting triangle for constraint")

    channel = [current]
    left, right = [], []
    for u in cross_edge:
        (left if orient(u) > 0 else right).append(u)

    edge_map = {}
    for ti, t in enumerate(triangles):
        for u, v in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            edge_map.setdefault((min(u, v), max(u, v)), []).append(ti)

    guard = 0
    while True:
        guard += 1
        if guard > len(triangles):
            raise _RecoveryError("channel walk did not terminate")
        key = (min(cross_edge), max(cross_edge))
        owners = edge_map.get(key, [])
        nxt = None
        for ti in owners:
            if triangles[ti] != channel[-1] and triangles[ti] not in channel:
                nxt = triangles[ti]
        if nxt is None:
            # crossing edge owned only by the current triangle: walk along
            # owners that are the current one
            cand = [triangles[ti] for ti in owners
                    if triangles[ti] not in channel]
            if not cand:
                raise _RecoveryError("channel walk left the triangulation")
            nxt = cand[0]
        channel.append(nxt)
        if b in nxt:
            break
        others = [v for v in nxt if v not in cross_edge]
        w = others[0]
        ow = orient(w)
        if ow == 0.0:
            raise _RecoveryError("constraint passes through a vertex")
        u_left = cross_edge[0] if orient(cross_edge[0]) > 0 else cross_edge[1]
        u_right = cross_edge[1] if u_left == cross_edge[0] else cross_edge[0]
        if ow > 0:
            left.append(w)
            cross_edge = (w, u_right)
        else:
            right.append(w)
            cross_edge = (u_left, w)

    new_tris = [t for t in triangles if t not in channel]
    for chain, flip in ((left, False), (right, True)):
        poly = [a] + chain + [b]
        if flip:
            poly = poly[::-1]
        new_tris.extend(_ear_clip(points, poly))
    return new_tris


def _ear_clip(points, poly):
    """Triangulate a simple polygon given by vertex indices (either
    orientation); returns a list of index triples."""
    idx = list(poly)
    area = 0.0
    for k in range(len(idx)):
        p, q = points[idx[k]], points[idx[(k + 1) % len(idx)]]
        area += p[0] * q[1] - q[0] * p[1]
    if area < 0:
        idx = idx[::-1]
    out = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10000:
            raise _RecoveryError("ear clipping failed")
        n = len(idx)
        best = None
        best_cross = -np.inf
        for k in range(n):
            i0, i1, i2 = idx[(k - 1) % n], idx[k], idx[(k + 1) % n]
            p0, p1, p2 = points[i0], points[i1], points[i2]
            cr = (p1[0] - p0[0]) * (p2[1] - p0[1]) \
                - (p1[1] - p0[1]) * (p2[0] - p0[0])
            if cr <= 0:
                continue
            tri = np.array([p0, p1, p2])
            ok = True
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                if _point_in_triangle(points[j], tri):
                    ok = False
                    break
            if ok and cr > best_cross:
                best_cross = cr
                best = k
        if best is None:
            raise _RecoveryError("no ear found")
        i0 = idx[(best - 1) % len(idx)]
        i1 = idx[best]
        i2 = idx[(best + 1) % len(idx)]
        out.append((i0, i1, i2))
        del idx[best]
    out.append((idx[0], idx[1], idx[2]))
    return out


def _point_in_triangle(p, tri):
    d1 = (tri[1, 0] - tri[0, 0]) * (p[1] - tri[0, 1]) \
        - (tri[1, 1] - tri[0, 1]) * (p[0] - tri[0, 0])
    d2 = (tri[2, 0] - tri[1, 0]) * (p[1] - tri[1, 1]) \
        - (tri[2, 1] - tri[1, 1]) * (p[0] - tri[1, 0])
    d3 = (tri[0, 0] - tri[2, 0]) * (p[1] - tri[2, 1]) \
        - (tri[0, 1] - tri[2, 1]) * (p[0] - tri[2, 0])
    neg = (d1 < 0) or (d2 < 0) or (d3 < 0)
    pos = (d1 > 0) or (d2 > 0) or (d3 > 0)
    return not (neg and pos)


def remesh(boundary: Polyline, h: float,
           internal: Polyline | None = None) -> Mesh:
    """Re-sample the boundary to spacing h and triangulate afresh."""
    boundary.validate_closed_simple()
    resampled = boundary.resample(h)
    resampled.validate_closed_simple()
    return triangulate(resampled, h, internal=internal)


# ---------------------------------------------------------------------------
# containment and distance


def contains_region(outer: Polyline, inner: ShapeSpec,
                    n_samples: int = 256) -> bool:
    """True iff n_samples points on the inner boundary all lie strictly
    inside the outer polyline (even-odd test)."""
    samples = inner.sample_boundary(n_samples).points
    return bool(points_in_polygon(samples, outer.points).all())


def region_clearance(outer: Polyline, inner: ShapeSpec,
                     n_samples: int = 256) -> float:
    """Minimum distance from inner-boundary samples to the outer polyline."""
    samples = inner.sample_boundary(n_samples).points
    a, b = outer.segments()
    return float(point_segment_distance(samples, a, b).min(axis=1).min())


def _curve_samples(poly: Polyline, delta: float) -> np.ndarray:
    a, b = poly.segments()
    lens = np.linalg.norm(b - a, axis=1)
    pieces = [poly.points]
    for s in range(len(a)):
        k = int(math.ceil(lens[s] / delta))
        if k > 1:
            t = np.arange(1, k) / k
            pieces.append(a[s] + t[:, None] * (b[s] - a[s]))
    return np.vstack(pieces)


def hausdorff_distance(A: Polyline, B: Polyline) -> float:
    """Hausdorff distance between two polyline curves.

    Point-to-curve distances are exact (segment projection); the supremum
    side is sampled densely along each curve, so the result is exact up to a
    sampling resolution well below typical mesh scales.
    """
    loA, hiA = A.bbox()
    loB, hiB = B.bbox()
    scale = max(hiA[0] - loA[0], hiA[1] - loA[1],
                hiB[0] - loB[0], hiB[1] - loB[1], 1e-12)
    delta = 5e-4 * scale
    pa = _curve_samples(A, delta)
    pb = _curve_samples(B, delta)
    a1, a2 = A.segments()
    b1, b2 = B.segments()
    d_ab = kernels.hausdorff_dir(np.ascontiguousarray(pa),
                                 np.ascontiguousarray(b1),
                                 np.ascontiguousarray(b2))
    d_ba = kernels.hausdorff_dir(np.ascontiguousarray(pb),
                                 np.ascontiguousarray(a1),
                                 np.ascontiguousarray(a2))
    d = max(float(d_ab), float(d_ba))
    # identical curves should report exactly zero; projection arithmetic
    # leaves a few ulps of residue otherwise
    return 0.0 if d < 1e-13 * scale else d


# ---------------------------------------------------------------------------
# file formats


def save_mesh_text(mesh: Mesh, path):
    lines = [f"{mesh.n_vertices} {mesh.n_triangles} "
             f"{len(mesh.boundary_edges)}"]
    for x, y in mesh.vertices:
        lines.append(f"{x:.17g} {y:.17g}")
    for i, j, k in mesh.triangles:
        lines.append(f"{i} {j} {k}")
    for (i, j), lab in zip(mesh.boundary_edges, mesh.boundary_labels):
        lines.append(f"{i} {j} {lab}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh_text(path, h_target: float | None = None) -> Mesh:
    with open(path) as fh:
        tokens = fh.read().split()
    nv, nt, nb = int(tokens[0]), int(tokens[1]), int(tokens[2])
    pos = 3
    verts = np.array(tokens[pos:pos + 2 * nv], dtype=np.float64)
    verts = verts.reshape(nv, 2)
    pos += 2 * nv
    tris = np.array(tokens[pos:pos + 3 * nt], dtype=np.int64).reshape(nt, 3)
    pos += 3 * nt
    braw = np.array(tokens[pos:pos + 3 * nb], dtype=np.int64).reshape(nb, 3)
    if h_target is None:
        # fall back to the median boundary-edge length
        seg = np.linalg.norm(verts[braw[:, 1]] - verts[braw[:, 0]], axis=1)
        h_target = float(np.median(seg)) if nb else 1.0
    return Mesh(verts, tris, braw[:, :2], braw[:, 2], h_target)


def save_polyline_csv(poly: Polyline, path):
    lines = ["x,y"]
    for x, y in poly.points:
        lines.append(f"{x:.17g},{y:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_polyline_csv(path, closed: bool = True) -> Polyline:
    pts = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.lower().startswith("x"):
                continue
            a, b = line.split(",")
            pts.append((float(a), float(b)))
    return Polyline(np.asarray(pts, dtype=np.float64), closed=closed)
