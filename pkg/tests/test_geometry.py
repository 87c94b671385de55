import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsshape import geometry as g


def unit_square_boundary(nseg):
    s = np.arange(nseg) / nseg
    pts = np.concatenate([
        np.column_stack([s, np.zeros(nseg)]),
        np.column_stack([np.ones(nseg), s]),
        np.column_stack([1.0 - s, np.ones(nseg)]),
        np.column_stack([np.zeros(nseg), 1.0 - s]),
    ])
    return g.Polyline(pts)


@pytest.fixture(scope="module")
def disk_mesh():
    poly = g.discretize_boundary(g.ShapeSpec.circle(0, 0, 1), 0.1)
    return g.triangulate(poly, 0.1)


# ---------------------------------------------------------------------------
# discretization


def test_circle_four_point_discretization():
    poly = g.discretize_boundary(g.ShapeSpec.circle(0, 0, 1), math.pi / 2)
    assert poly.n == 4
    radii = np.linalg.norm(poly.points, axis=1)
    assert np.allclose(radii, 1.0, atol=1e-14)


@pytest.mark.parametrize("spec", [
    g.ShapeSpec.circle(0.5, -0.25, 1.7),
    g.ShapeSpec.ellipse(0, 0, 2, 3),
    g.ShapeSpec.from_polyline(unit_square_boundary(4)),
])
def test_discretization_spacing_band(spec):
    h = 0.1
    poly = g.discretize_boundary(spec, h)
    lens = poly.segment_lengths()
    assert lens.min() >= 0.5 * h
    assert lens.max() <= 1.5 * h


def test_degenerate_shapes_rejected():
    with pytest.raises(g.InvalidShapeError):
        g.ShapeSpec.circle(0, 0, 0.0)
    with pytest.raises(g.InvalidShapeError):
        g.ShapeSpec.circle(0, 0, -1.0)
    with pytest.raises(g.InvalidShapeError):
        g.ShapeSpec.ellipse(0, 0, 1.0, 0.0)
    with pytest.raises(g.InvalidShapeError):
        g.discretize_boundary(g.ShapeSpec.circle(0, 0, 1), -0.1)


def test_self_intersecting_boundary_rejected():
    bowtie = g.Polyline(np.array([[0, 0], [1, 1], [1, 0], [0, 1.0]]))
    assert not bowtie.is_simple()
    with pytest.raises(g.InvalidShapeError):
        g.triangulate(bowtie, 0.5)


def test_resample_preserves_perimeter():
    poly = g.discretize_boundary(g.ShapeSpec.circle(0, 0, 2), 0.3)
    fine = poly.resample(0.05)
    assert fine.perimeter() == pytest.approx(poly.perimeter(), rel=1e-3)
    lens = fine.segment_lengths()
    assert lens.max() / lens.min() < 1.3


# ---------------------------------------------------------------------------
# triangulation


def test_disk_area_and_quality():
    errs = []
    for h in (0.2, 0.1):
        poly = g.discretize_boundary(g.ShapeSpec.circle(0, 0, 1), h)
        mesh = g.triangulate(poly, h)
        q = g.mesh_quality(mesh)
        assert q.min_angle_deg >= 20.0
        assert q.max_edge <= 1.5 * h + 1e-12
        area = mesh.signed_areas().sum()
        # triangulation area equals the inscribed polygon area exactly
        n = poly.n
        poly_area = 0.5 * n * math.sin(2 * math.pi / n)
        assert area == pytest.approx(poly_area, rel=1e-12)
        errs.append(abs(area - math.pi) / math.pi)
    assert errs[1] < 0.005
    # polygonal-boundary area deficit shrinks like h^2
    assert errs[1] < errs[0] / 2.0


def test_square_mesh_exact_area():
    for nseg in (8, 16):
        mesh = g.triangulate(unit_square_boundary(nseg), 1.0 / nseg)
        assert mesh.signed_areas().sum() == pytest.approx(1.0, abs=1e-12)
        q = g.mesh_quality(mesh)
        assert q.min_angle_deg >= 20.0


def test_boundary_segments_become_boundary_edges():
    poly = g.discretize_boundary(g.ShapeSpec.circle(0, 0, 1), 0.2)
    mesh = g.triangulate(poly, 0.2)
    assert len(mesh.boundary_edges) == poly.n
    loop = mesh.boundary_polyline()
    # the loop traverses exactly the input points (up to start/direction)
    assert loop.n == poly.n
    d = g.hausdorff_distance(loop, poly)
    assert d < 1e-12


def test_internal_ring_segments_are_interior_edges():
    ell = g.discretize_boundary(g.ShapeSpec.ellipse(0, 0, 2, 3), 0.2)
    ring = g.discretize_boundary(g.ShapeSpec.circle(0, 0, 1), 0.2)
    mesh = g.triangulate(ell, 0.2, internal=ring)
    vv = mesh.vertices
    for k in range(ring.n):
        p = ring.points[k]
        q = ring.points[(k + 1) % ring.n]
        i = int(np.argmin(np.linalg.norm(vv - p, axis=1)))
        j = int(np.argmin(np.linalg.norm(vv - q, axis=1)))
        assert np.linalg.norm(vv[i] - p) < 1e-12
        mesh.edge_lookup(np.array([[i, j]]))  # raises KeyError if absent


def test_forced_diagonal_recovery():
    sq = g.Polyline(np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]]))
    for diag in ([[0.0, 0], [1, 1]], [[1.0, 0], [0, 1]]):
        internal = g.Polyline(np.array(diag), closed=False)
        mesh = g.triangulate(sq, 1.4, internal=internal)
        assert mesh.n_triangles == 2
        i = int(np.argmin(np.linalg.norm(mesh.vertices - diag[0], axis=1)))
        j = int(np.argmin(np.linalg.norm(mesh.vertices - diag[1], axis=1)))
        mesh.edge_lookup(np.array([[i, j]]))


def test_edges_sorted_lexicographically():
    poly = g.discretize_boundary(g.ShapeSpec.circle(0, 0, 1), 0.25)
    mesh = g.triangulate(poly, 0.25)
    e = mesh.edges
    assert np.all(e[:, 0] < e[:, 1])
    keys = e[:, 0] * mesh.n_vertices + e[:, 1]
    assert np.all(np.diff(keys) > 0)


def test_remesh_preserves_circle_area():
    poly = g.discretize_boundary(g.ShapeSpec.circle(0, 0, 2), 0.2)
    mesh = g.triangulate(poly, 0.2)
    again = g.remesh(mesh.boundary_polyline(), 0.2)
    a0 = mesh.signed_areas().sum()
    a1 = again.signed_areas().sum()
    assert abs(a1 - a0) / a0 < 0.005


# ---------------------------------------------------------------------------
# quality report


def test_quality_single_right_triangle():
    mesh = g.Mesh(np.array([[0.0, 0], [1, 0], [0, 1]]),
                  np.array([[0, 1, 2]]), np.array([[0, 1], [1, 2], [2, 0]]),
                  np.ones(3, dtype=int), 1.0)
    q = g.mesh_quality(mesh)
    assert q.min_angle_deg == pytest.approx(45.0, abs=1e-9)
    assert q.min_area == pytest.approx(0.5, abs=1e-15)


def test_quality_flags_inverted_triangle():
    mesh = g.Mesh(np.array([[0.0, 0], [1, 0], [0, 1]]),
                  np.array([[0, 2, 1]]), np.array([[0, 1], [1, 2], [2, 0]]),
                  np.ones(3, dtype=int), 1.0)
    assert g.mesh_quality(mesh).min_area < 0


# ---------------------------------------------------------------------------
# point location


def test_locate_matches_brute_force(disk_mesh):
    rng = np.random.default_rng(7)
    pts = rng.uniform(-1.1, 1.1, size=(400, 2))
    elems, lams = g.locate_many(disk_mesh, pts)
    t = disk_mesh.tri_coords()
    for p, e, lam in zip(pts, elems, lams):
        # brute force: scan all triangles for containment
        v0 = t[:, 0]
        M = np.stack([t[:, 1] - v0, t[:, 2] - v0], axis=2)
        rhs = p - v0
        det = M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0]
        l1 = (rhs[:, 0] * M[:, 1, 1] - rhs[:, 1] * M[:, 0, 1]) / det
        l2 = (rhs[:, 1] * M[:, 0, 0] - rhs[:, 0] * M[:, 1, 0]) / det
        l0 = 1.0 - l1 - l2
        inside = (l0 >= -1e-10) & (l1 >= -1e-10) & (l2 >= -1e-10)
        if e >= 0:
            assert inside[e]
            rec = (lam[:, None] * t[e]).sum(axis=0)
            assert np.linalg.norm(rec - p) < 1e-9
        else:
            assert not inside.any()


def test_locate_vertex_and_outside(disk_mesh):
    hit = g.locate_point(disk_mesh, disk_mesh.vertices[0])
    assert hit is not None
    e, lam = hit
    assert lam.max() == pytest.approx(1.0, abs=1e-12)
    assert g.locate_point(disk_mesh, (5.0, 5.0)) is None


def test_locate_snaps_points_just_outside(disk_mesh):
    n = g.boundary_normals(disk_mesh)
    mid = 0.5 * (disk_mesh.vertices[disk_mesh.boundary_edges[:, 0]]
                 + disk_mesh.vertices[disk_mesh.boundary_edges[:, 1]])
    eps_in = 1e-10 * disk_mesh.diameter()
    just_out = mid[0] + eps_in * n[0]
    assert g.locate_point(disk_mesh, just_out) is not None
    far_out = mid[0] + 1e-3 * n[0]
    assert g.locate_point(disk_mesh, far_out) is None


# ---------------------------------------------------------------------------
# normals and deformation


def test_disk_normals_are_radial(disk_mesh):
    n = g.boundary_normals(disk_mesh)
    be = disk_mesh.boundary_edges
    mid = 0.5 * (disk_mesh.vertices[be[:, 0]] + disk_mesh.vertices[be[:, 1]])
    radial = mid / np.linalg.norm(mid, axis=1)[:, None]
    assert np.linalg.norm(n, axis=1) == pytest.approx(1.0, abs=1e-12)
    assert np.einsum("ec,ec->e", n, radial).min() > 0.99


def test_square_normals_axis_aligned():
    mesh = g.triangulate(unit_square_boundary(8), 1.0 / 8)
    n = g.boundary_normals(mesh)
    aligned = np.isclose(np.abs(n), 1.0, atol=1e-12) \
        | np.isclose(n, 0.0, atol=1e-12)
    assert aligned.all()


def test_deform_translation_keeps_areas(disk_mesh):
    theta = np.tile([0.3, -0.2], (disk_mesh.n_vertices, 1))
    moved = g.deform_mesh(disk_mesh, theta, 1.0)
    assert np.allclose(moved.signed_areas(), disk_mesh.signed_areas())
    assert np.allclose(moved.vertices, disk_mesh.vertices + [0.3, -0.2])


def test_deform_radial_scale_changes_area(disk_mesh):
    theta = disk_mesh.vertices.copy()
    moved = g.deform_mesh(disk_mesh, theta, 0.1)
    ratio = moved.signed_areas().sum() / disk_mesh.signed_areas().sum()
    assert ratio == pytest.approx(1.1 ** 2, rel=1e-12)


# ---------------------------------------------------------------------------
# containment


def test_contains_region():
    ell = g.discretize_boundary(g.ShapeSpec.ellipse(0, 0, 2, 3), 0.1)
    assert g.contains_region(ell, g.ShapeSpec.circle(0, 0, 1))
    assert not g.contains_region(ell, g.ShapeSpec.circle(0, 0, 2.5))
    assert not g.contains_region(ell, g.ShapeSpec.circle(1.8, 0, 0.5))


def test_region_clearance_concentric():
    outer = g.discretize_boundary(g.ShapeSpec.circle(0, 0, 2), 0.05)
    c = g.region_clearance(outer, g.ShapeSpec.circle(0, 0, 1))
    assert c == pytest.approx(1.0, abs=0.01)


# ---------------------------------------------------------------------------
# hausdorff distance


def test_hausdorff_concentric_circles():
    h = 0.05
    A = g.discretize_boundary(g.ShapeSpec.circle(0, 0, 2), h)
    B = g.discretize_boundary(g.ShapeSpec.circle(0, 0, 3), h)
    d = g.hausdorff_distance(A, B)
    assert abs(d - 1.0) < 2 * h
    assert g.hausdorff_distance(B, A) == d


def test_hausdorff_identical_and_shifted():
    A = g.discretize_boundary(g.ShapeSpec.circle(0, 0, 1), 0.1)
    assert g.hausdorff_distance(A, A) < 1e-12
    B = g.Polyline(A.points + [0.25, 0.0])
    d = g.hausdorff_distance(A, B)
    assert d == pytest.approx(0.25, rel=1e-3)


def test_hausdorff_against_dense_sampling_oracle():
    rng = np.random.default_rng(3)
    for _ in range(3):
        nA = rng.integers(5, 12)
        nB = rng.integers(5, 12)
        tA = np.sort(rng.uniform(0, 2 * np.pi, nA))
        tB = np.sort(rng.uniform(0, 2 * np.pi, nB))
        rA = rng.uniform(0.5, 1.5, nA)
        rB = rng.uniform(0.5, 1.5, nB)
        A = g.Polyline(np.column_stack([rA * np.cos(tA), rA * np.sin(tA)]))
        B = g.Polyline(np.column_stack([rB * np.cos(tB), rB * np.sin(tB)])
                       + [0.2, -0.1])

        def dense(P, n=4000):
            a, b = P.segments()
            t = np.linspace(0, 1, 50)[:, None, None]
            return (a[None] * (1 - t) + b[None] * t).reshape(-1, 2)

        pa, pb = dense(A), dense(B)
        d2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2)
        oracle = max(np.sqrt(d2.min(axis=1)).max(),
                     np.sqrt(d2.min(axis=0)).max())
        mine = g.hausdorff_distance(A, B)
        assert abs(mine - oracle) < 2e-3


# ---------------------------------------------------------------------------
# file round trips


def test_mesh_text_roundtrip(tmp_path, disk_mesh):
    path = tmp_path / "mesh.txt"
    g.save_mesh_text(disk_mesh, path)
    back = g.load_mesh_text(path)
    assert np.array_equal(back.vertices, disk_mesh.vertices)
    assert np.array_equal(back.triangles, disk_mesh.triangles)
    assert np.array_equal(back.boundary_edges, disk_mesh.boundary_edges)
    assert np.array_equal(back.boundary_labels, disk_mesh.boundary_labels)
    with open(path) as fh:
        first = fh.readline().split()
    assert [int(x) for x in first] == [disk_mesh.n_vertices,
                                       disk_mesh.n_triangles,
                                       len(disk_mesh.boundary_edges)]


def test_polyline_csv_roundtrip(tmp_path):
    poly = g.discretize_boundary(g.ShapeSpec.ellipse(0.1, -0.2, 2, 3), 0.3)
    path = tmp_path / "poly.csv"
    g.save_polyline_csv(poly, path)
    back = g.load_polyline_csv(path)
    assert np.array_equal(back.points, poly.points)
    with open(path) as fh:
        assert fh.readline().strip() == "x,y"


# ---------------------------------------------------------------------------
# mesh validation


def test_validate_catches_bad_boundary(disk_mesh):
    bad = g.Mesh(disk_mesh.vertices, disk_mesh.triangles,
                 disk_mesh.boundary_edges[:-1],
                 disk_mesh.boundary_labels[:-1], disk_mesh.h_target)
    with pytest.raises(g.InvalidShapeError):
        bad.validate()


def test_validate_catches_inverted_triangle(disk_mesh):
    tris = disk_mesh.triangles.copy()
    tris[0] = tris[0][[0, 2, 1]]
    bad = g.Mesh(disk_mesh.vertices, tris, disk_mesh.boundary_edges,
                 disk_mesh.boundary_labels, disk_mesh.h_target)
    with pytest.raises(g.InvalidShapeError):
        bad.validate()


# ---------------------------------------------------------------------------
# properties


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10 ** 6))
def test_locate_centroids_property(seed):
    # centroids of a fixed mesh must always locate into a triangle whose
    # barycentric reconstruction returns the query point
    mesh = _property_mesh()
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, mesh.n_triangles, size=20)
    cent = mesh.tri_coords()[ids].mean(axis=1)
    elems, lams = g.locate_many(mesh, cent)
    assert (elems >= 0).all()
    rec = np.einsum("pk,pkc->pc", lams, mesh.tri_coords()[elems])
    assert np.abs(rec - cent).max() < 1e-9


_PROPERTY_MESH = []


def _property_mesh():
    if not _PROPERTY_MESH:
        poly = g.discretize_boundary(g.ShapeSpec.ellipse(0, 0, 2, 1), 0.2)
        _PROPERTY_MESH.append(g.triangulate(poly, 0.2))
    return _PROPERTY_MESH[0]


@settings(max_examples=15, deadline=None)
@given(st.floats(min_value=0.3, max_value=1.0),
       st.floats(min_value=-0.5, max_value=0.5),
       st.floats(min_value=-0.5, max_value=0.5))
def test_hausdorff_shift_bound_property(r, dx, dy):
    # moving a curve by a vector changes the distance by at most its norm
    A = g.discretize_boundary(g.ShapeSpec.circle(0, 0, r), 0.1 * r)
    B = g.Polyline(A.points + [dx, dy])
    d = g.hausdorff_distance(A, B)
    shift = math.hypot(dx, dy)
    assert d <= shift + 1e-9
    assert d == pytest.approx(shift, abs=1e-6)
