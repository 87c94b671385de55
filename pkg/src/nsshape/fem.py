"""Taylor-Hood P2/P1 elements: spaces, operator assembly, boundary
conditions, interpolation, norms, and VTK output.

Velocity dofs are node-major: dof = 2*node + component, with P2 nodes
numbered vertices first, then edge midpoints in the order of the sorted
edge table.  Pressure dofs coincide with vertex indices.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import geometry, kernels
from .sparse_linalg import CooBuilder, SparseMatrix, assemble

# symmetric Gauss rules in barycentric coordinates; weights sum to 1
_D5_A1, _D5_B1 = 0.0597158717897698, 0.4701420641051151
_D5_A2, _D5_B2 = 0.7974269853530873, 0.1012865073234563
_RULE5_QP = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_D5_A1, _D5_B1, _D5_B1], [_D5_B1, _D5_A1, _D5_B1],
    [_D5_B1, _D5_B1, _D5_A1],
    [_D5_A2, _D5_B2, _D5_B2], [_D5_B2, _D5_A2, _D5_B2],
    [_D5_B2, _D5_B2, _D5_A2],
])
_RULE5_QW = np.array([9 / 40,
                      0.1323941527885062, 0.1323941527885062,
                      0.1323941527885062,
                      0.1259391805448271, 0.1259391805448271,
                      0.1259391805448271])

_D7_A1 = 0.479308067841923
_D7_B1 = 0.260345966079038
_D7_A2 = 0.869739794195568
_D7_B2 = 0.065130102902216
_D7_C1 = 0.638444188569809
_D7_C2 = 0.312865496004875
_D7_C3 = 0.048690315425316
_RULE7_QP = np.array(
    [[1 / 3, 1 / 3, 1 / 3],
     [_D7_A1, _D7_B1, _D7_B1], [_D7_B1, _D7_A1, _D7_B1],
     [_D7_B1, _D7_B1, _D7_A1],
     [_D7_A2, _D7_B2, _D7_B2], [_D7_B2, _D7_A2, _D7_B2],
     [_D7_B2, _D7_B2, _D7_A2]]
    + [[p, q, r] for (p, q, r) in
       [(_D7_C1, _D7_C2, _D7_C3), (_D7_C1, _D7_C3, _D7_C2),
        (_D7_C2, _D7_C1, _D7_C3), (_D7_C2, _D7_C3, _D7_C1),
        (_D7_C3, _D7_C1, _D7_C2), (_D7_C3, _D7_C2, _D7_C1)]])
_RULE7_QW = np.array([-0.149570044467670]
                     + [0.175615257433204] * 3
                     + [0.053347235608839] * 3
                     + [0.077113760890257] * 6)

_GAUSS3_T = np.array([0.5 - np.sqrt(15) / 10, 0.5, 0.5 + np.sqrt(15) / 10])
_GAUSS3_W = np.array([5 / 18, 8 / 18, 5 / 18])


def triangle_rule(degree: int):
    if degree <= 5:
        return _RULE5_QP, _RULE5_QW
    return _RULE7_QP, _RULE7_QW


def p2_shape(lams: np.ndarray) -> np.ndarray:
    """P2 basis values at barycentric points; shape (..., 6)."""
    l0, l1, l2 = lams[..., 0], lams[..., 1], lams[..., 2]
    return np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1),
                     l2 * (2 * l2 - 1),
                     4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0], axis=-1)


def p2_shape_dl(lams: np.ndarray) -> np.ndarray:
    """Derivatives dN_k/dlambda_i at barycentric points; (..., 6, 3)."""
    l0, l1, l2 = lams[..., 0], lams[..., 1], lams[..., 2]
    z = np.zeros_like(l0)
    rows = [
        [4 * l0 - 1, z, z],
        [z, 4 * l1 - 1, z],
        [z, z, 4 * l2 - 1],
        [4 * l1, 4 * l0, z],
        [z, 4 * l2, 4 * l1],
        [4 * l2, z, 4 * l0],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


class TaylorHoodSpace:
    """P2 velocity / P1 pressure space over a triangulation."""

    def __init__(self, mesh: geometry.Mesh, omega: geometry.ShapeSpec | None
                 = None, quad_degree: int = 5):
        self.mesh = mesh
        self.edges = mesh.edges
        nv = mesh.n_vertices
        self.n_vertices = nv
        self.n_edges = len(self.edges)
        self.n_nodes = nv + self.n_edges
        self.n_vel = 2 * self.n_nodes
        self.n_pres = nv

        t = mesh.triangles
        pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        eidx = mesh.edge_lookup(pairs).reshape(3, -1).T
        self.tri_nodes = np.ascontiguousarray(
            np.column_stack([t, nv + eidx]), dtype=np.int64)

        mids = 0.5 * (mesh.vertices[self.edges[:, 0]]
                      + mesh.vertices[self.edges[:, 1]])
        self.node_coords = np.vstack([mesh.vertices, mids])

        bverts = np.unique(mesh.boundary_edges)
        bedge_ids = mesh.edge_lookup(mesh.boundary_edges)
        self.dirichlet_nodes = np.sort(np.concatenate([bverts,
                                                       nv + bedge_ids]))
        self.dirichlet_dofs = np.sort(np.concatenate(
            [2 * self.dirichlet_nodes, 2 * self.dirichlet_nodes + 1]))

        self.quad_degree = quad_degree
        qp, qw = triangle_rule(quad_degree)
        self.qp, self.qw = qp, qw
        tc = mesh.tri_coords()
        x0, x1, x2 = tc[:, 0], tc[:, 1], tc[:, 2]
        area2 = ((x1[:, 0] - x0[:, 0]) * (x2[:, 1] - x0[:, 1])
                 - (x1[:, 1] - x0[:, 1]) * (x2[:, 0] - x0[:, 0]))
        self.areas = 0.5 * area2
        gl = np.empty((mesh.n_triangles, 3, 2))
        gl[:, 0, 0] = x1[:, 1] - x2[:, 1]
        gl[:, 0, 1] = x2[:, 0] - x1[:, 0]
        gl[:, 1, 0] = x2[:, 1] - x0[:, 1]
        gl[:, 1, 1] = x0[:, 0] - x2[:, 0]
        gl[:, 2, 0] = x0[:, 1] - x1[:, 1]
        gl[:, 2, 1] = x1[:, 0] - x0[:, 0]
        self.grad_lambda = gl / area2[:, None, None]

        self.wdet = self.areas[:, None] * qw[None, :]
        self.Nq = np.ascontiguousarray(p2_shape(qp))
        dNdl = p2_shape_dl(qp)
        self.gradN = np.ascontiguousarray(
            np.einsum("qki,tid->tqkd", dNdl, self.grad_lambda))
        self.Np1 = np.ascontiguousarray(qp)
        self.qp_xy = np.einsum("qi,tic->tqc", qp, tc)

        cent = tc.mean(axis=1)
        if omega is not None:
            self.omega_elems = np.flatnonzero(omega.contains(cent))
        else:
            self.omega_elems = np.arange(mesh.n_triangles)
        self._idx_cache = {}
        self._bdata = None

    # -- scatter index tables ------------------------------------------------

    def _indices(self, kind: str):
        if kind in self._idx_cache:
            return self._idx_cache[kind]
        tn = self.tri_nodes
        nt = len(tn)
        if kind == "vv":
            # component-diagonal (6,6) blocks -> (nt,6,6,2)
            r = (2 * tn[:, :, None, None]
                 + np.arange(2)[None, None, None, :])
            r = np.broadcast_to(r, (nt, 6, 6, 2))
            c = (2 * tn[:, None, :, None]
                 + np.arange(2)[None, None, None, :])
            c = np.broadcast_to(c, (nt, 6, 6, 2))
        elif kind == "lin":
            # full (6,6,2,2) blocks: row component c, column component d
            r = (2 * tn[:, :, None, None, None]
                 + np.arange(2)[None, None, None, :, None])
            r = np.broadcast_to(r, (nt, 6, 6, 2, 2))
            c = (2 * tn[:, None, :, None, None]
                 + np.arange(2)[None, None, None, None, :])
            c = np.broadcast_to(c, (nt, 6, 6, 2, 2))
        elif kind == "div":
            # pressure rows by vertex, velocity columns (nt,3,6,2)
            r = np.broadcast_to(self.mesh.triangles[:, :, None, None],
                                (nt, 3, 6, 2))
            c = (2 * tn[:, None, :, None]
                 + np.arange(2)[None, None, None, :])
            c = np.broadcast_to(c, (nt, 3, 6, 2))
        else:
            raise KeyError(kind)
        pair = (np.ascontiguousarray(r).ravel(),
                np.ascontiguousarray(c).ravel())
        self._idx_cache[kind] = pair
        return pair

    # -- pointwise evaluation ------------------------------------------------

    def eval_at_qp(self, coefs2d: np.ndarray) -> np.ndarray:
        """Velocity values at volume quadrature points, (nt, nq, 2)."""
        return np.einsum("qk,tkc->tqc", self.Nq, coefs2d[self.tri_nodes])

    def grad_at_qp(self, coefs2d: np.ndarray) -> np.ndarray:
        """Velocity gradients d u_c / d x_d at quadrature points,
        (nt, nq, 2, 2)."""
        return np.einsum("tqkd,tkc->tqcd", self.gradN,
                         coefs2d[self.tri_nodes])

    def eval_field_at(self, coefs2d, elems, lams) -> np.ndarray:
        """P2 vector field at located points; (m, 2), zero outside."""
        N = p2_shape(lams)
        out = np.zeros((len(elems), 2))
        ok = elems >= 0
        nodes = self.tri_nodes[elems[ok]]
        out[ok] = np.einsum("mk,mkc->mc", N[ok], coefs2d[nodes])
        return out

    def grad_field_at(self, coefs2d, elems, lams) -> np.ndarray:
        """P2 gradient at located points; (m, 2, 2), zero outside."""
        dNdl = p2_shape_dl(lams)
        out = np.zeros((len(elems), 2, 2))
        ok = elems >= 0
        gN = np.einsum("mki,mid->mkd", dNdl[ok],
                       self.grad_lambda[elems[ok]])
        out[ok] = np.einsum("mkd,mkc->mcd", gN,
                            coefs2d[self.tri_nodes[elems[ok]]])
        return out

    # -- boundary edge data --------------------------------------------------

    def boundary_data(self):
        """Per-boundary-edge trace quadrature: nodes, weights, physical
        points, outward normals, and barycentric coordinates in the
        adjacent element."""
        if self._bdata is not None:
            return self._bdata
        mesh = self.mesh
        be = mesh.boundary_edges
        nv = self.n_vertices
        mid_ids = nv + mesh.edge_lookup(be)
        nodes = np.column_stack([be, mid_ids])  # (nb, 3)

        a = mesh.vertices[be[:, 0]]
        b = mesh.vertices[be[:, 1]]
        lens = np.linalg.norm(b - a, axis=1)
        t = _GAUSS3_T
        qxy = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
        w = lens[:, None] * _GAUSS3_W[None, :]
        # 1D P2 trace basis on the edge at the Gauss points
        shape = np.stack([(1 - t) * (1 - 2 * t), t * (2 * t - 1),
                          4 * t * (1 - t)], axis=-1)  # (3 qp, 3 nodes)
        normals = geometry.boundary_normals(mesh)
        btri = mesh.boundary_triangles()

        # barycentric coordinates of the edge Gauss points in the adjacent
        # triangle, for evaluating interior gradients on the boundary
        tc = mesh.tri_coords()[btri]
        v0 = tc[:, 0]
        e1 = tc[:, 1] - tc[:, 0]
        e2 = tc[:, 2] - tc[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        d = qxy - v0[:, None, :]
        l1 = (d[:, :, 0] * e2[:, 1][:, None]
              - d[:, :, 1] * e2[:, 0][:, None]) / det[:, None]
        l2 = (d[:, :, 1] * e1[:, 0][:, None]
              - d[:, :, 0] * e1[:, 1][:, None]) / det[:, None]
        lams = np.stack([1.0 - l1 - l2, l1, l2], axis=-1)  # (nb, 3, 3)

        self._bdata = dict(nodes=nodes, lens=lens, qxy=qxy, w=w,
                           shape=shape, normals=normals, elems=btri,
                           lams=lams)
        return self._bdata


def build_space(mesh: geometry.Mesh, omega: geometry.ShapeSpec | None = None,
                quad_degree: int = 5) -> TaylorHoodSpace:
    return TaylorHoodSpace(mesh, omega=omega, quad_degree=quad_degree)


@dataclasses.dataclass
class FlowField:
    space: TaylorHoodSpace
    vel: np.ndarray
    pres: np.ndarray

    def __post_init__(self):
        assert self.vel.shape == (self.space.n_vel,)
        assert self.pres.shape == (self.space.n_pres,)

    @property
    def vel2d(self) -> np.ndarray:
        return self.vel.reshape(-1, 2)

    @staticmethod
    def zero(space: TaylorHoodSpace) -> "FlowField":
        return FlowField(space, np.zeros(space.n_vel),
                         np.zeros(space.n_pres))


@dataclasses.dataclass
class ScalarP2Field:
    space: TaylorHoodSpace
    coefs: np.ndarray

    def __post_init__(self):
        assert self.coefs.shape == (self.space.n_nodes,)


def project_velocity(space: TaylorHoodSpace, fn) -> np.ndarray:
    """Nodal P2 interpolation of an analytic vector field; returns a flat
    velocity dof vector."""
    vals = np.asarray(fn(space.node_coords), dtype=np.float64)
    return vals.reshape(-1)


# ---------------------------------------------------------------------------
# assembly


def _vector_from_scalar_blocks(space, local, scale=1.0):
    rows, cols = space._indices("vv")
    data = np.broadcast_to((scale * local)[:, :, :, None],
                           local.shape + (2,))
    b = CooBuilder(space.n_vel, space.n_vel)
    b.add_batch(rows, cols, np.ascontiguousarray(data).ravel())
    return assemble(b)


def assemble_stiffness(space: TaylorHoodSpace, nu: float = 1.0
                       ) -> SparseMatrix:
    """nu * (grad u, grad phi) over velocity dofs."""
    if nu <= 0:
        raise ValueError("viscosity must be positive")
    local = kernels.asm_stiffness(space.gradN, space.wdet)
    return _vector_from_scalar_blocks(space, local, scale=nu)


def assemble_mass(space: TaylorHoodSpace) -> SparseMatrix:
    """(u, phi) over velocity dofs."""
    local = kernels.asm_mass(space.Nq, space.wdet)
    return _vector_from_scalar_blocks(space, local)


def assemble_region_mass(space: TaylorHoodSpace, elems: np.ndarray
                         ) -> SparseMatrix:
    """(u, phi) restricted to a subset of elements (for omega integrals)."""
    local = kernels.asm_mass(space.Nq, space.wdet)
    sel = np.zeros(len(local))
    sel[elems] = 1.0
    return _vector_from_scalar_blocks(space, sel[:, None, None] * local)


def assemble_divergence(space: TaylorHoodSpace) -> SparseMatrix:
    """B with (B u)_i = -(div u, psi_i); pressure rows, velocity columns."""
    local = kernels.asm_divergence(space.gradN, space.Np1, space.wdet)
    rows, cols = space._indices("div")
    b = CooBuilder(space.n_pres, space.n_vel)
    b.add_batch(rows, cols, np.ascontiguousarray(local).ravel())
    return assemble(b)


def assemble_convection(space: TaylorHoodSpace, a_coefs2d: np.ndarray
                        ) -> SparseMatrix:
    """N(a) with u' N(a)' phi = ((a . grad) u, phi)."""
    aq = np.ascontiguousarray(space.eval_at_qp(a_coefs2d))
    local = kernels.asm_convection(aq, space.gradN, space.Nq, space.wdet)
    return _vector_from_scalar_blocks(space, local)


def assemble_convection_linearized(space: TaylorHoodSpace,
                                   a_coefs2d: np.ndarray) -> SparseMatrix:
    """L(a) with entries ((phi_j . grad) a, phi_i)."""
    Ga = np.ascontiguousarray(space.grad_at_qp(a_coefs2d))
    local = kernels.asm_linearized(Ga, space.Nq, space.wdet)
    rows, cols = space._indices("lin")
    b = CooBuilder(space.n_vel, space.n_vel)
    b.add_batch(rows, cols, np.ascontiguousarray(local).ravel())
    return assemble(b)


def assemble_load(space: TaylorHoodSpace, f) -> np.ndarray:
    """(f, phi) for an analytic source f(points) -> (..., 2)."""
    fq = np.asarray(f(space.qp_xy.reshape(-1, 2)), dtype=np.float64)
    fq = fq.reshape(space.qp_xy.shape)
    local = np.einsum("tq,qi,tqc->tic", space.wdet, space.Nq, fq)
    return kernels.rhs_scatter_vec(np.ascontiguousarray(local),
                                   space.tri_nodes, space.n_nodes)


def assemble_rhs_from_qp(space: TaylorHoodSpace, fq: np.ndarray
                         ) -> np.ndarray:
    """(f, phi) for f given directly at the volume quadrature points."""
    local = np.einsum("tq,qi,tqc->tic", space.wdet, space.Nq, fq)
    return kernels.rhs_scatter_vec(np.ascontiguousarray(local),
                                   space.tri_nodes, space.n_nodes)


def apply_dirichlet(A: SparseMatrix, b: np.ndarray, dofs: np.ndarray,
                    values: np.ndarray):
    """Symmetric row/column elimination: unit diagonal on constrained dofs,
    rhs moved so eliminated columns keep the system consistent."""
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    n = A.n_rows
    mask = np.zeros(n, dtype=bool)
    mask[dofs] = True
    xfix = np.zeros(n)
    xfix[dofs] = values
    b2 = b.copy()
    if np.any(values != 0.0):
        b2 -= A.to_scipy().dot(xfix)
    b2[dofs] = values

    coo = A.to_scipy().tocoo()
    keep = ~mask[coo.row] & ~mask[coo.col]
    builder = CooBuilder(n, A.n_cols)
    builder.add_batch(coo.row[keep], coo.col[keep], coo.data[keep])
    builder.add_batch(dofs, dofs, np.ones(len(dofs)))
    return assemble(builder), b2


def interpolate_velocity(field: FlowField, pts: np.ndarray) -> np.ndarray:
    """P2 velocity at arbitrary points; (0, 0) outside the mesh."""
    pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=np.float64)
    elems, lams = geometry.locate_many(field.space.mesh, pts)
    return kernels.p2_eval_vec(
        np.ascontiguousarray(field.vel2d), field.space.tri_nodes,
        elems, lams)


# ---------------------------------------------------------------------------
# norms and functionals


def _region_elems(space, region):
    if region == "domain":
        return np.arange(space.mesh.n_triangles)
    if region == "omega":
        return space.omega_elems
    raise ValueError(f"unknown region {region!r}")


def norms(space: TaylorHoodSpace, vel_coefs: np.ndarray,
          region: str = "domain") -> dict:
    """L2 norm, H1 seminorm, and nodal max magnitude of a velocity vector."""
    coefs2d = vel_coefs.reshape(-1, 2)
    els = _region_elems(space, region)
    vq = space.eval_at_qp(coefs2d)[els]
    gq = space.grad_at_qp(coefs2d)[els]
    w = space.wdet[els]
    l2sq = float(np.einsum("tq,tqc,tqc->", w, vq, vq))
    h1sq = float(np.einsum("tq,tqcd,tqcd->", w, gq, gq))
    mag = np.linalg.norm(coefs2d, axis=1)
    return {"L2": np.sqrt(max(l2sq, 0.0)),
            "H1_semi": np.sqrt(max(h1sq, 0.0)),
            "Linf_nodal": float(mag.max(initial=0.0))}


def l2sq_region(space: TaylorHoodSpace, vel_coefs: np.ndarray,
                target_qp: np.ndarray | None = None,
                region: str = "omega") -> float:
    """Integral of |v - target|^2 over the region; target given at the
    region's quadrature points (or zero)."""
    els = _region_elems(space, region)
    vq = space.eval_at_qp(vel_coefs.reshape(-1, 2))[els]
    if target_qp is not None:
        vq = vq - target_qp
    return float(np.einsum("tq,tqc,tqc->", space.wdet[els], vq, vq))


def omega_qp_coords(space: TaylorHoodSpace) -> np.ndarray:
    """Physical quadrature points of the omega elements, (n_om, nq, 2)."""
    return space.qp_xy[space.omega_elems]


# ---------------------------------------------------------------------------
# output


def write_vtk(path, mesh: geometry.Mesh, point_scalars: dict | None = None,
              point_vectors: dict | None = None, title: str = "fields"):
    """Legacy ASCII VTK unstructured grid with vertex data."""
    nv = mesh.n_vertices
    nt = mesh.n_triangles
    lines = ["# vtk DataFile Version 3.0", title, "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {nv} double"]
    for x, y in mesh.vertices:
        lines.append(f"{x:.17g} {y:.17g} 0")
    lines.append(f"CELLS {nt} {4 * nt}")
    for a, b, c in mesh.triangles:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {nt}")
    lines.extend(["5"] * nt)
    if point_scalars or point_vectors:
        lines.append(f"POINT_DATA {nv}")
    for name, arr in (point_scalars or {}).items():
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        for v in arr[:nv]:
            lines.append(f"{v:.17g}")
    for name, arr in (point_vectors or {}).items():
        lines.append(f"VECTORS {name} double")
        for vx, vy in arr[:nv]:
            lines.append(f"{vx:.17g} {vy:.17g} 0")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
