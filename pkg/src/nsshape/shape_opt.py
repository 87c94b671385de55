"""Boundary shape gradients, Robin smoothing into a deformation field,
Armijo-style line search with feasibility checks, and the two outer
optimization loops (steady target tracking and its time-averaged
counterpart)."""

from __future__ import annotations

import dataclasses
import os

import numpy as np

from . import fem, geometry, stationary, transient
from .geometry import (InvalidShapeError, MeshQualityError, Polyline,
                       ShapeSpec)
from .sparse_linalg import CooBuilder, add_scaled, assemble, factorize

# minimum distance every sample of the observation boundary must keep
# from the outer boundary for a candidate domain to count as feasible
OMEGA_CLEARANCE = 0.05
MAX_BACKTRACKS = 12


# ---------------------------------------------------------------------------
# boundary fields


@dataclasses.dataclass
class BoundaryScalarField:
    """Scalar density sampled at the Gauss points of every boundary edge;
    values has shape (n_boundary_edges, 3)."""

    space: object
    values: np.ndarray

    def __post_init__(self):
        bd = self.space.boundary_data()
        assert self.values.shape == bd["w"].shape
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite boundary density")

    def l2_boundary(self) -> float:
        w = self.space.boundary_data()["w"]
        return float(np.sqrt(np.sum(w * self.values ** 2)))

    def pair_normal(self, tn: np.ndarray) -> float:
        """Duality pairing integral of (density * tn) over the boundary,
        with tn = theta . n sampled like the values."""
        w = self.space.boundary_data()["w"]
        return float(np.sum(w * self.values * tn))


@dataclasses.dataclass
class DeformationField:
    """Displacement with one value per P2 node; the mesh only moves by the
    vertex part, midpoints exist for boundary norms and pairings."""

    space: object
    nodal: np.ndarray

    def __post_init__(self):
        assert self.nodal.shape == (self.space.n_nodes, 2)
        if not np.all(np.isfinite(self.nodal)):
            raise ValueError("non-finite deformation")
        self.norm_boundary = self._boundary_l2()

    @property
    def vertex_disp(self) -> np.ndarray:
        return self.nodal[:self.space.n_vertices]

    def trace_at_quad(self) -> np.ndarray:
        """Displacement at the boundary Gauss points, (nb, 3, 2)."""
        bd = self.space.boundary_data()
        return np.einsum("qi,eic->eqc", bd["shape"], self.nodal[bd["nodes"]])

    def normal_trace(self) -> np.ndarray:
        """theta . n at the boundary Gauss points, (nb, 3)."""
        bd = self.space.boundary_data()
        return np.einsum("eqc,ec->eq", self.trace_at_quad(), bd["normals"])

    def _boundary_l2(self) -> float:
        bd = self.space.boundary_data()
        tq = self.trace_at_quad()
        return float(np.sqrt(np.sum(bd["w"] * np.sum(tq ** 2, axis=2))))


@dataclasses.dataclass
class OptimizationTrace:
    """Accepted-iterate history plus a final status string."""

    rows: list = dataclasses.field(default_factory=list)
    status: str = "running"

    def append(self, it, J, tau_eff, backtracks, mesh):
        if self.rows and not J < self.rows[-1]["J"]:
            raise AssertionError("objective must decrease across accepted "
                                 "iterates")
        q = geometry.mesh_quality(mesh)
        self.rows.append(dict(iter=it, J=float(J), tau_eff=float(tau_eff),
                              backtracks=int(backtracks),
                              n_vertices=mesh.n_vertices,
                              min_angle=q.min_angle_deg))

    @property
    def J_values(self):
        return [r["J"] for r in self.rows]

    def to_csv(self, path):
        lines = ["iter,J,tau_eff,backtracks,n_vertices,min_angle"]
        for r in self.rows:
            lines.append(f"{r['iter']},{r['J']:.17g},{r['tau_eff']:.17g},"
                         f"{r['backtracks']},{r['n_vertices']},"
                         f"{r['min_angle']:.17g}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# shape gradients


def _normal_gradient(space, coefs2d: np.ndarray) -> np.ndarray:
    """One-sided normal derivative of a P2 vector field at the boundary
    Gauss points, taken from the adjacent element; (nb, 3, 2)."""
    bd = space.boundary_data()
    dNdl = fem.p2_shape_dl(bd["lams"])              # (nb, 3, 6, 3)
    gl = space.grad_lambda[bd["elems"]]             # (nb, 3, 2)
    gradN = np.einsum("eqki,eid->eqkd", dNdl, gl)   # (nb, 3, 6, 2)
    vals = coefs2d[space.tri_nodes[bd["elems"]]]    # (nb, 6, 2)
    grads = np.einsum("eqkd,ekc->eqcd", gradN, vals)
    return np.einsum("eqcd,ed->eqc", grads, bd["normals"])


def _gradient_density(v2d, z2d, space, nu: float) -> BoundaryScalarField:
    dv = _normal_gradient(space, v2d)
    dz = _normal_gradient(space, z2d)
    return BoundaryScalarField(space, nu * np.sum(dv * dz, axis=2))


def shape_gradient_stationary(v: fem.FlowField, z: fem.FlowField, u_D,
                              nu: float) -> BoundaryScalarField:
    """Boundary density nu * (dv/dn . dz/dn).

    The tracking term |v - u_D|^2 also belongs to the density but carries
    the observation-region indicator, which vanishes on the outer boundary
    because feasibility keeps that region strictly interior; u_D is
    accepted for interface symmetry and not evaluated.
    """
    assert v.space is z.space
    return _gradient_density(v.vel2d, z.vel2d, v.space, nu)


def shape_gradient_kernel_time(u_n: fem.FlowField, w_n: fem.FlowField, u_D,
                               nu: float) -> BoundaryScalarField:
    """Instantaneous kernel nu * (du/dn . dw/dn) of the time-averaged
    gradient; same structure as the steady density."""
    assert u_n.space is w_n.space
    return _gradient_density(u_n.vel2d, w_n.vel2d, u_n.space, nu)


# ---------------------------------------------------------------------------
# Robin smoothing


def _boundary_mass(space):
    bd = space.boundary_data()
    local = np.einsum("eq,qi,qj->eij", bd["w"], bd["shape"], bd["shape"])
    nodes = bd["nodes"]
    nb = len(nodes)
    builder = CooBuilder(space.n_vel, space.n_vel)
    ii = np.repeat(nodes, 3, axis=1)        # (nb, 9) row nodes, i slow
    jj = np.tile(nodes, (1, 3))             # (nb, 9) col nodes, j fast
    vv = local.reshape(nb, 9)
    for c in (0, 1):
        builder.add_batch((2 * ii + c).ravel(), (2 * jj + c).ravel(),
                          vv.ravel())
    return assemble(builder)


def _robin_factor(space, eps: float):
    cache = getattr(space, "_robin_cache", None)
    if cache is None:
        cache = space._robin_cache = {}
    if eps not in cache:
        K = fem.assemble_stiffness(space, 1.0)
        Mb = _boundary_mass(space)
        A = add_scaled([(K, eps), (Mb, 1.0)])
        cache[eps] = factorize(A)
    return cache[eps]


def solve_deformation_robin(space, g: BoundaryScalarField, eps: float
                            ) -> DeformationField:
    """Smooth the boundary density into a volumetric displacement.

    Solves eps (grad theta, grad phi) + (theta, phi)_boundary
    = -(g n, phi)_boundary componentwise; the two components share one
    factorization and couple only through the right-hand side.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    bd = space.boundary_data()
    lu = _robin_factor(space, float(eps))
    local = -np.einsum("eq,eq,qi,ec->eic", bd["w"], g.values, bd["shape"],
                       bd["normals"])
    rhs = np.zeros((space.n_nodes, 2))
    np.add.at(rhs, bd["nodes"], local)
    x = lu.solve(rhs.ravel())
    return DeformationField(space, x.reshape(-1, 2))


def average_deformation(fields, N: int) -> DeformationField:
    """Trapezoidal average (1/N)(f0/2 + f1 + ... + f_{N-1} + fN/2)."""
    if len(fields) != N + 1:
        raise ValueError(f"expected {N + 1} fields, got {len(fields)}")
    space = fields[0].space
    if any(f.space is not space for f in fields):
        raise ValueError("deformations live on different spaces")
    acc = 0.5 * (fields[0].nodal + fields[-1].nodal)
    for f in fields[1:-1]:
        acc = acc + f.nodal
    return DeformationField(space, acc / N)


# ---------------------------------------------------------------------------
# line search


@dataclasses.dataclass
class StepRecord:
    accepted: bool
    mesh: object = None
    J: float = np.nan
    tau_eff: float = 0.0
    backtracks: int = 0
    payload: object = None


def _candidate_boundary(mesh, theta: DeformationField, step: float
                        ) -> Polyline:
    loop = mesh.boundary_loop()
    pts = mesh.vertices[loop] + step * theta.vertex_disp[loop]
    return Polyline(pts, closed=True)


def line_search_step(mesh, theta: DeformationField, J_current: float,
                     evaluator, alpha: float, omega: ShapeSpec,
                     h: float | None = None, internal: Polyline | None = None,
                     i_max: int = MAX_BACKTRACKS) -> StepRecord:
    """Backtracking step along theta with feasibility screening.

    The trial scale is tau0 = alpha * J / ||theta||_{L2(boundary)}, halved
    until the deformed-and-remeshed domain is feasible (simple boundary,
    omega kept inside with clearance, mesh generator succeeds) and the
    re-solved objective strictly decreases.  Runs out of halvings ->
    StepRecord(accepted=False).
    """
    if not theta.norm_boundary > 0:
        raise ValueError("line search needs a nonzero deformation")
    if h is None:
        h = mesh.h_target
    tau0 = alpha * J_current / theta.norm_boundary
    for i in range(i_max + 1):
        step = tau0 * 0.5 ** i
        try:
            cand = _candidate_boundary(mesh, theta, step)
            cand.validate_closed_simple()
        except InvalidShapeError:
            continue
        if not geometry.contains_region(cand, omega):
            continue
        if geometry.region_clearance(cand, omega) < OMEGA_CLEARANCE:
            continue
        try:
            new_mesh = geometry.remesh(cand, h, internal=internal)
        except (InvalidShapeError, MeshQualityError):
            continue
        out = evaluator(new_mesh)
        J_new, payload = out if isinstance(out, tuple) else (out, None)
        if J_new < J_current:
            return StepRecord(True, new_mesh, float(J_new), step, i,
                              payload)
    return StepRecord(False, backtracks=i_max)


# ---------------------------------------------------------------------------
# outer loops


def _uD_evaluator(u_D):
    if isinstance(u_D, fem.FlowField):
        return lambda pts: fem.interpolate_velocity(u_D, pts)
    if callable(u_D):
        return u_D
    raise TypeError("u_D must be a FlowField or a callable")


def _resolve_problem_data(config, u_D, f):
    if u_D is None or f is None:
        from . import experiments
        if u_D is None:
            u_D = experiments.generate_desired_velocity(config)
        if f is None:
            f = experiments.body_force
    return _uD_evaluator(u_D), f


def _dump_boundary(out_dir, it, mesh):
    if out_dir is not None:
        geometry.save_polyline_csv(
            mesh.boundary_polyline(),
            os.path.join(out_dir, f"boundary_{it:04d}.csv"))


def _finish(trace, status, out_dir, mesh):
    trace.status = status
    if out_dir is not None:
        trace.to_csv(os.path.join(out_dir, "trace.csv"))
    return trace, mesh.boundary_polyline()


def optimize_stationary(config, u_D=None, f=None, out_dir=None):
    """Descend the steady tracking objective over the domain shape.

    Returns (OptimizationTrace, final boundary Polyline); per-iteration
    boundaries and the trace CSV land in out_dir when given.
    """
    uD_eval, f = _resolve_problem_data(config, u_D, f)
    nu, gamma = config.nu, config.gamma
    ring = geometry.discretize_boundary(config.omega, config.h)

    def evaluate(msh):
        space = fem.build_space(msh, omega=config.omega)
        flow, _ = stationary.solve_navier_stokes_newton(space, f, nu, gamma,
                                               config.newton)
        uD_qp = stationary.omega_target_qp(space, uD_eval)
        J = stationary.stationary_objective(space, flow, uD_qp, nu)
        return J, (space, flow, uD_qp)

    mesh = geometry.triangulate(
        geometry.discretize_boundary(config.initial_domain, config.h),
        config.h, internal=ring)
    J, (space, flow, uD_qp) = evaluate(mesh)
    trace = OptimizationTrace()
    trace.append(0, J, 0.0, 0, mesh)
    _dump_boundary(out_dir, 0, mesh)

    for it in range(1, config.max_iters + 1):
        assert geometry.contains_region(mesh.boundary_polyline(),
                                        config.omega)
        z = stationary.solve_stationary_adjoint(space, flow, uD_qp, nu,
                                                gamma)
        g = shape_gradient_stationary(flow, z, uD_eval, nu)
        theta = solve_deformation_robin(space, g, config.eps_robin)
        if not theta.norm_boundary > 0:
            return _finish(trace, "converged", out_dir, mesh)
        rec = line_search_step(mesh, theta, J, evaluate, config.alpha,
                               config.omega, h=config.h, internal=ring)
        if not rec.accepted:
            return _finish(trace, "stalled", out_dir, mesh)
        rel_drop = (J - rec.J) / rec.J
        mesh, J = rec.mesh, rec.J
        space, flow, uD_qp = rec.payload
        trace.append(it, J, rec.tau_eff, rec.backtracks, mesh)
        _dump_boundary(out_dir, it, mesh)
        if rel_drop < config.tol:
            return _finish(trace, "converged", out_dir, mesh)
    return _finish(trace, "max_iters", out_dir, mesh)


def optimize_transient(config, T: float, u_D=None, f=None, out_dir=None):
    """Descend the time-averaged tracking objective for horizon T.

    Each iteration runs the forward march, the backward adjoint sweep, one
    Robin smoothing per time level, trapezoidal averaging of the resulting
    displacements, and the same line search as the steady loop.
    """
    uD_eval, f = _resolve_problem_data(config, u_D, f)
    nu, gamma = config.nu, config.gamma
    grid = transient.TimeGrid.from_T_dt(T, config.dt)
    ring = geometry.discretize_boundary(config.omega, config.h)

    def evaluate(msh):
        space = fem.build_space(msh, omega=config.omega)
        op = transient.ForwardOperator(space, nu, gamma, grid.dt)
        traj = transient.solve_forward(space, None, f, nu, gamma, grid,
                                       operator=op)
        uD_qp = stationary.omega_target_qp(space, uD_eval)
        J = transient.evaluate_time_objective(traj, uD_qp, nu, grid)
        return J, (space, traj, uD_qp)

    mesh = geometry.triangulate(
        geometry.discretize_boundary(config.initial_domain, config.h),
        config.h, internal=ring)
    J, (space, traj, uD_qp) = evaluate(mesh)
    trace = OptimizationTrace()
    trace.append(0, J, 0.0, 0, mesh)
    _dump_boundary(out_dir, 0, mesh)

    for it in range(1, config.max_iters + 1):
        assert geometry.contains_region(mesh.boundary_polyline(),
                                        config.omega)
        adj = transient.solve_adjoint_backward(space, traj, uD_qp, nu,
                                               gamma, grid)
        thetas = []
        for n in range(grid.N + 1):
            kern = shape_gradient_kernel_time(traj.fields[n], adj.fields[n],
                                              uD_eval, nu)
            thetas.append(solve_deformation_robin(space, kern, config.eps_robin))
        theta = average_deformation(thetas, grid.N)
        if not theta.norm_boundary > 0:
            return _finish(trace, "converged", out_dir, mesh)
        rec = line_search_step(mesh, theta, J, evaluate, config.alpha,
                               config.omega, h=config.h, internal=ring)
        if not rec.accepted:
            return _finish(trace, "stalled", out_dir, mesh)
        rel_drop = (J - rec.J) / rec.J
        mesh, J = rec.mesh, rec.J
        space, traj, uD_qp = rec.payload
        trace.append(it, J, rec.tau_eff, rec.backtracks, mesh)
        _dump_boundary(out_dir, it, mesh)
        if rel_drop < config.tol:
            return _finish(trace, "converged", out_dir, mesh)
    return _finish(trace, "max_iters", out_dir, mesh)
