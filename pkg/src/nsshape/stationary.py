"""Newton's method for the stationary flow system and the stationary
adjoint solve.

The saddle system is [[nu K + gamma N(v) + gamma L(v), B'], [B, 0]] with
Dirichlet velocity rows eliminated and pressure dof 0 pinned.  The adjoint
uses the exact transpose of the converged Newton Jacobian, which keeps the
discrete duality identity to roundoff.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import fem
from .sparse_linalg import (CooBuilder, SparseMatrix, assemble, factorize,
                            spmv)


@dataclasses.dataclass
class NewtonSettings:
    tol: float = 1e-10
    max_iter: int = 25
    damping: float = 1.0

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("invalid Newton settings")
        if not (0 < self.damping <= 1):
            raise ValueError("damping must lie in (0, 1]")


class NonConvergenceError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


def saddle_matrix(space, Avv: SparseMatrix, B: SparseMatrix) -> SparseMatrix:
    """Compose [[Avv, B'], [B, 0]] over velocity + pressure dofs."""
    n = space.n_vel + space.n_pres
    builder = CooBuilder(n, n)
    a = Avv.to_scipy().tocoo()
    builder.add_batch(a.row, a.col, a.data)
    b = B.to_scipy().tocoo()
    builder.add_batch(space.n_vel + b.row, b.col, b.data)
    builder.add_batch(b.col, space.n_vel + b.row, b.data)
    return assemble(builder)


def constrained_dofs(space):
    """Velocity Dirichlet dofs plus the pinned pressure dof."""
    return np.concatenate([space.dirichlet_dofs,
                           [space.n_vel + 0]]).astype(np.int64)


def mean_shift_pressure(space, pres: np.ndarray) -> np.ndarray:
    """Shift a P1 pressure to zero area-weighted mean."""
    lump = np.zeros(space.n_pres)
    np.add.at(lump, space.mesh.triangles.ravel(),
              np.repeat(space.areas / 3.0, 3))
    total = space.areas.sum()
    return pres - (lump @ pres) / total


def _source_vector(space, f):
    if f is None:
        return np.zeros(space.n_vel)
    if callable(f):
        return fem.assemble_load(space, f)
    return np.asarray(f, dtype=np.float64)


def solve_stokes(space, f, nu: float) -> fem.FlowField:
    """Direct solve of the linear saddle system (no convection)."""
    if nu <= 0:
        raise ValueError("viscosity must be positive")
    K = fem.assemble_stiffness(space, nu)
    B = fem.assemble_divergence(space)
    S = saddle_matrix(space, K, B)
    rhs = np.concatenate([_source_vector(space, f),
                          np.zeros(space.n_pres)])
    dofs = constrained_dofs(space)
    S2, rhs2 = fem.apply_dirichlet(S, rhs, dofs, np.zeros(len(dofs)))
    x = factorize(S2).solve(rhs2)
    return fem.FlowField(space, x[:space.n_vel],
                         mean_shift_pressure(space, x[space.n_vel:]))


def solve_navier_stokes_newton(space, f, nu: float, gamma: float,
                               settings: NewtonSettings | None = None):
    """Newton iteration started from the Stokes solution.

    Returns (FlowField, history) where history holds the per-step update
    ratios |dv|_V / |v|_V.
    """
    if settings is None:
        settings = NewtonSettings()
    if nu <= 0 or gamma < 0:
        raise ValueError("need nu > 0 and gamma >= 0")

    K = fem.assemble_stiffness(space, nu)
    B = fem.assemble_divergence(space)
    b_f = _source_vector(space, f)
    dofs = constrained_dofs(space)
    zeros = np.zeros(len(dofs))

    start = solve_stokes(space, b_f, nu)
    vel = start.vel.copy()
    # keep the raw (pinned-gauge) pressure during the iteration
    pres = start.pres - start.pres[0]

    history = []
    for _ in range(settings.max_iter):
        v2d = vel.reshape(-1, 2)
        N = fem.assemble_convection(space, v2d)
        L = fem.assemble_convection_linearized(space, v2d)

        res_vel = (spmv(K, vel) + gamma * spmv(N, vel)
                   + spmv(B.transpose(), pres) - b_f)
        res_pres = spmv(B, vel)
        residual = np.concatenate([res_vel, res_pres])

        Avv = _add_vel_blocks(space, K, N, L, gamma)
        J = saddle_matrix(space, Avv, B)
        J2, rhs2 = fem.apply_dirichlet(J, -residual, dofs, zeros)
        delta = factorize(J2).solve(rhs2)
        dvel = delta[:space.n_vel]

        denom = fem.norms(space, vel)["H1_semi"]
        dn = fem.norms(space, dvel)["H1_semi"]
        ratio = dn / denom if denom > 0 else dn
        history.append(ratio)

        vel += settings.damping * dvel
        pres += settings.damping * delta[space.n_vel:]
        if ratio < settings.tol:
            field = fem.FlowField(space, vel,
                                  mean_shift_pressure(space, pres))
            return field, history

    raise NonConvergenceError(
        f"Newton did not reach tol {settings.tol:g} in "
        f"{settings.max_iter} steps (last ratio {history[-1]:.3e})",
        history)


def _add_vel_blocks(space, K, N, L, gamma):
    n = space.n_vel
    builder = CooBuilder(n, n)
    for M, s in ((K, 1.0), (N, gamma), (L, gamma)):
        if s == 0.0:
            continue
        coo = M.to_scipy().tocoo()
        builder.add_batch(coo.row, coo.col, s * coo.data)
    return assemble(builder)


def omega_target_qp(space, u_D_eval) -> np.ndarray:
    """Evaluate a target velocity at the omega quadrature points.

    u_D_eval: callable points -> (n, 2).  Returns (n_omega_elems, nq, 2).
    """
    xy = fem.omega_qp_coords(space)
    vals = np.asarray(u_D_eval(xy.reshape(-1, 2)), dtype=np.float64)
    return vals.reshape(xy.shape)


def stationary_objective(space, field: fem.FlowField, uD_qp: np.ndarray,
                         nu: float) -> float:
    """J_s = nu * |v - u_D|^2 integrated over omega."""
    return nu * fem.l2sq_region(space, field.vel, uD_qp, region="omega")


def tracking_rhs(space, vel: np.ndarray, uD_qp: np.ndarray) -> np.ndarray:
    """Velocity-block right-hand side 2(v - u_D, phi) over omega."""
    fq = np.zeros_like(space.qp_xy)
    vq = space.eval_at_qp(vel.reshape(-1, 2))[space.omega_elems]
    fq[space.omega_elems] = 2.0 * (vq - uD_qp)
    return fem.assemble_rhs_from_qp(space, fq)


def adjoint_matrix(space, vel: np.ndarray, nu: float, gamma: float
                   ) -> SparseMatrix:
    """Transpose of the Newton Jacobian's velocity block at vel."""
    v2d = vel.reshape(-1, 2)
    K = fem.assemble_stiffness(space, nu)
    N = fem.assemble_convection(space, v2d)
    L = fem.assemble_convection_linearized(space, v2d)
    n = space.n_vel
    builder = CooBuilder(n, n)
    kcoo = K.to_scipy().tocoo()
    builder.add_batch(kcoo.row, kcoo.col, kcoo.data)
    for M in (N, L):
        if gamma != 0.0:
            coo = M.to_scipy().tocoo()
            builder.add_batch(coo.col, coo.row, gamma * coo.data)
    return assemble(builder)


def solve_stationary_adjoint(space, v: fem.FlowField, uD_qp: np.ndarray,
                             nu: float, gamma: float) -> fem.FlowField:
    """Adjoint pair (z, pi) from the transposed linearization at v."""
    B = fem.assemble_divergence(space)
    At = adjoint_matrix(space, v.vel, nu, gamma)
    S = saddle_matrix(space, At, B)
    rhs = np.concatenate([tracking_rhs(space, v.vel, uD_qp),
                          np.zeros(space.n_pres)])
    dofs = constrained_dofs(space)
    S2, rhs2 = fem.apply_dirichlet(S, rhs, dofs, np.zeros(len(dofs)))
    x = factorize(S2).solve(rhs2)
    return fem.FlowField(space, x[:space.n_vel],
                         mean_shift_pressure(space, x[space.n_vel:]))
