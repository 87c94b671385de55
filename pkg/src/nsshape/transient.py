"""Upwind composition time stepping for the dynamic flow problem and the
downwind backward adjoint scheme.

Each forward step solves the constant saddle system M/dt + nu K (factored
once per space/dt pair) with the previous velocity composed through the
upwind foot map x - gamma*dt*u(x).  The backward adjoint adds a
step-dependent transposed-gradient coupling, so it refactors per step.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import fem, geometry
from .sparse_linalg import add_scaled, factorize
from .stationary import (constrained_dofs, mean_shift_pressure,
                         saddle_matrix, tracking_rhs)


@dataclasses.dataclass(frozen=True)
class TimeGrid:
    T: float
    dt: float
    N: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("need at least one step")
        if abs(self.N * self.dt - self.T) > 1e-12:
            raise ValueError(f"N*dt = {self.N * self.dt!r} does not "
                             f"match T = {self.T!r}")

    @staticmethod
    def from_T_dt(T: float, dt: float) -> "TimeGrid":
        N = int(round(T / dt))
        return TimeGrid(T, dt, N)

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.N + 1)


@dataclasses.dataclass
class Trajectory:
    grid: TimeGrid
    fields: list

    def __post_init__(self):
        assert len(self.fields) == self.grid.N + 1
        sp = self.fields[0].space
        assert all(f.space is sp for f in self.fields)

    @property
    def space(self):
        return self.fields[0].space


def upwind_foot(x: np.ndarray, a, gamma: float, dt: float) -> np.ndarray:
    """Foot of the characteristic through x: x - gamma*dt*a(x).

    a may be a FlowField (interpolated, zero outside) or a callable.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if gamma == 0.0:
        return x.copy()
    if isinstance(a, fem.FlowField):
        vals = fem.interpolate_velocity(a, x)
    else:
        vals = np.asarray(a(x), dtype=np.float64)
    return x - gamma * dt * vals


class ForwardOperator:
    """Factored constant-matrix stepper for the forward scheme."""

    def __init__(self, space, nu: float, gamma: float, dt: float):
        if nu <= 0 or gamma < 0 or dt <= 0:
            raise ValueError("need nu > 0, gamma >= 0, dt > 0")
        self.space = space
        self.nu = nu
        self.gamma = gamma
        self.dt = dt
        self.M = fem.assemble_mass(space)
        self.K = fem.assemble_stiffness(space, nu)
        self.B = fem.assemble_divergence(space)
        Avv = add_scaled([(self.M, 1.0 / dt), (self.K, 1.0)])
        S = saddle_matrix(space, Avv, self.B)
        self.dofs = constrained_dofs(space)
        self._zeros = np.zeros(len(self.dofs))
        S2, _ = fem.apply_dirichlet(S, np.zeros(S.n_rows), self.dofs,
                                    self._zeros)
        self.system = S2
        self.lu = factorize(S2)

    def composed_prev_qp(self, u_prev_vel: np.ndarray) -> np.ndarray:
        """u_prev evaluated at the upwind feet of all volume quadrature
        points; (nt, nq, 2)."""
        sp = self.space
        prev2d = np.ascontiguousarray(u_prev_vel.reshape(-1, 2))
        if self.gamma == 0.0:
            # identity foot map: exact reference-point evaluation
            return sp.eval_at_qp(prev2d)
        qp = sp.qp_xy.reshape(-1, 2)
        aq = sp.eval_at_qp(prev2d).reshape(-1, 2)
        feet = qp - self.gamma * self.dt * aq
        elems, lams = geometry.locate_many(sp.mesh, feet)
        vals = sp.eval_field_at(prev2d, elems, lams)
        return vals.reshape(sp.qp_xy.shape)

    def step(self, u_prev_vel: np.ndarray, f_vec: np.ndarray
             ) -> fem.FlowField:
        sp = self.space
        comp = self.composed_prev_qp(u_prev_vel)
        rhs_vel = fem.assemble_rhs_from_qp(sp, comp) / self.dt + f_vec
        rhs = np.concatenate([rhs_vel, np.zeros(sp.n_pres)])
        rhs[self.dofs] = 0.0
        x = self.lu.solve(rhs)
        return fem.FlowField(sp, x[:sp.n_vel], x[sp.n_vel:])


def step_forward(u_prev: fem.FlowField, space, f, nu: float, gamma: float,
                 dt: float) -> fem.FlowField:
    """Single forward step (convenience wrapper; factors the system)."""
    op = ForwardOperator(space, nu, gamma, dt)
    f_vec = fem.assemble_load(space, f) if callable(f) else \
        (np.zeros(space.n_vel) if f is None else np.asarray(f))
    return op.step(u_prev.vel, f_vec)


def solve_forward(space, u0, f, nu: float, gamma: float, grid: TimeGrid,
                  operator: ForwardOperator | None = None) -> Trajectory:
    """March the forward scheme over the whole grid.

    u0 may be None (rest), a flat velocity dof vector, or a callable; a
    callable is L2-projected onto the velocity space.
    """
    if operator is None:
        operator = ForwardOperator(space, nu, gamma, grid.dt)
    f_vec = fem.assemble_load(space, f) if callable(f) else \
        (np.zeros(space.n_vel) if f is None else np.asarray(f))
    if u0 is None:
        u0_vel = np.zeros(space.n_vel)
    elif callable(u0):
        u0_vel = factorize(operator.M).solve(fem.assemble_load(space, u0))
    else:
        u0_vel = np.asarray(u0, dtype=np.float64).copy()
    fields = [fem.FlowField(space, u0_vel, np.zeros(space.n_pres))]
    for _ in range(grid.N):
        fields.append(operator.step(fields[-1].vel, f_vec))
    return Trajectory(grid, fields)


def downwind_foot(x: np.ndarray, a, gamma: float, dt: float) -> np.ndarray:
    """Adjoint characteristic foot: x + gamma*dt*a(x)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if gamma == 0.0:
        return x.copy()
    if isinstance(a, fem.FlowField):
        vals = fem.interpolate_velocity(a, x)
    else:
        vals = np.asarray(a(x), dtype=np.float64)
    return x + gamma * dt * vals


def solve_adjoint_backward(space, forward: Trajectory, uD_qp, nu: float,
                           gamma: float, grid: TimeGrid) -> Trajectory:
    """Backward sweep with terminal pair (0, 0).

    Step n solves (w^n - w^{n+1} o x_d)/dt + nu-stiffness
    + gamma [grad u^n]^T w^n with source 2(u^n - u_D) on omega.
    uD_qp is a single (n_omega, nq, 2) target array, or a sequence of
    N+1 such arrays when the target varies in time.
    """
    assert forward.grid.N == grid.N
    sp = space
    dt = grid.dt
    M = fem.assemble_mass(sp)
    K = fem.assemble_stiffness(sp, nu)
    B = fem.assemble_divergence(sp)
    dofs = constrained_dofs(sp)
    zeros = np.zeros(len(dofs))

    def target_at(n):
        if isinstance(uD_qp, np.ndarray):
            return uD_qp
        return uD_qp[n]

    fields = [None] * (grid.N + 1)
    fields[grid.N] = fem.FlowField.zero(sp)

    base = add_scaled([(M, 1.0 / dt), (K, 1.0)])
    lu_const = None
    if gamma == 0.0:
        S2, _ = fem.apply_dirichlet(
            saddle_matrix(sp, base, B), np.zeros(sp.n_vel + sp.n_pres),
            dofs, zeros)
        lu_const = factorize(S2)

    for n in range(grid.N - 1, -1, -1):
        u_n = forward.fields[n].vel
        u_np1 = forward.fields[n + 1]
        w_next = fields[n + 1].vel

        if gamma == 0.0:
            comp = sp.eval_at_qp(w_next.reshape(-1, 2))
            lu = lu_const
        else:
            qp = sp.qp_xy.reshape(-1, 2)
            aq = sp.eval_at_qp(u_np1.vel2d).reshape(-1, 2)
            feet = qp + gamma * dt * aq
            elems, lams = geometry.locate_many(sp.mesh, feet)
            comp = sp.eval_field_at(
                np.ascontiguousarray(w_next.reshape(-1, 2)), elems,
                lams).reshape(sp.qp_xy.shape)
            L = fem.assemble_convection_linearized(sp, u_n.reshape(-1, 2))
            Avv = add_scaled([(base, 1.0), (L.transpose(), gamma)])
            S2, _ = fem.apply_dirichlet(
                saddle_matrix(sp, Avv, B), np.zeros(sp.n_vel + sp.n_pres),
                dofs, zeros)
            lu = factorize(S2)

        rhs_vel = (fem.assemble_rhs_from_qp(sp, comp) / dt
                   + tracking_rhs(sp, u_n, target_at(n)))
        rhs = np.concatenate([rhs_vel, np.zeros(sp.n_pres)])
        rhs[dofs] = 0.0
        x = lu.solve(rhs)
        fields[n] = fem.FlowField(sp, x[:sp.n_vel], x[sp.n_vel:])
    return Trajectory(grid, fields)


def evaluate_time_objective(forward: Trajectory, uD_qp: np.ndarray,
                            nu: float, grid: TimeGrid) -> float:
    """Trapezoid-in-time average of nu * |u - u_D|^2 over omega."""
    sp = forward.space
    e = np.array([fem.l2sq_region(sp, f.vel, uD_qp, region="omega")
                  for f in forward.fields])
    weights = np.ones(grid.N + 1)
    weights[0] = weights[-1] = 0.5
    return float(nu * (weights @ e) / grid.N)


def energy_history(forward: Trajectory, nu: float, f_l2: float,
                   grid: TimeGrid, C: float = 4.0):
    """Left and right sides of the discrete energy bound per step index.

    lhs_n = |u^n|^2 + nu*dt*sum_{k<=n} |u^k|_V^2,
    rhs_n = C * (|u^0|^2 + (t_n/nu) * f_l2^2).
    """
    sp = forward.space
    l2 = np.array([fem.norms(sp, f.vel)["L2"] for f in forward.fields])
    h1 = np.array([fem.norms(sp, f.vel)["H1_semi"] for f in forward.fields])
    acc = np.cumsum(h1[1:] ** 2)
    lhs = l2[1:] ** 2 + nu * grid.dt * acc
    t = grid.times()[1:]
    rhs = C * (l2[0] ** 2 + t / nu * f_l2 ** 2)
    return lhs, rhs
