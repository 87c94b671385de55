import numpy as np
import pytest

from nsshape import fem, geometry as g, sparse_linalg as sla, stationary as st

PI = np.pi


def square_mesh(nseg):
    s = np.arange(nseg) / nseg
    pts = np.concatenate([
        np.column_stack([s, np.zeros(nseg)]),
        np.column_stack([np.ones(nseg), s]),
        np.column_stack([1.0 - s, np.ones(nseg)]),
        np.column_stack([np.zeros(nseg), 1.0 - s]),
    ])
    return g.triangulate(g.Polyline(pts), 1.0 / nseg)


def u_exact(p):
    x, y = p[:, 0], p[:, 1]
    return np.column_stack([np.sin(PI * x) ** 2 * np.sin(2 * PI * y),
                            -np.sin(2 * PI * x) * np.sin(PI * y) ** 2])


def grad_u_exact(p):
    x, y = p[:, 0], p[:, 1]
    u1x = PI * np.sin(2 * PI * x) * np.sin(2 * PI * y)
    u1y = 2 * PI * np.sin(PI * x) ** 2 * np.cos(2 * PI * y)
    u2x = -2 * PI * np.cos(2 * PI * x) * np.sin(PI * y) ** 2
    u2y = -PI * np.sin(2 * PI * x) * np.sin(2 * PI * y)
    return np.stack([np.stack([u1x, u1y], -1),
                     np.stack([u2x, u2y], -1)], -2)


def manufactured_source(nu, gamma):
    def f(p):
        x, y = p[:, 0], p[:, 1]
        u = u_exact(p)
        gu = grad_u_exact(p)
        lap1 = 2 * PI ** 2 * (np.cos(2 * PI * x)
                              - 2 * np.sin(PI * x) ** 2) * np.sin(2 * PI * y)
        lap2 = -2 * PI ** 2 * (np.cos(2 * PI * y)
                               - 2 * np.sin(PI * y) ** 2) * np.sin(2 * PI * x)
        conv = np.einsum("pcd,pd->pc", gu, u)
        px = 2 * PI * np.cos(2 * PI * x) * np.cos(2 * PI * y)
        py = -2 * PI * np.sin(2 * PI * x) * np.sin(2 * PI * y)
        return np.column_stack([-nu * lap1 + gamma * conv[:, 0] + px,
                                -nu * lap2 + gamma * conv[:, 1] + py])
    return f


def cubic_source(p):
    x, y = p[:, 0], p[:, 1]
    return np.column_stack([0.1 * y ** 3, -0.1 * x ** 3])


def disk_target(p):
    # closed form of the generated target on the disk of radius 2
    r2 = p[:, 0] ** 2 + p[:, 1] ** 2
    fac = (16.0 - r2 ** 2) / 64.0
    return np.column_stack([fac * p[:, 1], -fac * p[:, 0]])


def l2_error(sp, vel, exact):
    uq = sp.eval_at_qp(vel.reshape(-1, 2))
    ue = exact(sp.qp_xy.reshape(-1, 2)).reshape(uq.shape)
    return float(np.sqrt(np.einsum("tq,tqc,tqc->", sp.wdet,
                                   uq - ue, uq - ue)))


@pytest.fixture(scope="module")
def disk_setup():
    poly = g.discretize_boundary(g.ShapeSpec.circle(0, 0, 2), 0.2)
    mesh = g.triangulate(poly, 0.2)
    sp = fem.build_space(mesh, omega=g.ShapeSpec.circle(0, 0, 1))
    flow, hist = st.solve_navier_stokes_newton(sp, cubic_source, 1.0, 1.0)
    uD_qp = st.omega_target_qp(sp, disk_target)
    return sp, flow, hist, uD_qp


# ---------------------------------------------------------------------------
# stokes


def test_stokes_zero_source():
    sp = fem.build_space(square_mesh(8))
    fl = st.solve_stokes(sp, None, 1.0)
    assert np.abs(fl.vel).max() == 0.0


def test_stokes_discrete_divergence():
    sp = fem.build_space(square_mesh(8))
    fl = st.solve_stokes(sp, manufactured_source(1.0, 0.0), 1.0)
    B = fem.assemble_divergence(sp)
    assert np.linalg.norm(sla.spmv(B, fl.vel)) <= 1e-9


def test_stokes_manufactured_order():
    errs = [l2_error(fem.build_space(square_mesh(n)),
                     st.solve_stokes(fem.build_space(square_mesh(n)),
                                     manufactured_source(1.0, 0.0),
                                     1.0).vel, u_exact)
            for n in (8, 16)]
    order = np.log2(errs[0] / errs[1])
    assert order > 2.7


def test_stokes_pressure_mean_zero():
    sp = fem.build_space(square_mesh(8))
    fl = st.solve_stokes(sp, manufactured_source(1.0, 0.0), 1.0)
    lump = np.zeros(sp.n_pres)
    np.add.at(lump, sp.mesh.triangles.ravel(),
              np.repeat(sp.areas / 3.0, 3))
    assert abs(lump @ fl.pres) < 1e-10


# ---------------------------------------------------------------------------
# newton


def test_newton_gamma_zero_single_step():
    sp = fem.build_space(square_mesh(8))
    f = manufactured_source(1.0, 0.0)
    fl, hist = st.solve_navier_stokes_newton(sp, f, 1.0, 0.0)
    ref = st.solve_stokes(sp, f, 1.0)
    assert len(hist) == 1
    assert np.abs(fl.vel - ref.vel).max() < 1e-10


def test_newton_manufactured_order():
    errs = []
    for n in (8, 16):
        sp = fem.build_space(square_mesh(n))
        fl, _ = st.solve_navier_stokes_newton(
            sp, manufactured_source(1.0, 1.0), 1.0, 1.0)
        errs.append(l2_error(sp, fl.vel, u_exact))
    assert np.log2(errs[0] / errs[1]) > 2.7


def test_newton_quadratic_tail(disk_setup):
    _, _, hist, _ = disk_setup
    assert len(hist) <= 8
    assert hist[-1] < 1e-10
    if len(hist) >= 2 and hist[-2] < 1.0:
        assert hist[-1] <= hist[-2] ** 1.5 + 1e-15


def test_newton_max_iter_error():
    sp = fem.build_space(square_mesh(8))
    with pytest.raises(st.NonConvergenceError) as info:
        st.solve_navier_stokes_newton(
            sp, manufactured_source(1.0, 1.0), 1.0, 1.0,
            st.NewtonSettings(tol=1e-16, max_iter=2))
    assert len(info.value.history) == 2


def test_newton_dirichlet_values():
    sp = fem.build_space(square_mesh(8))
    fl, _ = st.solve_navier_stokes_newton(
        sp, manufactured_source(1.0, 1.0), 1.0, 1.0)
    assert np.abs(fl.vel[sp.dirichlet_dofs]).max() == 0.0


def test_energy_identity(disk_setup):
    sp, flow, _, _ = disk_setup
    b = fem.assemble_load(sp, cubic_source)
    lhs = fem.norms(sp, flow.vel)["H1_semi"] ** 2
    assert abs(lhs - b @ flow.vel) <= 1e-8 * abs(lhs)


# ---------------------------------------------------------------------------
# adjoint


def test_adjoint_zero_for_matched_target(disk_setup):
    sp, flow, _, _ = disk_setup
    uD_self = sp.eval_at_qp(flow.vel2d)[sp.omega_elems]
    adj = st.solve_stationary_adjoint(sp, flow, uD_self, 1.0, 1.0)
    assert np.abs(adj.vel).max() == 0.0


def test_adjoint_gamma_zero_is_stokes(disk_setup):
    sp, _, _, uD_qp = disk_setup
    fl0 = st.solve_stokes(sp, cubic_source, 1.0)
    adj = st.solve_stationary_adjoint(sp, fl0, uD_qp, 1.0, 0.0)
    rhs = st.tracking_rhs(sp, fl0.vel, uD_qp)
    ref = st.solve_stokes(sp, rhs, 1.0)
    assert np.abs(adj.vel - ref.vel).max() <= 1e-12


def test_adjoint_duality_identity(disk_setup):
    sp, flow, _, uD_qp = disk_setup
    adj = st.solve_stationary_adjoint(sp, flow, uD_qp, 1.0, 1.0)
    K = fem.assemble_stiffness(sp, 1.0)
    B = fem.assemble_divergence(sp)
    N = fem.assemble_convection(sp, flow.vel2d)
    L = fem.assemble_convection_linearized(sp, flow.vel2d)
    Avv = st._add_vel_blocks(sp, K, N, L, 1.0)
    Jmat = st.saddle_matrix(sp, Avv, B).to_scipy()
    track = st.tracking_rhs(sp, flow.vel, uD_qp)
    zpi = np.concatenate([adj.vel, adj.pres])
    rng = np.random.default_rng(11)
    for _ in range(10):
        phi_v = rng.standard_normal(sp.n_vel)
        phi_v[sp.dirichlet_dofs] = 0.0
        phi = np.concatenate([phi_v, rng.standard_normal(sp.n_pres)])
        lhs = (Jmat @ phi) @ zpi
        rhs = track @ phi_v
        assert abs(lhs - rhs) <= 1e-8 * max(abs(rhs), 1e-12)


def test_adjoint_matrix_is_jacobian_transpose(disk_setup):
    sp, flow, _, _ = disk_setup
    K = fem.assemble_stiffness(sp, 1.0)
    N = fem.assemble_convection(sp, flow.vel2d)
    L = fem.assemble_convection_linearized(sp, flow.vel2d)
    Avv = st._add_vel_blocks(sp, K, N, L, 1.0)
    At = st.adjoint_matrix(sp, flow.vel, 1.0, 1.0)
    assert np.abs(At.to_dense() - Avv.to_dense().T).max() <= 1e-12


# ---------------------------------------------------------------------------
# reference-scenario values


def test_disk_target_matches_closed_form():
    poly = g.discretize_boundary(g.ShapeSpec.circle(0, 0, 2), 0.1)
    mesh = g.triangulate(poly, 0.1)
    sp = fem.build_space(mesh)
    fl = st.solve_stokes(sp, cubic_source, 0.2)
    err = l2_error(sp, fl.vel, disk_target)
    nrm = fem.norms(sp, fl.vel)["L2"]
    assert err <= 5e-3 * nrm


def test_stationary_objective_on_disks():
    # closed-form objective for the rotational flow family on circles
    for R in (2.0, 78.0 ** 0.25):
        poly = g.discretize_boundary(g.ShapeSpec.circle(0, 0, R), 0.1)
        mesh = g.triangulate(poly, 0.1)
        sp = fem.build_space(mesh, omega=g.ShapeSpec.circle(0, 0, 1))
        fl, _ = st.solve_navier_stokes_newton(sp, cubic_source, 1.0, 1.0)
        uD_qp = st.omega_target_qp(sp, disk_target)
        J = st.stationary_objective(sp, fl, uD_qp, 1.0)
        D = R ** 4 - 80.0
        J_exact = (2 * np.pi / 102400) * (D * D / 4 + D + 4.0 / 3.0)
        assert J == pytest.approx(J_exact, rel=0.07)
