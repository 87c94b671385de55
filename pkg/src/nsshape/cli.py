"""Command-line front end.

Subcommands cover the pipeline stages: mesh generation, desired-velocity
generation, a single state solve, the two optimization loops, the
terminal-time sweep, and a Hausdorff distance utility for boundary files.

Exit codes: 0 success, 1 configuration or usage error, 2 solver failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import experiments, fem, geometry, shape_opt, stationary, transient
from .experiments import ConfigError
from .geometry import InvalidShapeError, MeshQualityError, ShapeSpec
from .sparse_linalg import SingularSystemError
from .stationary import NonConvergenceError

_SOLVER_ERRORS = (SingularSystemError, NonConvergenceError,
                  MeshQualityError)


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage failures exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _common(parser):
    parser.add_argument("--config", help="JSON scenario file; omitted "
                        "means the reference scenario")
    parser.add_argument("--out", help="artifact directory "
                        "(default nsshape_out)")
    parser.add_argument("--dump-fields", action="store_true",
                        help="also write VTK files of solution fields")
    parser.add_argument("--paper-scale", action="store_true",
                        help="keep full resolution and horizons instead of "
                        "the quick desk scaling")


def _load_config(args) -> experiments.ProblemConfig:
    if args.config:
        cfg = experiments.load_config(args.config)
    else:
        cfg = experiments.ProblemConfig()
    if not args.paper_scale:
        cfg = experiments.desk_scale(cfg)
    return cfg


def _out_dir(args) -> str:
    out = args.out or "nsshape_out"
    os.makedirs(out, exist_ok=True)
    return out


def _initial_mesh(cfg):
    ring = geometry.discretize_boundary(cfg.omega, cfg.h)
    poly = geometry.discretize_boundary(cfg.initial_domain, cfg.h)
    return geometry.triangulate(poly, cfg.h, internal=ring), ring


def _radius_stats(poly):
    pts = poly.points
    c = pts.mean(axis=0)
    r = np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1])
    return float(r.mean()), float(r.std() / max(r.mean(), 1e-300))


def _dump_flow(path, field):
    sp = field.space
    vel = field.vel2d
    fem.write_vtk(path, sp.mesh,
                  point_scalars={"pressure": field.pres,
                                 "speed": np.hypot(vel[:, 0], vel[:, 1])},
                  point_vectors={"velocity": vel})


def _cmd_mesh(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    mesh, _ = _initial_mesh(cfg)
    q = geometry.mesh_quality(mesh)
    geometry.save_polyline_csv(mesh.boundary_polyline(),
                               os.path.join(out, "boundary_initial.csv"))
    fem.write_vtk(os.path.join(out, "mesh.vtk"), mesh, title="mesh")
    print(f"mesh: {mesh.n_vertices} vertices, {q.n_triangles} triangles, "
          f"min angle {q.min_angle_deg:.2f} deg, "
          f"max edge {q.max_edge:.4g} (target h={cfg.h:g})")
    print(f"wrote {out}/mesh.vtk and {out}/boundary_initial.csv")
    return 0


def _cmd_udgen(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    u_D = experiments.generate_desired_velocity(cfg)
    path = os.path.join(out, "u_D.npz")
    experiments.save_flow(path, u_D)
    sp = u_D.space
    zeros = stationary.omega_target_qp(sp, lambda p: np.zeros_like(p))
    energy = fem.l2sq_region(sp, u_D.vel, zeros, region="omega")
    print(f"desired velocity: generation disk radius {cfg.uD_radius:g}, "
          f"viscosity {cfg.uD_nu:g}, "
          f"squared observation-region norm {energy:.6g}")
    print(f"wrote {path}")
    if args.dump_fields:
        vtk = os.path.join(out, "u_D.vtk")
        _dump_flow(vtk, u_D)
        print(f"wrote {vtk}")
    return 0


def _cmd_solve_stationary(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    mesh, _ = _initial_mesh(cfg)
    space = fem.build_space(mesh, omega=cfg.omega)
    f = experiments.resolve_source(cfg.f)
    flow, history = stationary.solve_navier_stokes_newton(
        space, f, cfg.nu, cfg.gamma, cfg.newton)
    u_D = experiments.generate_desired_velocity(cfg)
    uD_qp = stationary.omega_target_qp(
        space, lambda pts: fem.interpolate_velocity(u_D, pts))
    J = stationary.stationary_objective(space, flow, uD_qp, cfg.nu)
    print(f"state solve on the initial domain: {len(history)} Newton "
          f"steps, objective {J:.17g}")
    if args.dump_fields:
        vtk = os.path.join(out, "state.vtk")
        _dump_flow(vtk, flow)
        print(f"wrote {vtk}")
    return 0


def _cmd_optimize(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    u_D = experiments.generate_desired_velocity(cfg)
    f = experiments.resolve_source(cfg.f)
    if args.mode == "stationary":
        trace, boundary = shape_opt.optimize_stationary(cfg, u_D=u_D, f=f,
                                                        out_dir=out)
    else:
        if args.T is None:
            raise ConfigError("optimize --mode transient needs --T")
        transient.TimeGrid.from_T_dt(args.T, cfg.dt)  # early validation
        trace, boundary = shape_opt.optimize_transient(cfg, args.T,
                                                       u_D=u_D, f=f,
                                                       out_dir=out)
    geometry.save_polyline_csv(boundary,
                               os.path.join(out, "boundary_final.csv"))
    mean_r, rel_std = _radius_stats(boundary)
    Js = trace.J_values
    print(f"{args.mode} optimization: {len(Js) - 1} accepted steps, "
          f"status {trace.status}")
    print(f"objective {Js[0]:.17g} -> {Js[-1]:.17g}")
    print(f"final boundary: mean radius {mean_r:.4f}, "
          f"radial std/mean {rel_std:.4f}")
    print(f"wrote {out}/trace.csv and {out}/boundary_final.csv")
    if args.dump_fields:
        ring = geometry.discretize_boundary(cfg.omega, cfg.h)
        mesh = geometry.triangulate(boundary, cfg.h, internal=ring)
        space = fem.build_space(mesh, omega=cfg.omega)
        if args.mode == "stationary":
            field, _ = stationary.solve_navier_stokes_newton(
                space, f, cfg.nu, cfg.gamma, cfg.newton)
        else:
            grid = transient.TimeGrid.from_T_dt(args.T, cfg.dt)
            traj = transient.solve_forward(space, None, f, cfg.nu,
                                           cfg.gamma, grid)
            field = traj.fields[-1]
        vtk = os.path.join(out, "final_state.vtk")
        _dump_flow(vtk, field)
        print(f"wrote {vtk}")
    return 0


def _cmd_sweep(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    rows, slope = experiments.run_sweep(cfg, out_dir=out,
                                        workers=args.workers)
    for r in rows:
        print(f"T={r.T:<6g} J_T={r.J_T:.6g} J_s={r.J_s:.6g} "
              f"gap={r.gap:.6g} hausdorff={r.hausdorff:.6g} "
              f"iters={r.iters} status={r.status}")
    print(f"log-log gap slope over the largest horizons: {slope:.17g}")
    print(f"wrote {out}/gap_table.csv and {out}/gap_slope.txt")
    return 0


def _cmd_hausdorff(args):
    A = geometry.load_polyline_csv(args.A)
    B = geometry.load_polyline_csv(args.B)
    print(f"{geometry.hausdorff_distance(A, B):.17g}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="nsshape",
                     description="2D flow-tracking shape optimization")
    sub = parser.add_subparsers(dest="cmd", parser_class=_Parser)

    p = sub.add_parser("mesh", help="triangulate the initial domain")
    _common(p)
    p.set_defaults(func=_cmd_mesh)

    p = sub.add_parser("udgen", help="generate the desired velocity")
    _common(p)
    p.set_defaults(func=_cmd_udgen)

    p = sub.add_parser("solve-stationary",
                       help="solve the steady state on the initial domain")
    _common(p)
    p.set_defaults(func=_cmd_solve_stationary)

    p = sub.add_parser("optimize", help="run a shape optimization loop")
    _common(p)
    p.add_argument("--mode", choices=("stationary", "transient"),
                   default="stationary")
    p.add_argument("--T", type=float, default=None,
                   help="terminal time (transient mode)")
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("sweep", help="gap table over the horizon list")
    _common(p)
    p.add_argument("--workers", type=int, default=1,
                   help="parallel horizon jobs")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("hausdorff",
                       help="distance between two boundary CSV files")
    p.add_argument("A")
    p.add_argument("B")
    p.set_defaults(func=_cmd_hausdorff)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        # covers config, shape, and argument validation failures
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2


def main():
    raise SystemExit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
