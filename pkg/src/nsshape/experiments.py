"""Scenario configuration, desired-velocity generation, the stationary
run wrapper, and the terminal-time sweep that tabulates objective gaps
and boundary distances."""

from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import os
import time

import numpy as np

from . import fem, geometry, shape_opt, stationary, transient
from .geometry import Polyline, ShapeSpec
from .stationary import NewtonSettings

# how many times the desired-velocity generation problem has been solved;
# lets tests prove the sweep reuses a single generation solve
UD_SOLVE_COUNT = 0


class ConfigError(ValueError):
    """Invalid or unparseable configuration; message names the field."""


def body_force(pts: np.ndarray) -> np.ndarray:
    """The cubic rotational source (y^3/10, -x^3/10)."""
    out = np.empty_like(pts)
    out[:, 0] = 0.1 * pts[:, 1] ** 3
    out[:, 1] = -0.1 * pts[:, 0] ** 3
    return out


def _zero_force(pts: np.ndarray) -> np.ndarray:
    return np.zeros_like(pts)


_SOURCE_TAGS = {"cubic": body_force, "zero": _zero_force}


def resolve_source(f_spec):
    """Builtin tag or {"fx": [[c, px, py], ...], "fy": [...]} polynomial."""
    if isinstance(f_spec, str):
        if f_spec not in _SOURCE_TAGS:
            raise ConfigError(f"f: unknown source tag {f_spec!r}")
        return _SOURCE_TAGS[f_spec]
    if isinstance(f_spec, dict):
        extra = set(f_spec) - {"fx", "fy"}
        if extra or set(f_spec) != {"fx", "fy"}:
            raise ConfigError("f: polynomial spec needs exactly the keys "
                              "fx and fy")
        terms = {c: [(float(t[0]), int(t[1]), int(t[2]))
                     for t in f_spec[c]] for c in ("fx", "fy")}

        def poly(pts):
            x, y = pts[:, 0], pts[:, 1]
            out = np.zeros_like(pts)
            for k, comp in enumerate(("fx", "fy")):
                for c, px, py in terms[comp]:
                    out[:, k] += c * x ** px * y ** py
            return out

        return poly
    raise ConfigError("f: expected a tag string or a polynomial spec")


def _default_omega():
    return ShapeSpec.circle(0.0, 0.0, 1.0)


def _default_initial():
    return ShapeSpec.ellipse(0.0, 0.0, 2.0, 3.0)


@dataclasses.dataclass(frozen=True)
class ProblemConfig:
    """Scenario data; defaults reproduce the reference experiment."""

    nu: float = 1.0
    gamma: float = 1.0
    f: object = "cubic"
    omega: ShapeSpec = dataclasses.field(default_factory=_default_omega)
    initial_domain: ShapeSpec = dataclasses.field(
        default_factory=_default_initial)
    holdall_radius: float = 6.0
    h: float = 0.1
    dt: float = 0.2
    T_list: tuple = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0)
    eps_robin: float = 0.05
    alpha: float = 1.0
    tol: float = 1e-6
    max_iters: int = 100
    newton: NewtonSettings = dataclasses.field(
        default_factory=NewtonSettings)
    u0: str = "zero"
    uD_nu: float = 0.2
    uD_radius: float = 2.0

    def __post_init__(self):
        for name in ("nu", "h", "dt", "eps_robin", "alpha", "tol",
                     "holdall_radius", "uD_nu", "uD_radius"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name}: must be positive")
        if self.gamma < 0:
            raise ConfigError("gamma: must be nonnegative")
        if self.max_iters < 1:
            raise ConfigError("max_iters: must be at least 1")
        if self.u0 != "zero":
            raise ConfigError("u0: only the zero initial state is defined")
        if not self.T_list:
            raise ConfigError("T_list: must not be empty")
        for T in self.T_list:
            if not T > 0:
                raise ConfigError("T_list: terminal times must be positive")
            if abs(T - round(T / self.dt) * self.dt) > 1e-9:
                raise ConfigError(
                    f"T_list: T={T} is not an integer multiple of "
                    f"dt={self.dt}")
        resolve_source(self.f)


def desk_scale(config: ProblemConfig) -> ProblemConfig:
    """Coarsened variant for quick runs: h at least 0.2, horizons <= 32."""
    T_kept = tuple(t for t in config.T_list if t <= 32.0 + 1e-9)
    if not T_kept:
        T_kept = (min(config.T_list),)
    return dataclasses.replace(config, h=max(config.h, 0.2), T_list=T_kept)


_SHAPE_KEYS = {
    "circle": {"kind", "center", "radius"},
    "ellipse": {"kind", "center", "semi_axis_x", "semi_axis_y"},
    "polyline": {"kind", "points"},
}


def _shape_from_json(field: str, obj) -> ShapeSpec:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ConfigError(f"{field}: expected an object with a 'kind' key")
    kind = obj["kind"]
    if kind not in _SHAPE_KEYS:
        raise ConfigError(f"{field}: unknown shape kind {kind!r}")
    extra = set(obj) - _SHAPE_KEYS[kind]
    if extra:
        raise ConfigError(f"{field}: unknown key(s) {sorted(extra)}")
    try:
        if kind == "circle":
            cx, cy = obj["center"]
            return ShapeSpec.circle(float(cx), float(cy),
                                    float(obj["radius"]))
        if kind == "ellipse":
            cx, cy = obj["center"]
            return ShapeSpec.ellipse(float(cx), float(cy),
                                     float(obj["semi_axis_x"]),
                                     float(obj["semi_axis_y"]))
        pts = np.asarray(obj["points"], dtype=np.float64)
        return ShapeSpec.from_polyline(Polyline(pts, closed=True))
    except (KeyError, TypeError, ValueError, geometry.InvalidShapeError) \
            as exc:
        raise ConfigError(f"{field}: {exc}") from exc


_TOP_KEYS = {"nu", "gamma", "f", "omega", "initial_domain",
             "holdall_radius", "h", "dt", "T_list", "eps_robin", "alpha",
             "tol", "max_iters", "newton", "u0", "uD"}


def load_config(path) -> ProblemConfig:
    """Parse a JSON config; absent keys fall back to the reference
    scenario, unknown keys are rejected."""
    with open(path) as fh:
        text = fh.read()
    if not text.strip():
        return ProblemConfig()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object")
    extra = set(raw) - _TOP_KEYS
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)}")

    kw = {}
    for name in ("nu", "gamma", "holdall_radius", "h", "dt", "eps_robin",
                 "alpha", "tol"):
        if name in raw:
            try:
                kw[name] = float(raw[name])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name}: {exc}") from exc
    if "max_iters" in raw:
        kw["max_iters"] = int(raw["max_iters"])
    if "u0" in raw:
        kw["u0"] = raw["u0"]
    if "f" in raw:
        kw["f"] = raw["f"]
    if "T_list" in raw:
        if not isinstance(raw["T_list"], list):
            raise ConfigError("T_list: expected a list of numbers")
        kw["T_list"] = tuple(float(t) for t in raw["T_list"])
    if "omega" in raw:
        kw["omega"] = _shape_from_json("omega", raw["omega"])
    if "initial_domain" in raw:
        kw["initial_domain"] = _shape_from_json("initial_domain",
                                                raw["initial_domain"])
    if "newton" in raw:
        obj = raw["newton"]
        extra = set(obj) - {"tol", "max_iter", "damping"}
        if extra:
            raise ConfigError(f"newton: unknown key(s) {sorted(extra)}")
        try:
            kw["newton"] = NewtonSettings(**obj)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"newton: {exc}") from exc
    if "uD" in raw:
        obj = raw["uD"]
        extra = set(obj) - {"nu_gen", "radius_gen"}
        if extra:
            raise ConfigError(f"uD: unknown key(s) {sorted(extra)}")
        if "nu_gen" in obj:
            kw["uD_nu"] = float(obj["nu_gen"])
        if "radius_gen" in obj:
            kw["uD_radius"] = float(obj["radius_gen"])
    return ProblemConfig(**kw)


# ---------------------------------------------------------------------------
# desired velocity


def generate_desired_velocity(config: ProblemConfig) -> fem.FlowField:
    """Stokes solve of the generation problem on the disk of radius
    uD_radius with viscosity uD_nu and the configured source."""
    global UD_SOLVE_COUNT
    spec = ShapeSpec.circle(0.0, 0.0, config.uD_radius)
    ring = geometry.discretize_boundary(config.omega, config.h)
    mesh = geometry.triangulate(
        geometry.discretize_boundary(spec, config.h), config.h,
        internal=ring)
    space = fem.build_space(mesh, omega=config.omega)
    field = stationary.solve_stokes(space, resolve_source(config.f),
                                    config.uD_nu)
    UD_SOLVE_COUNT += 1
    return field


def save_flow(path, field: fem.FlowField):
    m = field.space.mesh
    np.savez(path, vertices=m.vertices, triangles=m.triangles,
             boundary_edges=m.boundary_edges,
             boundary_labels=m.boundary_labels, h_target=m.h_target,
             vel=field.vel, pres=field.pres)


def load_flow(path) -> fem.FlowField:
    d = np.load(path)
    mesh = geometry.Mesh(d["vertices"], d["triangles"],
                         d["boundary_edges"], d["boundary_labels"],
                         float(d["h_target"]))
    space = fem.build_space(mesh)
    return fem.FlowField(space, d["vel"], d["pres"])


# ---------------------------------------------------------------------------
# runs


def run_stationary(config: ProblemConfig, u_D: fem.FlowField | None = None,
                   out_dir=None) -> dict:
    """Full steady shape optimization; returns J*, boundary, and trace."""
    if u_D is None:
        u_D = generate_desired_velocity(config)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    trace, boundary = shape_opt.optimize_stationary(
        config, u_D=u_D, f=resolve_source(config.f), out_dir=out_dir)
    if out_dir is not None:
        geometry.save_polyline_csv(boundary,
                                   os.path.join(out_dir,
                                                "boundary_final.csv"))
    return {"J_s_star": trace.rows[-1]["J"], "boundary": boundary,
            "trace": trace}


@dataclasses.dataclass
class GapRow:
    T: float
    J_T: float
    J_s: float
    gap: float
    hausdorff: float
    iters: int
    status: str
    wall_time_s: float


def _transient_job(config, T, u_D, J_s, boundary_s, out_dir) -> GapRow:
    t0 = time.perf_counter()
    try:
        trace, boundary = shape_opt.optimize_transient(
            config, T, u_D=u_D, f=resolve_source(config.f),
            out_dir=out_dir)
        J_T = trace.rows[-1]["J"]
        gap = abs(J_T - J_s)
        dH = geometry.hausdorff_distance(boundary, boundary_s)
        return GapRow(T, J_T, J_s, gap, dH, len(trace.rows) - 1,
                      trace.status, time.perf_counter() - t0)
    except Exception as exc:  # per-horizon failures must not kill the sweep
        return GapRow(T, float("nan"), J_s, float("nan"), float("nan"), 0,
                      f"error:{type(exc).__name__}",
                      time.perf_counter() - t0)


def _job_from_payload(payload):
    (config, T, mesh_arrays, vel, pres, J_s, bpts) = payload
    mesh = geometry.Mesh(*mesh_arrays)
    space = fem.build_space(mesh)
    u_D = fem.FlowField(space, vel, pres)
    return _transient_job(config, T, u_D, J_s,
                          Polyline(bpts, closed=True), None)


def fit_gap_slope(rows) -> float:
    """Least-squares slope of log(gap) vs log(T) over the largest four
    usable horizons; NaN when fewer than two are usable."""
    pts = [(r.T, r.gap) for r in rows
           if np.isfinite(r.gap) and r.gap > 0
           and not r.status.startswith("error")]
    pts = sorted(pts)[-4:]
    if len(pts) < 2:
        return float("nan")
    logT = np.log([p[0] for p in pts])
    logg = np.log([p[1] for p in pts])
    return float(np.polyfit(logT, logg, 1)[0])


def write_gap_table(rows, path):
    lines = ["T,J_T,J_s,gap,hausdorff,iters,status,wall_time_s"]
    for r in rows:
        lines.append(f"{r.T:.17g},{r.J_T:.17g},{r.J_s:.17g},{r.gap:.17g},"
                     f"{r.hausdorff:.17g},{r.iters},{r.status},"
                     f"{r.wall_time_s:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def run_sweep(config: ProblemConfig, out_dir=None, workers: int = 1):
    """Stationary run plus one transient optimization per horizon.

    Returns (rows sorted by T, fitted slope); writes gap_table.csv and
    gap_slope.txt when out_dir is given.  The desired velocity is solved
    once and shared by every job.
    """
    u_D = generate_desired_velocity(config)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_flow(os.path.join(out_dir, "u_D.npz"), u_D)
    stat_dir = os.path.join(out_dir, "stationary") if out_dir else None
    stat = run_stationary(config, u_D=u_D, out_dir=stat_dir)
    J_s, boundary_s = stat["J_s_star"], stat["boundary"]

    horizons = sorted(config.T_list)
    if workers > 1:
        m = u_D.space.mesh
        payloads = [(config, T,
                     (m.vertices, m.triangles, m.boundary_edges,
                      m.boundary_labels, m.h_target),
                     u_D.vel, u_D.pres, J_s, boundary_s.points)
                    for T in horizons]
        with concurrent.futures.ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_job_from_payload, payloads))
    else:
        rows = []
        for T in horizons:
            tdir = (os.path.join(out_dir, f"transient_T{T:g}")
                    if out_dir else None)
            if tdir is not None:
                os.makedirs(tdir, exist_ok=True)
            rows.append(_transient_job(config, T, u_D, J_s, boundary_s,
                                       tdir))
    slope = fit_gap_slope(rows)
    if out_dir is not None:
        write_gap_table(rows, os.path.join(out_dir, "gap_table.csv"))
        with open(os.path.join(out_dir, "gap_slope.txt"), "w") as fh:
            fh.write(f"{slope:.17g}\n")
    return rows, slope
