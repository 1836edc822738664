"""Command-line front end: ``stokes-ccbm <command> [options]``.

Options may also come from a ``key=value`` file given with ``--config``;
flags on the command line take precedence. Exit codes: 0 success, 2 invalid
configuration or input, 3 solver failure, 4 gradient check failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import DomainError, NumericError, ParseError, SolverError
from .experiments import (
    STRESS_CONVENTIONS,
    ErrorReport,
    manufactured_case,
    mesh_for_h,
    run_case,
    sweep_eps,
    sweep_h,
    sweep_noise,
)
from .mesh import GAMMA1, generate_annulus, load_mesh, save_mesh
from .solver import adjoint_directional_derivative, cost_at, operators
from .spaces import build_dof_map

log = logging.getLogger("stokes_ccbm")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4

TRACE_COLUMNS = ["theta", "arc_s", "phi1", "phi2", "zeta1", "zeta2"]
EXACT_COLUMNS = ["phi1_exact", "phi2_exact", "zeta1_exact", "zeta2_exact"]
SOLUTION_COLUMNS = ["field", "component", "dof_index", "x", "y", "value"]
GRADCHECK_COLUMNS = ["point", "direction", "adjoint", "finite_difference", "rel_discrepancy"]


class ConfigError(Exception):
    pass


def _float_list(text):
    try:
        vals = [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise ValueError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise ValueError("empty list")
    return vals


# name -> (converter, default, check, message)
_POSITIVE = (lambda v: v > 0, "must be positive")
_NONNEG = (lambda v: v >= 0, "must be nonnegative")
_KEYS = {
    "mu": (float, 1.0, *_POSITIVE),
    "eps": (float, 1e-6, *_POSITIVE),
    "delta": (float, 0.0, lambda v: 0 <= v <= 1, "must lie in [0, 1]"),
    "seed": (int, 0, *_NONNEG),
    "r": (float, 0.5, *_POSITIVE),
    "R": (float, 1.0, *_POSITIVE),
    "rings": (int, None, lambda v: v >= 1, "must be >= 1"),
    "sectors": (int, None, lambda v: v >= 3, "must be >= 3"),
    "h": (float, 0.1, *_POSITIVE),
    "mesh": (str, None, lambda v: True, ""),
    "stress": (str, "deformation", lambda v: v in STRESS_CONVENTIONS, f"must be one of {STRESS_CONVENTIONS}"),
    "out_dir": (str, ".", lambda v: True, ""),
    "out": (str, None, lambda v: True, ""),
    "solution_csv": (int, 0, lambda v: v in (0, 1), "must be 0 or 1"),
    "h_list": (_float_list, [0.4, 0.2, 0.1, 0.05], lambda v: all(x > 0 for x in v), "entries must be positive"),
    "eps_list": (_float_list, [1e-2, 1e-3, 1e-4, 1e-5, 1e-6], lambda v: all(x > 0 for x in v), "entries must be positive"),
    "delta_list": (_float_list, [0.01, 0.02, 0.03, 0.04, 0.05], lambda v: all(0 <= x <= 1 for x in v), "entries must lie in [0, 1]"),
    "reps": (int, 10, lambda v: v >= 1, "must be >= 1"),
    "directions": (int, 5, lambda v: v >= 1, "must be >= 1"),
    "points": (int, 3, lambda v: v >= 1, "must be >= 1"),
    "tol": (float, 1e-5, *_POSITIVE),
    "tau": (float, 1e-4, *_POSITIVE),
}


def read_config_file(path):
    """Parse ``key=value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _KEYS:
            raise ConfigError(f"config line {n}: unknown key {key!r}")
        out[key] = value
    return out


def resolve_config(args):
    """Merge flags over the config file over defaults, validating every key."""
    raw = read_config_file(args.config) if args.config else {}
    cfg = {}
    for key, (conv, default, check, msg) in _KEYS.items():
        flag = getattr(args, key, None)
        value = flag if flag is not None else raw.get(key, default)
        if value is not None and isinstance(value, str) and conv is not str:
            try:
                value = conv(value)
            except ValueError as exc:
                raise ConfigError(f"invalid value for {key}: {exc}") from None
        if value is not None and not check(value):
            raise ConfigError(f"invalid value for {key}: {value!r} {msg}")
        cfg[key] = value
    if cfg["r"] >= cfg["R"]:
        raise ConfigError(f"invalid radii: need r < R, got r={cfg['r']}, R={cfg['R']}")
    if (cfg["rings"] is None) != (cfg["sectors"] is None):
        raise ConfigError("rings and sectors must be given together")
    return cfg


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _out_dir(cfg):
    d = Path(cfg["out_dir"])
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"out_dir: cannot create {d}: {exc.strerror}") from None
    return d


def build_mesh(cfg):
    if cfg["mesh"]:
        return load_mesh(cfg["mesh"])
    if cfg["rings"] is not None:
        return generate_annulus(cfg["r"], cfg["R"], cfg["rings"], cfg["sectors"])
    return mesh_for_h(cfg["h"], cfg["r"], cfg["R"])


def trace_rows(mesh, traces, case=None):
    """Trace table on ``Gamma1`` ordered by angle, with cumulative polygon arc length."""
    pts = mesh.vertices[traces.vertices]
    theta = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * np.pi)
    order = np.argsort(theta, kind="stable")
    p = pts[order]
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(p, axis=0).T))])
    cols = [theta[order], arc, *traces.phi[order].T, *traces.zeta[order].T]
    if case is not None:
        x, y = p.T
        cols += [*case.phi(x, y), *case.zeta(x, y)]
    return list(zip(*cols))


def solution_rows(sol):
    mesh, dm = sol.ops.mesh, sol.ops.dofmap
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    xy = np.vstack([mesh.vertices, centroids])
    nc = dm.velocity_dofs_per_component
    rows = []
    for name in sol.layout.fields:
        if name.startswith(("u", "w")):
            vals = sol.field(name)
            for comp in (1, 2):
                block = vals[(comp - 1) * nc : comp * nc]
                rows += [(name, comp, i, *xy[i], block[i]) for i in range(nc)]
        else:
            vals = sol.pressure(name)
            rows += [(name, 1, i, *mesh.vertices[i], vals[i]) for i in range(len(vals))]
    return rows


def _report_rows(reports):
    return [r.row() for r in reports]


def cmd_mesh(cfg):
    mesh = build_mesh(cfg)
    path = Path(cfg["out"]) if cfg["out"] else _out_dir(cfg) / "mesh.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_mesh(mesh, path)
    print(f"wrote {path}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles, h={mesh.h:.6g}")
    return EXIT_OK


def _case(cfg):
    return manufactured_case(cfg["mu"], cfg["stress"])


def cmd_solve(cfg):
    out = _out_dir(cfg)
    mesh, case = build_mesh(cfg), _case(cfg)
    report, sol, traces = run_case(mesh, case, cfg["eps"], cfg["delta"], cfg["seed"])
    write_csv(out / "traces.csv", TRACE_COLUMNS + EXACT_COLUMNS, trace_rows(mesh, traces, case))
    write_csv(out / "errors.csv", ErrorReport.FIELDS, [report.row()])
    if cfg["solution_csv"]:
        write_csv(out / "solution.csv", SOLUTION_COLUMNS, solution_rows(sol))
    print(
        f"h={report.h:.4g} eps={report.eps:g} delta={report.delta:g} "
        f"err_phi={report.err_phi:.4e} err_zeta={report.err_zeta:.4e} "
        f"err_u={report.err_u:.4e} err_p={report.err_p:.4e} residual={sol.residual:.2e}"
    )
    return EXIT_OK


def _print_reports(reports):
    for r in reports:
        print(
            f"h={r.h:.4g} eps={r.eps:g} delta={r.delta:g} "
            f"err_phi={r.err_phi:.4e} err_zeta={r.err_zeta:.4e}"
        )


def cmd_sweep_h(cfg):
    out = _out_dir(cfg)
    reports = sweep_h(_case(cfg), cfg["eps"], cfg["h_list"], cfg["r"], cfg["R"])
    write_csv(out / "sweep_h.csv", ErrorReport.FIELDS, _report_rows(reports))
    _print_reports(reports)
    return EXIT_OK


def cmd_sweep_eps(cfg):
    out = _out_dir(cfg)
    reports = sweep_eps(_case(cfg), build_mesh(cfg), cfg["eps_list"])
    write_csv(out / "sweep_eps.csv", ErrorReport.FIELDS, _report_rows(reports))
    _print_reports(reports)
    return EXIT_OK


def cmd_sweep_noise(cfg):
    out = _out_dir(cfg)
    levels = sweep_noise(
        _case(cfg), build_mesh(cfg), cfg["eps"], cfg["delta_list"], cfg["reps"], cfg["seed"]
    )
    write_csv(out / "sweep_noise.csv", ErrorReport.FIELDS, [s.mean.row() for s in levels])
    write_csv(out / "sweep_noise_max.csv", ErrorReport.FIELDS, [s.max.row() for s in levels])
    write_csv(
        out / "sweep_noise_runs.csv",
        ErrorReport.FIELDS,
        [r.row() for s in levels for r in s.runs],
    )
    _print_reports([s.mean for s in levels])
    return EXIT_OK


def gradcheck(ops, case, data, eps, n_points, n_directions, tau, seed):
    """Adjoint pairing against central differences of the cost at random points.

    Returns rows ``(point, direction, adjoint, fd, rel_discrepancy)``.
    """
    rng = np.random.default_rng(seed)
    n = len(ops.dofmap.boundary_vertices(GAMMA1))
    rows = []
    for i in range(n_points):
        phi, zeta = rng.standard_normal((n, 2)), rng.standard_normal((n, 2))
        for j in range(n_directions):
            eta, s = rng.standard_normal((n, 2)), rng.standard_normal((n, 2))
            adj = adjoint_directional_derivative(ops, data, case.f, phi, zeta, eta, s, eps)
            jp = cost_at(ops, data, case.f, phi + tau * eta, zeta + tau * s, eps)
            jm = cost_at(ops, data, case.f, phi - tau * eta, zeta - tau * s, eps)
            fd = (jp - jm) / (2 * tau)
            rel = abs(adj - fd) / max(abs(fd), abs(adj), np.finfo(float).tiny)
            rows.append((i, j, adj, fd, rel))
    return rows


def cmd_gradcheck(cfg):
    out = _out_dir(cfg)
    mesh, case = build_mesh(cfg), _case(cfg)
    ops = operators(mesh, build_dof_map(mesh), cfg["mu"])
    rows = gradcheck(
        ops,
        case,
        case.data(cfg["delta"], cfg["seed"]),
        cfg["eps"],
        cfg["points"],
        cfg["directions"],
        cfg["tau"],
        cfg["seed"],
    )
    write_csv(out / "gradcheck.csv", GRADCHECK_COLUMNS, rows)
    worst = max(r[-1] for r in rows)
    for r in rows:
        print(f"point {r[0]} direction {r[1]}: adjoint={r[2]:.10e} fd={r[3]:.10e} rel={r[4]:.2e}")
    ok = worst <= cfg["tol"]
    print(f"max relative discrepancy {worst:.3e} ({'ok' if ok else 'FAIL'}, tol {cfg['tol']:g})")
    return EXIT_OK if ok else EXIT_CHECK


COMMANDS = {
    "mesh": cmd_mesh,
    "solve": cmd_solve,
    "sweep-h": cmd_sweep_h,
    "sweep-eps": cmd_sweep_eps,
    "sweep-noise": cmd_sweep_noise,
    "gradcheck": cmd_gradcheck,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", help="key=value file; flags override its entries")
    g.add_argument("--mu", type=float, help="viscosity (default 1)")
    g.add_argument("--eps", type=float, help="regularization parameter (default 1e-6)")
    g.add_argument("--delta", type=float, help="noise level in [0, 1] (default 0)")
    g.add_argument("--seed", type=int, help="noise seed (default 0)")
    g.add_argument("--r", type=float, help="inner radius (default 0.5)")
    g.add_argument("--R", type=float, help="outer radius (default 1)")
    g.add_argument("--rings", type=int, help="radial cells of the generated mesh")
    g.add_argument("--sectors", type=int, help="angular cells of the generated mesh")
    g.add_argument("--h", type=float, help="target mesh size when rings/sectors are not set (default 0.1)")
    g.add_argument("--mesh", help="read the mesh from this file instead of generating it")
    g.add_argument("--stress", choices=STRESS_CONVENTIONS, help="stress convention of the exact data")
    g.add_argument("--out-dir", dest="out_dir", help="output directory (created if missing)")
    g.add_argument("-v", "--verbose", action="store_true", help="log solver details")

    p = argparse.ArgumentParser(prog="stokes-ccbm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    m = sub.add_parser("mesh", parents=[common], help="generate and save an annulus mesh")
    m.add_argument("--out", help="mesh file (default <out-dir>/mesh.txt)")
    s = sub.add_parser("solve", parents=[common], help="reconstruct traces for the manufactured case")
    s.add_argument("--solution-csv", dest="solution_csv", action="store_const", const=1,
                   help="also write all field coefficients to solution.csv")
    sh = sub.add_parser("sweep-h", parents=[common], help="errors over a list of mesh sizes")
    sh.add_argument("--h-list", dest="h_list", help="comma-separated target mesh sizes")
    se = sub.add_parser("sweep-eps", parents=[common], help="errors over regularization parameters")
    se.add_argument("--eps-list", dest="eps_list", help="comma-separated values of eps")
    sn = sub.add_parser("sweep-noise", parents=[common], help="errors over noise levels")
    sn.add_argument("--delta-list", dest="delta_list", help="comma-separated noise levels")
    sn.add_argument("--reps", type=int, help="repetitions per level (default 10)")
    gc = sub.add_parser("gradcheck", parents=[common], help="adjoint gradient vs finite differences")
    gc.add_argument("--directions", type=int, help="random directions per point (default 5)")
    gc.add_argument("--points", type=int, help="random base points (default 3)")
    gc.add_argument("--tol", type=float, help="relative tolerance (default 1e-5)")
    gc.add_argument("--tau", type=float, help="finite-difference step (default 1e-4)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, DomainError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, NumericError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        for k, v in getattr(exc, "diagnostics", {}).items():
            print(f"  {k}: {v}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
