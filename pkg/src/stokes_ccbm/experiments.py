"""Manufactured annulus problem, error metrics and the three sweep protocols."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .mesh import GAMMA0, GAMMA1, annulus_resolution, generate_annulus
from .noise import add_noise, run_seed
from .solver import CauchyData, operators, recover_traces, solve, assemble_ccbm
from .spaces import build_dof_map, interpolate_pressure, interpolate_velocity

__all__ = [
    "ManufacturedCase",
    "ErrorReport",
    "NoiseLevelSummary",
    "manufactured_case",
    "add_noise",
    "relative_errors",
    "run_case",
    "mesh_for_h",
    "sweep_h",
    "sweep_eps",
    "sweep_noise",
    "sweep_noise_path",
]

STRESS_CONVENTIONS = ("deformation", "gradient")
_P_SHIFT = np.sinh(1.0) / 2


def exact_velocity(x, y):
    return np.cosh(x) * np.sinh(y), -np.cosh(y) * np.sinh(x)


def exact_pressure(x, y):
    return y * np.cosh(x) - _P_SHIFT


def _velocity_gradient(x, y):
    """Entries ``(du1/dx, du1/dy, du2/dx, du2/dy)`` of the exact velocity."""
    return (
        np.sinh(x) * np.sinh(y),
        np.cosh(x) * np.cosh(y),
        -np.cosh(y) * np.cosh(x),
        -np.sinh(y) * np.sinh(x),
    )


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact Stokes solution on the annulus ``r < |x| < R`` and its boundary data.

    ``stress_convention`` selects the stress used for the tractions:
    ``"deformation"`` is ``2 mu D(u) - p I``, consistent with the discrete
    operator; ``"gradient"`` is ``mu grad u - p I``.
    """

    mu: float = 1.0
    stress_convention: str = "deformation"

    def __post_init__(self):
        if not self.mu > 0:
            raise DomainError(f"viscosity must be positive, got {self.mu}")
        if self.stress_convention not in STRESS_CONVENTIONS:
            raise DomainError(
                f"stress_convention must be one of {STRESS_CONVENTIONS}, "
                f"got {self.stress_convention!r}"
            )

    def u(self, x, y):
        return exact_velocity(x, y)

    def p(self, x, y):
        return exact_pressure(x, y)

    def f(self, x, y):
        mu = self.mu
        return (
            -2 * mu * np.cosh(x) * np.sinh(y) + y * np.sinh(x),
            2 * mu * np.cosh(y) * np.sinh(x) + np.cosh(x),
        )

    def stress(self, x, y):
        """``(s11, s12, s21, s22)`` of the selected stress tensor."""
        a, b, c, d = _velocity_gradient(x, y)
        p = exact_pressure(x, y)
        mu = self.mu
        if self.stress_convention == "deformation":
            off = mu * (b + c)
            return 2 * mu * a - p, off, off, 2 * mu * d - p
        return mu * a - p, mu * b, mu * c, mu * d - p

    def traction(self, x, y, outward_sign):
        """``sigma n`` with the radial unit normal ``outward_sign * x / |x|``."""
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        rho = np.hypot(x, y)
        n1, n2 = outward_sign * x / rho, outward_sign * y / rho
        s11, s12, s21, s22 = self.stress(x, y)
        return s11 * n1 + s12 * n2, s21 * n1 + s22 * n2

    def psi(self, x, y):
        """Traction on the outer circle ``Gamma0``."""
        return self.traction(x, y, 1.0)

    def kappa(self, x, y):
        return exact_velocity(x, y)

    def phi(self, x, y):
        """Traction on the inner circle ``Gamma1``; the normal points into the hole."""
        return self.traction(x, y, -1.0)

    def zeta(self, x, y):
        return exact_velocity(x, y)

    def data(self, delta=0.0, seed=0):
        return CauchyData(self.psi, self.kappa, delta, seed)


def manufactured_case(mu=1.0, stress_convention="deformation"):
    return ManufacturedCase(float(mu), stress_convention)


@dataclass(frozen=True)
class ErrorReport:
    err_zeta: float
    err_phi: float
    err_u: float
    err_p: float
    h: float
    eps: float
    delta: float
    seed: int

    FIELDS = ("h", "eps", "delta", "seed", "err_zeta", "err_phi", "err_u", "err_p")

    def row(self):
        return [getattr(self, k) for k in self.FIELDS]


def _vertex_trace(mesh, tag, g):
    x, y = mesh.vertices[mesh.boundary_vertices(tag)].T
    return np.column_stack(np.broadcast_arrays(*g(x, y), x)[:2]).astype(float)


def _ratio(diff, ref, what):
    if not ref > 0:
        raise DomainError(f"exact {what} has zero norm")
    return float(np.sqrt(max(diff, 0.0) / ref))


def trace_errors(ops, phi, zeta, case):
    """Relative L2(Gamma1) errors ``(err_phi, err_zeta)`` against vertex interpolants."""
    mesh = ops.mesh
    out = []
    for rec, g, name in ((phi, case.phi, "phi"), (zeta, case.zeta, "zeta")):
        ex = _vertex_trace(mesh, GAMMA1, g)
        d = ops.dofmap.extend_trace(GAMMA1, np.asarray(rec) - ex)
        e = ops.dofmap.extend_trace(GAMMA1, ex)
        out.append(_ratio(d @ (ops.M1 @ d), e @ (ops.M1 @ e), name))
    return tuple(out)


def relative_errors(traces, sol, case, eps=float("nan"), delta=0.0, seed=0):
    """Relative L2 errors of the traces on ``Gamma1`` and of ``(u1, P1)`` on the domain.

    Exact fields enter through their vertex interpolants. The pressure error
    compares mean-free parts, since ``p*`` is not normalized on the annulus.
    """
    ops = sol.ops
    mesh, dm = ops.mesh, ops.dofmap
    err_phi, err_zeta = trace_errors(ops, traces.phi, traces.zeta, case)

    ue = interpolate_velocity(mesh, dm, case.u)
    du = sol.field("u1") - ue
    err_u = _ratio(du @ (ops.M_vel @ du), ue @ (ops.M_vel @ ue), "velocity")

    area = ops.c.sum()
    pe = interpolate_pressure(mesh, case.p)
    pe = pe - (ops.c @ pe) / area
    ph = sol.pressure("p1")
    ph = ph - (ops.c @ ph) / area
    dp = ph - pe
    err_p = _ratio(dp @ (ops.M_p @ dp), pe @ (ops.M_p @ pe), "pressure")
    return ErrorReport(err_zeta, err_phi, err_u, err_p, float(mesh.h), float(eps), float(delta), int(seed))


def mesh_for_h(h, r_inner=0.5, r_outer=1.0):
    n_rings, n_sectors = annulus_resolution(h, r_inner, r_outer)
    return generate_annulus(r_inner, r_outer, n_rings, n_sectors)


def run_case(mesh, case, eps=1e-6, delta=0.0, seed=0, dofmap=None):
    """One CCBM reconstruction on ``mesh``; returns ``(report, solution, traces)``."""
    dofmap = dofmap or _dofmap(mesh)
    sol = solve(assemble_ccbm(mesh, dofmap, case.mu, eps, case.data(delta, seed), case.f))
    tr = recover_traces(sol, eps)
    return relative_errors(tr, sol, case, eps, delta, seed), sol, tr


_DOFMAPS = {}


def _dofmap(mesh):
    # keeps operator caching effective when the same mesh object is reused
    hit = _DOFMAPS.get(id(mesh))
    if hit is None or hit[0] is not mesh:
        _DOFMAPS.clear()
        hit = _DOFMAPS[id(mesh)] = (mesh, build_dof_map(mesh))
    return hit[1]


def sweep_h(case, eps, h_list, r_inner=0.5, r_outer=1.0):
    return [run_case(mesh_for_h(h, r_inner, r_outer), case, eps)[0] for h in h_list]


def sweep_eps(case, mesh, eps_list):
    return [run_case(mesh, case, eps)[0] for eps in eps_list]


@dataclass(frozen=True)
class NoiseLevelSummary:
    delta: float
    mean: ErrorReport
    max: ErrorReport
    runs: tuple


def _aggregate(runs, reducer, seed):
    r0 = runs[0]
    vals = {
        k: float(reducer([getattr(r, k) for r in runs]))
        for k in ("err_zeta", "err_phi", "err_u", "err_p")
    }
    return ErrorReport(h=r0.h, eps=r0.eps, delta=r0.delta, seed=seed, **vals)


def sweep_noise(case, mesh, eps, delta_list, n_repetitions=10, seed=0):
    """Noisy reconstructions; run ``k`` at every level uses ``run_seed(seed, k)``."""
    if n_repetitions < 1:
        raise DomainError(f"n_repetitions must be >= 1, got {n_repetitions}")
    out = []
    for delta in delta_list:
        runs = tuple(
            run_case(mesh, case, eps, delta, run_seed(seed, k))[0] for k in range(n_repetitions)
        )
        out.append(
            NoiseLevelSummary(
                float(delta), _aggregate(runs, np.mean, seed), _aggregate(runs, np.max, seed), runs
            )
        )
    return out


def sweep_noise_path(case, mesh, levels, seed=0):
    """Reconstructions with ``eps = delta`` for each level in ``levels``."""
    return [run_case(mesh, case, d, d, seed)[0] for d in levels]
