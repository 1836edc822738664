"""Coupled complex boundary method for the Stokes Cauchy problem.

The complex Robin problem ``sigma(u) n + i u = g`` is always handled through
its real/imaginary split. With ``K`` the viscous operator, ``B`` the
divergence operator (``-int q div v``), ``M_G`` the boundary mass on the whole
boundary and ``M_1`` the mass on ``Gamma1``, the forward problem reads::

    K u1 - M_G u2 + B' P1 = F + M_0 psi + M_1 phi        B u1 = 0
    K u2 + M_G u1 + B' P2 =     M_0 kappa + M_1 zeta     B u2 = 0

Robin conditions on the whole boundary determine the pressure level, so each
pressure is carried as a zero-mean P1 field ``p`` plus a scalar level ``m``
(``P = p + m``); the extra row ``c' p = 0`` fixes the split. Testing the
divergence only against zero-mean pressures would instead relax ``div u`` to
an unknown constant and change the Cauchy solution whenever the true pressure
has nonzero mean.

The minimizer of the Tikhonov functional is obtained from one linear solve of
the state/adjoint system, in which ``phi = -w2 / eps`` and ``zeta = -w1 / eps``.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .assembly import (
    assemble_boundary_mass,
    assemble_divergence,
    assemble_pressure_mean,
    assemble_viscous,
    assemble_volume_load,
    assemble_volume_mass,
)
from .errors import DomainError
from .linsolve import SparseSolver, block_ordering
from .mesh import ALL_BOUNDARY, GAMMA0, GAMMA1
from .noise import add_noise

COUPLED_FIELDS = ("u1", "u2", "w1", "w2", "p1", "p2", "pt1", "pt2")
FORWARD_FIELDS = ("u1", "u2", "p1", "p2")


def _zero_force(x, y):
    return (np.zeros_like(x), np.zeros_like(x))


@dataclass(frozen=True)
class CauchyData:
    """Traction ``psi`` and velocity ``kappa`` on ``Gamma0``.

    Both are evaluators ``g(x, y) -> (g1, g2)``. Data enter the solver as
    samples at the ``Gamma0`` vertices (a P1 trace); with ``delta > 0`` the
    samples are perturbed multiplicatively using ``seed``.
    """

    psi: object
    kappa: object
    delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.delta >= 0:
            raise DomainError(f"noise level must be nonnegative, got {self.delta}")

    def samples(self, mesh):
        """``(psi, kappa)`` at ``mesh.boundary_vertices(GAMMA0)``, each ``(n, 2)``."""
        x, y = mesh.vertices[mesh.boundary_vertices(GAMMA0)].T
        psi = np.column_stack(np.broadcast_arrays(*self.psi(x, y), x)[:2]).astype(float)
        kappa = np.column_stack(np.broadcast_arrays(*self.kappa(x, y), x)[:2]).astype(float)
        if not (np.all(np.isfinite(psi)) and np.all(np.isfinite(kappa))):
            raise DomainError("Cauchy data must be finite on Gamma0")
        if self.delta > 0:
            rng = np.random.default_rng(self.seed)
            psi = add_noise(psi, self.delta, rng)
            kappa = add_noise(kappa, self.delta, rng)
        return psi, kappa


def homogeneous_data():
    return CauchyData(_zero_force, _zero_force)


class Operators:
    """Assembled operators of one mesh and viscosity, shared by all solves."""

    def __init__(self, mesh, dofmap, mu=1.0):
        if not mu > 0:
            raise DomainError(f"viscosity must be positive, got {mu}")
        self.mesh = mesh
        self.dofmap = dofmap
        self.mu = float(mu)
        self.K = assemble_viscous(mesh, dofmap, mu)
        self.B = assemble_divergence(mesh, dofmap)
        self.M_all = assemble_boundary_mass(mesh, dofmap, ALL_BOUNDARY)
        self.M0 = assemble_boundary_mass(mesh, dofmap, GAMMA0)
        self.M1 = assemble_boundary_mass(mesh, dofmap, GAMMA1)
        self.M_vel = assemble_volume_mass(mesh, dofmap, "velocity")
        self.M_p = assemble_volume_mass(mesh, dofmap, "pressure")
        self.c = assemble_pressure_mean(mesh, dofmap)
        # momentum response to a unit pressure level: b(v, 1) = -int div v
        self.g = self.B.T @ np.ones(dofmap.n_pressure)
        self._coupled = {}

    @property
    def nv(self):
        return self.dofmap.n_velocity

    @property
    def np_(self):
        return self.dofmap.n_pressure

    def trace_norm(self, values):
        """L2(Gamma1) norm of a P1 trace given by vertex values ``(n, 2)``."""
        e = self.dofmap.extend_trace(GAMMA1, values)
        return float(np.sqrt(max(e @ (self.M1 @ e), 0.0)))

    def trace_inner(self, a, b):
        ea = self.dofmap.extend_trace(GAMMA1, a)
        eb = self.dofmap.extend_trace(GAMMA1, b)
        return float(ea @ (self.M1 @ eb))

    def data_load(self, data, f):
        """Right-hand sides of the two momentum rows from ``f`` and Cauchy data."""
        psi, kappa = data.samples(self.mesh)
        F = assemble_volume_load(self.mesh, self.dofmap, f or _zero_force)
        F = F + self.M0 @ self.dofmap.extend_trace(GAMMA0, psi)
        G = self.M0 @ self.dofmap.extend_trace(GAMMA0, kappa)
        return F, G

    def _robin_block(self):
        return sp.bmat([[self.K, -self.M_all], [self.M_all, self.K]])

    def _pressure_coupling(self, n_fields):
        BT = sp.block_diag([self.B.T] * n_fields)
        G = sp.block_diag([sp.csr_matrix(self.g[:, None])] * n_fields)
        C = sp.block_diag([sp.csr_matrix(self.c[None, :])] * n_fields)
        return BT, G, C

    @cached_property
    def forward_matrix(self):
        """Matrix of the 4-field forward problem on ``[u1 u2 p1 p2 | m1 m2]``."""
        BT, G, C = self._pressure_coupling(2)
        return sp.bmat(
            [
                [self._robin_block(), BT, G],
                [BT.T, None, None],
                [None, C, None],
            ]
        ).tocsc()

    @cached_property
    def forward_solver(self):
        order = block_ordering(self.mesh, self.dofmap, 2, 2, 2)
        return SparseSolver(self.forward_matrix, order)

    def coupled_matrix(self, eps):
        """Matrix of the state/adjoint system on ``[u1 u2 w1 w2 p1 p2 pt1 pt2 | m x4]``."""
        nv, npr = self.nv, self.np_
        Z = sp.csr_matrix((nv, nv))
        R = self._robin_block()
        pen = self.M1 / eps
        # state rows: M_1 phi with phi = -w2/eps goes to the left-hand side
        state_adj = sp.bmat([[Z, pen], [pen, Z]])
        adj_state = sp.bmat([[Z, -self.M_vel], [Z, Z]])
        velocity = sp.bmat([[R, state_adj], [adj_state, R]])
        BT, G, C = self._pressure_coupling(4)
        # adjoint divergence row: B w1 = M_p (p2 + m2)
        P = sp.lil_matrix((4 * npr, 4 * npr))
        P[2 * npr : 3 * npr, npr : 2 * npr] = -self.M_p
        Pm = sp.lil_matrix((4 * npr, 4))
        Pm[2 * npr : 3 * npr, 1] = -self.c[:, None]
        return sp.bmat(
            [
                [velocity, BT, G],
                [BT.T, P.tocsr(), Pm.tocsr()],
                [None, C, None],
            ]
        ).tocsc()

    def coupled_solver(self, eps):
        if eps not in self._coupled:
            order = block_ordering(self.mesh, self.dofmap, 4, 4, 4)
            self._coupled[eps] = SparseSolver(self.coupled_matrix(eps), order)
        return self._coupled[eps]


_CACHE = OrderedDict()
_CACHE_SIZE = 4


def operators(mesh, dofmap, mu=1.0):
    """Operators for ``(mesh, dofmap, mu)``, reusing a recent assembly when possible.

    The cache holds references to its keys, so identities stay valid while cached.
    """
    key = (id(mesh), id(dofmap), float(mu))
    hit = _CACHE.get(key)
    if hit is not None and hit.mesh is mesh and hit.dofmap is dofmap:
        _CACHE.move_to_end(key)
        return hit
    ops = Operators(mesh, dofmap, mu)
    _CACHE[key] = ops
    while len(_CACHE) > _CACHE_SIZE:
        _CACHE.popitem(last=False)
    return ops


@dataclass(frozen=True)
class Layout:
    """Named slices of a stacked unknown vector."""

    fields: tuple
    n_velocity: int
    n_pressure: int

    @property
    def n_velocity_fields(self):
        return sum(1 for f in self.fields if f.startswith(("u", "w")))

    @property
    def n_pressure_fields(self):
        return len(self.fields) - self.n_velocity_fields

    @property
    def size(self):
        return (
            self.n_velocity_fields * self.n_velocity
            + self.n_pressure_fields * (self.n_pressure + 1)
        )

    def slice(self, name):
        off = 0
        for f in self.fields:
            n = self.n_velocity if f.startswith(("u", "w")) else self.n_pressure
            if f == name:
                return slice(off, off + n)
            off += n
        raise KeyError(name)

    def level_index(self, name):
        """Index of the pressure-level unknown paired with pressure field ``name``."""
        pfields = [f for f in self.fields if not f.startswith(("u", "w"))]
        base = self.size - len(pfields)
        return base + pfields.index(name)


@dataclass(frozen=True)
class CcbmSystem:
    matrix: sp.csc_matrix
    rhs: np.ndarray
    layout: Layout
    eps: float
    mu: float
    solver: SparseSolver = field(repr=False, compare=False)
    ops: Operators = field(repr=False, compare=False)


@dataclass(frozen=True)
class FieldSolution:
    """Solved coefficients; pressures are zero-mean with separate levels.

    ``field(name)`` returns the raw block, ``pressure(name)`` the full pressure
    ``p + m`` as P1 vertex values.
    """

    x: np.ndarray
    layout: Layout
    residual: float
    ops: Operators = field(repr=False, compare=False)

    def field(self, name):
        return self.x[self.layout.slice(name)]

    def level(self, name):
        return float(self.x[self.layout.level_index(name)])

    def pressure(self, name):
        return self.field(name) + self.level(name)

    def __getattr__(self, name):
        if name in ("x", "layout"):
            raise AttributeError(name)
        if name in self.layout.fields:
            return self.field(name)
        raise AttributeError(name)


def _normalize_levels(x, layout, c):
    """Shift each pressure so ``c' p`` is zero to rounding, keeping ``p + m`` fixed."""
    x = x.copy()
    total = c.sum()
    for f in layout.fields:
        if f.startswith("p"):
            s = layout.slice(f)
            shift = (c @ x[s]) / total
            x[s] -= shift
            x[layout.level_index(f)] += shift
    return x


def assemble_ccbm(mesh, dofmap, mu, eps, data, f=None):
    """Assemble the coupled state/adjoint system for regularization ``eps``."""
    if not eps > 0:
        raise DomainError(f"regularization parameter must be positive, got {eps}")
    ops = operators(mesh, dofmap, mu)
    solver = ops.coupled_solver(float(eps))
    layout = Layout(COUPLED_FIELDS, ops.nv, ops.np_)
    F, G = ops.data_load(data, f)
    rhs = np.zeros(layout.size)
    rhs[layout.slice("u1")] = F
    rhs[layout.slice("u2")] = G
    return CcbmSystem(solver.A, rhs, layout, float(eps), ops.mu, solver, ops)


def solve(system):
    x, res = system.solver.solve(system.rhs)
    x = _normalize_levels(x, system.layout, system.ops.c)
    return FieldSolution(x, system.layout, res, system.ops)


@dataclass(frozen=True)
class RecoveredTraces:
    """Traction ``phi`` and velocity ``zeta`` at the ``Gamma1`` vertices, shape ``(n, 2)``."""

    phi: np.ndarray
    zeta: np.ndarray
    vertices: np.ndarray


def recover_traces(sol, eps):
    dm = sol.ops.dofmap
    return RecoveredTraces(
        -dm.restrict_trace(GAMMA1, sol.field("w2")) / eps,
        -dm.restrict_trace(GAMMA1, sol.field("w1")) / eps,
        dm.boundary_vertices(GAMMA1),
    )


def solve_ccbm(mesh, dofmap, mu, eps, data, f=None):
    """Assemble, solve and recover traces in one call."""
    sol = solve(assemble_ccbm(mesh, dofmap, mu, eps, data, f))
    return sol, recover_traces(sol, eps)


def _forward_rhs(ops, F, G, phi, zeta):
    layout = Layout(FORWARD_FIELDS, ops.nv, ops.np_)
    dm = ops.dofmap
    rhs = np.zeros(layout.size)
    rhs[layout.slice("u1")] = F + ops.M1 @ dm.extend_trace(GAMMA1, phi)
    rhs[layout.slice("u2")] = G + ops.M1 @ dm.extend_trace(GAMMA1, zeta)
    return layout, rhs


def solve_forward_robin(mesh, dofmap, mu, data, f, phi, zeta):
    """Complex Robin problem with ``phi + i zeta`` on ``Gamma1``, split into 4 real fields.

    ``phi`` and ``zeta`` are vertex values on ``Gamma1`` of shape ``(n, 2)``.
    """
    return forward(operators(mesh, dofmap, mu), data, f, phi, zeta)


def forward(ops, data, f, phi, zeta):
    F, G = ops.data_load(data, f)
    return _forward(ops, F, G, phi, zeta)


def _forward(ops, F, G, phi, zeta):
    layout, rhs = _forward_rhs(ops, F, G, phi, zeta)
    x, res = ops.forward_solver.solve(rhs)
    return FieldSolution(_normalize_levels(x, layout, ops.c), layout, res, ops)


def cost(ops, u2, p2, phi, zeta, eps):
    """Tikhonov functional; ``p2`` is the full imaginary pressure (vertex values)."""
    return 0.5 * (
        u2 @ (ops.M_vel @ u2)
        + p2 @ (ops.M_p @ p2)
        + eps * ops.trace_norm(phi) ** 2
        + eps * ops.trace_norm(zeta) ** 2
    )


def cost_at(ops, data, f, phi, zeta, eps):
    """Evaluate the functional at ``(phi, zeta)`` through one forward solve."""
    s = forward(ops, data, f, phi, zeta)
    return cost(ops, s.field("u2"), s.pressure("p2"), phi, zeta, eps)


def directional_derivative(ops, data, f, phi, zeta, eta, s, eps):
    """Derivative of the functional at ``(phi, zeta)`` along ``(eta, s)``.

    Uses that the imaginary part is affine in the traces: the response to the
    direction is ``u2(eta, s) - u2(0, 0)``. Three forward solves.
    """
    F, G = ops.data_load(data, f)
    base = _forward(ops, F, G, phi, zeta)
    pert = _forward(ops, F, G, eta, s)
    zero = _forward(ops, F, G, np.zeros_like(eta), np.zeros_like(s))
    du2 = pert.field("u2") - zero.field("u2")
    dp2 = pert.pressure("p2") - zero.pressure("p2")
    return float(
        base.field("u2") @ (ops.M_vel @ du2)
        + base.pressure("p2") @ (ops.M_p @ dp2)
        + eps * ops.trace_inner(phi, eta)
        + eps * ops.trace_inner(zeta, s)
    )


def adjoint_state(ops, u2, p2):
    """Adjoint fields ``(w1, w2)`` driven by the imaginary state ``(u2, p2)``.

    Solves the homogeneous complex Robin problem with volume source ``u2`` and
    ``div w = -p2``; it shares the forward matrix.
    """
    layout = Layout(FORWARD_FIELDS, ops.nv, ops.np_)
    rhs = np.zeros(layout.size)
    rhs[layout.slice("u1")] = ops.M_vel @ u2
    # divergence row of the first field: -int q div w1 = int q p2
    rhs[layout.slice("p1")] = ops.M_p @ p2
    x, _ = ops.forward_solver.solve(rhs)
    return x[layout.slice("u1")], x[layout.slice("u2")]


def adjoint_gradient(ops, data, f, phi, zeta, eps):
    """Gradient of the functional as L2(Gamma1) Riesz representers ``(g_phi, g_zeta)``.

    ``g_phi = w2 + eps phi`` and ``g_zeta = w1 + eps zeta`` on ``Gamma1``; the
    derivative along ``(eta, s)`` is ``(g_phi, eta) + (g_zeta, s)``.
    """
    s = forward(ops, data, f, phi, zeta)
    w1, w2 = adjoint_state(ops, s.field("u2"), s.pressure("p2"))
    dm = ops.dofmap
    return (
        dm.restrict_trace(GAMMA1, w2) + eps * np.asarray(phi),
        dm.restrict_trace(GAMMA1, w1) + eps * np.asarray(zeta),
    )


def adjoint_directional_derivative(ops, data, f, phi, zeta, eta, s, eps):
    g_phi, g_zeta = adjoint_gradient(ops, data, f, phi, zeta, eps)
    return ops.trace_inner(g_phi, eta) + ops.trace_inner(g_zeta, s)
