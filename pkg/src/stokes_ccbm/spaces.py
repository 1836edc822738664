"""MINI (P1-bubble / P1) spaces: basis functions, quadrature and dof numbering.

Velocity component dofs are numbered vertex-first: vertex ``i`` has dof
``i`` and the bubble of triangle ``t`` has dof ``n_vertices + t``. A
vector velocity field stacks its two components, ``[comp 1 | comp 2]``.
Pressure is continuous P1 with one dof per vertex.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .mesh import ALL_BOUNDARY


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates (or edge parameters) and weights.

    Weights sum to the measure of the reference cell: 1/2 for the reference
    triangle, 1 for the reference edge ``[0, 1]``.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int


# Dunavant's symmetric 6-point rule; exact through total degree 4.
_A1 = 0.44594849091596488631832925388305
_W1 = 0.22338158967801146569500700843312
_A2 = 0.091576213509770743459571463402202
_W2 = 0.10995174365532186763832632490021


def volume_quadrature():
    """6-point rule on the reference triangle, exact for degree <= 4.

    Bubble-bubble mass products have degree 6 and are therefore only
    approximated; every stiffness and divergence entry is exact.
    """
    b1, b2 = 1 - 2 * _A1, 1 - 2 * _A2
    pts = np.array(
        [
            [_A1, _A1, b1],
            [_A1, b1, _A1],
            [b1, _A1, _A1],
            [_A2, _A2, b2],
            [_A2, b2, _A2],
            [b2, _A2, _A2],
        ]
    )
    w = 0.5 * np.array([_W1, _W1, _W1, _W2, _W2, _W2])
    return QuadratureRule(pts, w, 4)


def edge_quadrature():
    """2-point Gauss-Legendre rule on ``[0, 1]``, exact for degree <= 3."""
    x, w = np.polynomial.legendre.leggauss(2)
    return QuadratureRule((x + 1) / 2, w / 2, 3)


def barycentric_gradients(coords):
    """Constant gradients of the barycentric coordinates.

    ``coords`` has shape ``(..., 3, 2)``. Returns ``(grads, area)`` with
    ``grads`` of shape ``(..., 3, 2)``.
    """
    coords = np.asarray(coords, dtype=float)
    p0, p1, p2 = coords[..., 0, :], coords[..., 1, :], coords[..., 2, :]
    d1, d2 = p1 - p0, p2 - p0
    det = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    if np.any(np.abs(det) <= 1e-14 * np.maximum(np.sum(d1**2, -1), np.sum(d2**2, -1))):
        raise DomainError("degenerate triangle (zero area)")
    # gradient of lambda_i is rot90 of the opposite edge divided by 2*area
    grads = np.stack(
        [
            np.stack([p1[..., 1] - p2[..., 1], p2[..., 0] - p1[..., 0]], -1),
            np.stack([p2[..., 1] - p0[..., 1], p0[..., 0] - p2[..., 0]], -1),
            np.stack([p0[..., 1] - p1[..., 1], p1[..., 0] - p0[..., 0]], -1),
        ],
        axis=-2,
    )
    grads = grads / det[..., None, None]
    return grads, 0.5 * det


def eval_basis(triangle, barycentric):
    """Values and physical gradients of ``(lambda_1, lambda_2, lambda_3, bubble)``.

    The bubble is the unnormalized product ``lambda_1 lambda_2 lambda_3``.
    """
    lam = np.asarray(barycentric, dtype=float)
    if lam.shape != (3,) or np.any(lam < -1e-14) or abs(lam.sum() - 1) > 1e-12:
        raise DomainError("barycentric coordinates must be nonnegative and sum to 1")
    grads, _ = barycentric_gradients(np.asarray(triangle, dtype=float))
    l1, l2, l3 = lam
    values = np.array([l1, l2, l3, l1 * l2 * l3])
    gb = l2 * l3 * grads[0] + l1 * l3 * grads[1] + l1 * l2 * grads[2]
    return values, np.vstack([grads, gb])


def reference_tables(rule):
    """Basis values at the points of a volume rule and the bubble-gradient weights.

    Returns ``(values, bubble_weights)`` where ``values`` has shape
    ``(n_points, 4)`` and ``bubble_weights[q, i]`` is the coefficient of
    ``grad lambda_i`` in ``grad b`` at point ``q``.
    """
    lam = rule.points
    values = np.column_stack([lam, lam.prod(axis=1)])
    bw = np.column_stack([lam[:, 1] * lam[:, 2], lam[:, 0] * lam[:, 2], lam[:, 0] * lam[:, 1]])
    return values, bw


@dataclass(frozen=True)
class MixedDofMap:
    n_vertices: int
    n_triangles: int
    boundary: dict

    @property
    def velocity_dofs_per_component(self):
        return self.n_vertices + self.n_triangles

    @property
    def n_velocity(self):
        """Dofs of one vector velocity field (both components)."""
        return 2 * self.velocity_dofs_per_component

    @property
    def n_pressure(self):
        return self.n_vertices

    def element_dofs(self, triangles):
        """Local-to-global map, shape ``(n_triangles, 8)``.

        Local order: three vertex dofs then the bubble, component 1 before 2.
        """
        triangles = np.asarray(triangles)
        bub = self.n_vertices + np.arange(len(triangles))
        c1 = np.column_stack([triangles, bub])
        return np.hstack([c1, c1 + self.velocity_dofs_per_component])

    def boundary_vertices(self, tag):
        return self.boundary[tag]

    def boundary_velocity_dofs(self, tag, component=None):
        v = self.boundary[tag]
        if component is not None:
            return v + component * self.velocity_dofs_per_component
        return np.concatenate([v, v + self.velocity_dofs_per_component])

    def extend_trace(self, tag, values):
        """Place vertex values of shape ``(n_tag_vertices, 2)`` into a velocity vector."""
        values = np.asarray(values, dtype=float)
        v = self.boundary[tag]
        if values.shape != (len(v), 2):
            raise DomainError(f"trace must have shape {(len(v), 2)}, got {values.shape}")
        out = np.zeros(self.n_velocity)
        out[v] = values[:, 0]
        out[v + self.velocity_dofs_per_component] = values[:, 1]
        return out

    def restrict_trace(self, tag, u):
        """Vertex values on ``tag`` of a velocity vector, shape ``(n, 2)``."""
        v = self.boundary[tag]
        return np.column_stack([u[v], u[v + self.velocity_dofs_per_component]])

    def __eq__(self, other):
        if not isinstance(other, MixedDofMap):
            return NotImplemented
        return (
            self.n_vertices == other.n_vertices
            and self.n_triangles == other.n_triangles
            and self.boundary.keys() == other.boundary.keys()
            and all(np.array_equal(self.boundary[k], other.boundary[k]) for k in self.boundary)
        )

    __hash__ = None


def build_dof_map(mesh):
    boundary = {tag: mesh.boundary_vertices(tag) for tag in ("Gamma0", "Gamma1", ALL_BOUNDARY)}
    for v in boundary.values():
        v.setflags(write=False)
    return MixedDofMap(mesh.n_vertices, mesh.n_triangles, boundary)


def interpolate_velocity(mesh, dofmap, u):
    """Vertex interpolant of a vector field ``u(x, y) -> (u1, u2)``; bubble dofs zero."""
    x, y = mesh.vertices.T
    vals = np.asarray(u(x, y), dtype=float)
    out = np.zeros(dofmap.n_velocity)
    out[: dofmap.n_vertices] = vals[0]
    off = dofmap.velocity_dofs_per_component
    out[off : off + dofmap.n_vertices] = vals[1]
    return out


def interpolate_pressure(mesh, p):
    x, y = mesh.vertices.T
    return np.asarray(p(x, y), dtype=float) * np.ones(len(x))
