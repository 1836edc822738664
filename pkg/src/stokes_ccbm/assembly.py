"""Sparse operators for the MINI discretization of the Robin-Stokes forms.

Sign convention used throughout: the divergence form is
``b(v, q) = -int q div v``, so ``B`` maps velocity to the pressure-test
space and ``B.T`` couples pressure into the momentum rows.

All element loops are vectorized over triangles and scattered in
triangle-index order, so a fixed mesh gives bit-identical matrices.
"""
from __future__ import annotations

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp

from .errors import DomainError, NumericError
from .spaces import (
    barycentric_gradients,
    edge_quadrature,
    reference_tables,
    volume_quadrature,
)


def _scatter(local, rows, cols, shape):
    r = np.broadcast_to(rows[:, :, None], local.shape).ravel()
    c = np.broadcast_to(cols[:, None, :], local.shape).ravel()
    A = sp.coo_matrix((local.ravel(), (r, c)), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def _symmetric(A):
    # a_ij + a_ji is commutative in floating point, so this is exactly symmetric
    return ((A + A.T) * 0.5).tocsr()


def _symmetrize(local):
    return 0.5 * (local + np.swapaxes(local, -1, -2))


class _Element:
    """Per-triangle geometry and basis data at the volume quadrature points."""

    def __init__(self, mesh):
        rule = volume_quadrature()
        coords = mesh.vertices[mesh.triangles]
        G, area = barycentric_gradients(coords)
        values, bw = reference_tables(rule)
        self.area = area
        self.values = values  # (nq, 4)
        self.lam = rule.points  # (nq, 3)
        gb = np.einsum("qi,tid->tqd", bw, G)
        gv = np.broadcast_to(G[:, None, :, :], (len(G), len(rule.weights), 3, 2))
        self.grads = np.concatenate([gv, gb[:, :, None, :]], axis=2)  # (nt, nq, 4, 2)
        self.W = 2 * area[:, None] * rule.weights[None, :]  # (nt, nq)
        self.xq = np.einsum("qi,tid->tqd", rule.points, coords)  # (nt, nq, 2)


def assemble_viscous(mesh, dofmap, mu):
    """Matrix of ``2 mu int D(u):D(v)`` on the vector velocity space."""
    if not mu > 0:
        raise DomainError(f"viscosity must be positive, got {mu}")
    el = _Element(mesh)
    dx, dy = el.grads[..., 0], el.grads[..., 1]
    xx = np.einsum("tq,tqa,tqb->tab", el.W, dx, dx)
    yy = np.einsum("tq,tqa,tqb->tab", el.W, dy, dy)
    yx = np.einsum("tq,tqa,tqb->tab", el.W, dy, dx)
    nt = mesh.n_triangles
    local = np.zeros((nt, 8, 8))
    local[:, :4, :4] = mu * (2 * xx + yy)
    local[:, 4:, 4:] = mu * (xx + 2 * yy)
    local[:, :4, 4:] = mu * yx
    local[:, 4:, :4] = mu * np.swapaxes(yx, 1, 2)
    dofs = dofmap.element_dofs(mesh.triangles)
    n = dofmap.n_velocity
    return _symmetric(_scatter(_symmetrize(local), dofs, dofs, (n, n)))


def assemble_vector_laplacian(mesh, dofmap):
    """Matrix of ``int grad u : grad v``; used for the H1 velocity norm."""
    el = _Element(mesh)
    g = np.einsum("tq,tqad,tqbd->tab", el.W, el.grads, el.grads)
    local = np.zeros((mesh.n_triangles, 8, 8))
    local[:, :4, :4] = g
    local[:, 4:, 4:] = g
    dofs = dofmap.element_dofs(mesh.triangles)
    n = dofmap.n_velocity
    return _symmetric(_scatter(_symmetrize(local), dofs, dofs, (n, n)))


def assemble_divergence(mesh, dofmap):
    """Matrix ``B`` with ``(B u)_q = -int q div u``; shape ``(n_pressure, n_velocity)``."""
    el = _Element(mesh)
    q = el.lam  # pressure basis = barycentric coordinates
    bx = -np.einsum("tq,qk,tqa->tka", el.W, q, el.grads[..., 0])
    by = -np.einsum("tq,qk,tqa->tka", el.W, q, el.grads[..., 1])
    local = np.concatenate([bx, by], axis=2)
    dofs = dofmap.element_dofs(mesh.triangles)
    return _scatter(local, mesh.triangles, dofs, (dofmap.n_pressure, dofmap.n_velocity))


def assemble_volume_mass(mesh, dofmap, space="velocity"):
    """L2 Gram matrix of the velocity (vector MINI) or pressure (P1) space."""
    el = _Element(mesh)
    if space == "pressure":
        v = el.lam
        local = np.einsum("tq,qa,qb->tab", el.W, v, v)
        return _symmetric(
            _scatter(_symmetrize(local), mesh.triangles, mesh.triangles, (dofmap.n_pressure,) * 2)
        )
    if space != "velocity":
        raise DomainError(f"space must be 'velocity' or 'pressure', got {space!r}")
    v = el.values
    m = np.einsum("tq,qa,qb->tab", el.W, v, v)
    local = np.zeros((mesh.n_triangles, 8, 8))
    local[:, :4, :4] = m
    local[:, 4:, 4:] = m
    dofs = dofmap.element_dofs(mesh.triangles)
    return _symmetric(_scatter(_symmetrize(local), dofs, dofs, (dofmap.n_velocity,) * 2))


def _edge_data(mesh, tag):
    rule = edge_quadrature()
    e = mesh.edges_with_tag(tag)
    p0, p1 = mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]]
    length = np.hypot(*(p1 - p0).T)
    phi = np.column_stack([1 - rule.points, rule.points])  # (nq, 2)
    W = length[:, None] * rule.weights[None, :]
    xq = p0[:, None, :] + rule.points[None, :, None] * (p1 - p0)[:, None, :]
    return e, phi, W, xq


def assemble_boundary_mass(mesh, dofmap, tag):
    """Matrix of ``int_{Gamma_tag} u . v ds`` on the velocity space.

    Bubbles vanish on edges, so only vertex dofs of tagged edges appear.
    """
    e, phi, W, _ = _edge_data(mesh, tag)
    n = dofmap.n_velocity
    if len(e) == 0:
        return sp.csr_matrix((n, n))
    m = _symmetrize(np.einsum("eq,qa,qb->eab", W, phi, phi))
    off = dofmap.velocity_dofs_per_component
    local = np.concatenate([m, m])
    dofs = np.concatenate([e, e + off])
    return _symmetric(_scatter(local, dofs, dofs, (n, n)))


def _evaluate(g, x, y, what):
    vals = np.stack([np.broadcast_to(np.asarray(c, dtype=float), x.shape) for c in g(x, y)])
    bad = ~np.isfinite(vals)
    if np.any(bad):
        idx = np.argwhere(bad.any(axis=0))[0]
        raise NumericError(
            f"{what} evaluator returned non-finite value at "
            f"({x[tuple(idx)]:.6g}, {y[tuple(idx)]:.6g})"
        )
    return vals


def assemble_volume_load(mesh, dofmap, f):
    """Vector of ``int f . v dx``; ``f(x, y)`` returns ``(f1, f2)``."""
    el = _Element(mesh)
    vals = _evaluate(f, el.xq[..., 0], el.xq[..., 1], "volume load")
    l1 = np.einsum("tq,tq,qa->ta", el.W, vals[0], el.values)
    l2 = np.einsum("tq,tq,qa->ta", el.W, vals[1], el.values)
    dofs = dofmap.element_dofs(mesh.triangles)
    out = np.zeros(dofmap.n_velocity)
    np.add.at(out, dofs.ravel(), np.hstack([l1, l2]).ravel())
    return out


def assemble_boundary_load(mesh, dofmap, g, tag):
    """Vector of ``int_{Gamma_tag} g . v ds``; ``g(x, y)`` returns ``(g1, g2)``."""
    e, phi, W, xq = _edge_data(mesh, tag)
    out = np.zeros(dofmap.n_velocity)
    if len(e) == 0:
        return out
    vals = _evaluate(g, xq[..., 0], xq[..., 1], "boundary load")
    off = dofmap.velocity_dofs_per_component
    for comp in range(2):
        local = np.einsum("eq,eq,qa->ea", W, vals[comp], phi)
        np.add.at(out, (e + comp * off).ravel(), local.ravel())
    return out


def assemble_pressure_mean(mesh, dofmap):
    """Vector ``c`` with ``c_q = int q dx``."""
    M = assemble_volume_mass(mesh, dofmap, "pressure")
    return np.asarray(M.sum(axis=1)).ravel()


def inf_sup_constant(mesh, dofmap):
    """Discrete inf-sup constant of ``b`` on zero-mean P1 pressures.

    Smallest singular value of ``B`` measured in the H1 velocity norm and
    the L2 pressure norm. Dense; meant for coarse meshes.
    """
    B = assemble_divergence(mesh, dofmap).toarray()
    X = (
        assemble_vector_laplacian(mesh, dofmap) + assemble_volume_mass(mesh, dofmap)
    ).toarray()
    Mp = assemble_volume_mass(mesh, dofmap, "pressure").toarray()
    c = assemble_pressure_mean(mesh, dofmap)
    Z = scipy.linalg.null_space(c[None, :])
    S = B @ scipy.linalg.solve(X, B.T, assume_a="pos")
    lam = scipy.linalg.eigh(Z.T @ S @ Z, Z.T @ Mp @ Z, eigvals_only=True)
    return float(np.sqrt(max(lam[0], 0.0)))


def dump_matrix(A, path, comment=""):
    """Write ``A`` in MatrixMarket coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)
