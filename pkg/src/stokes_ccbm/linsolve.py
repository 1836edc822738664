"""Direct sparse factorization of the mixed block systems.

SuperLU with its own column orderings fills in badly on these saddle-point
systems, so the unknowns are permuted beforehand with a nested-dissection
ordering of the mesh vertex graph (METIS). Each vertex group lists its
bubble dofs first, then velocity vertex dofs, then pressure dofs, so every
diagonal pivot is taken after the velocities that make the pressure Schur
complement nonzero.
"""
from __future__ import annotations

import logging

import numpy as np
import pymetis
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8
_REFINE_STEPS = 3


def vertex_ranks(mesh):
    """Elimination rank of each vertex under METIS nested dissection."""
    adj = [[] for _ in range(mesh.n_vertices)]
    for a, b in mesh.edges.tolist():
        adj[a].append(b)
        adj[b].append(a)
    _, iperm = pymetis.nested_dissection(adjacency=adj)
    return np.asarray(iperm, dtype=np.int64)


def block_ordering(mesh, dofmap, n_velocity_blocks, n_pressure_blocks, n_scalars):
    """Permutation of a ``[velocities | pressures | scalars]`` unknown vector."""
    rank = vertex_ranks(mesh)
    tri = mesh.triangles
    owner = tri[np.arange(len(tri)), np.argmin(rank[tri], axis=1)]
    comp = np.concatenate([rank, rank[owner]])
    comp_sub = np.concatenate([np.ones(dofmap.n_vertices), np.zeros(dofmap.n_triangles)])
    key = [np.tile(comp, 2 * n_velocity_blocks), np.tile(rank, n_pressure_blocks)]
    sub = [np.tile(comp_sub, 2 * n_velocity_blocks), np.full(n_pressure_blocks * len(rank), 2.0)]
    key.append(np.full(n_scalars, mesh.n_vertices + 1))
    sub.append(np.full(n_scalars, 3.0))
    key, sub = np.concatenate(key), np.concatenate(sub)
    return np.lexsort((np.arange(len(key)), sub, key))


class SparseSolver:
    """LU factorization with iterative refinement and a residual contract."""

    def __init__(self, A, order=None):
        self.A = sp.csc_matrix(A)
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise SolverError(f"matrix must be square, got {self.A.shape}")
        self.order = np.arange(n) if order is None else np.asarray(order)
        self._Ap = self.A[self.order][:, self.order].tocsc()
        self._lu = self._factor(pivoting=False)
        self._fallback = False

    def _factor(self, pivoting):
        try:
            if pivoting:
                return spla.splu(self._Ap, permc_spec="COLAMD", diag_pivot_thresh=0.1)
            return spla.splu(
                self._Ap,
                permc_spec="NATURAL",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:
            if not pivoting:
                log.info("diagonal-pivot factorization failed (%s); retrying with pivoting", exc)
                return self._factor(pivoting=True)
            raise SolverError(f"factorization failed: {exc}", {"n": self.A.shape[0]}) from exc

    def diagnostics(self):
        d = np.abs(self._lu.U.diagonal())
        return {
            "n": self.A.shape[0],
            "nnz": self.A.nnz,
            "fill": self._lu.L.nnz + self._lu.U.nnz,
            "min_pivot": float(d.min()),
            "max_pivot": float(d.max()),
            "pivot_ratio": float(d.min() / d.max()) if d.max() > 0 else 0.0,
        }

    def _refined(self, b):
        x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            return x, np.inf
        bn = np.linalg.norm(b)
        res = np.linalg.norm(b - self._Ap @ x) / bn
        for _ in range(_REFINE_STEPS):
            if res <= 1e-15:
                break
            dx = self._lu.solve(b - self._Ap @ x)
            x_new = x + dx
            res_new = np.linalg.norm(b - self._Ap @ x_new) / bn
            if not res_new < 0.5 * res:
                break
            x, res = x_new, res_new
        return x, res

    def solve(self, b):
        """Solve ``A x = b``; returns ``(x, relative_residual)``."""
        b = np.asarray(b, dtype=float)
        if not np.any(b):
            return np.zeros_like(b), 0.0
        bp = b[self.order]
        x, res = self._refined(bp)
        if not res <= RESIDUAL_TOL and not self._fallback:
            log.info("residual %.2e above contract; refactoring with pivoting", res)
            self._lu = self._factor(pivoting=True)
            self._fallback = True
            x, res = self._refined(bp)
        if not res <= RESIDUAL_TOL:
            raise SolverError(
                f"relative residual {res:.3e} exceeds {RESIDUAL_TOL:g}", self.diagnostics()
            )
        out = np.empty_like(x)
        out[self.order] = x
        return out, float(res)
