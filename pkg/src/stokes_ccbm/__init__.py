"""Cauchy data completion for 2D Stokes flow by the coupled complex boundary method.

Modules: ``mesh`` (annulus triangulations), ``spaces`` (MINI element),
``assembly`` (sparse operators), ``solver`` (coupled state/adjoint system,
forward Robin solves, cost and gradient), ``experiments`` (manufactured case,
errors, sweeps) and ``cli``.
"""
from .errors import DomainError, NumericError, ParseError, SolverError
from .experiments import ErrorReport, ManufacturedCase, manufactured_case, relative_errors, run_case
from .mesh import TriangleMesh, generate_annulus, load_mesh, save_mesh
from .solver import (
    CauchyData,
    CcbmSystem,
    FieldSolution,
    RecoveredTraces,
    assemble_ccbm,
    recover_traces,
    solve,
    solve_forward_robin,
)
from .spaces import MixedDofMap, build_dof_map

__version__ = "0.1.0"
