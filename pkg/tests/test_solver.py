import numpy as np
import pytest
import scipy.sparse as sp

from stokes_ccbm.errors import DomainError, SolverError
from stokes_ccbm.experiments import manufactured_case, run_case
from stokes_ccbm.linsolve import SparseSolver, block_ordering
from stokes_ccbm.mesh import GAMMA0, GAMMA1, generate_annulus
from stokes_ccbm.solver import (
    CauchyData,
    adjoint_directional_derivative,
    adjoint_gradient,
    assemble_ccbm,
    cost,
    cost_at,
    directional_derivative,
    forward,
    homogeneous_data,
    operators,
    recover_traces,
    solve,
    solve_ccbm,
    solve_forward_robin,
)
from stokes_ccbm.spaces import build_dof_map

EPS = 1e-6


@pytest.fixture(scope="module")
def ops(mid_mesh, mid_dofmap):
    return operators(mid_mesh, mid_dofmap, 1.0)


@pytest.fixture(scope="module")
def solved(mid_mesh, mid_dofmap, case):
    return solve_ccbm(mid_mesh, mid_dofmap, 1.0, EPS, case.data(), case.f)


def _random_trace(ops, rng):
    return rng.standard_normal((len(ops.dofmap.boundary_vertices(GAMMA1)), 2))


def _trace(mesh, g):
    x, y = mesh.vertices[mesh.boundary_vertices(GAMMA1)].T
    return np.column_stack(g(x, y))


def test_system_shape(mid_mesh, mid_dofmap, case):
    sysm = assemble_ccbm(mid_mesh, mid_dofmap, 1.0, EPS, case.data(), case.f)
    nv, nt = mid_mesh.n_vertices, mid_mesh.n_triangles
    n = 4 * 2 * (nv + nt) + 4 * nv + 4
    assert sysm.matrix.shape == (n, n)
    assert sysm.rhs.shape == (n,)
    assert sysm.layout.size == n
    assert sysm.eps == EPS and sysm.mu == 1.0


def test_invalid_eps(mid_mesh, mid_dofmap, case):
    for eps in (0.0, -1e-3):
        with pytest.raises(DomainError):
            assemble_ccbm(mid_mesh, mid_dofmap, 1.0, eps, case.data(), case.f)


def test_homogeneous_problem_has_zero_solution(mid_mesh, mid_dofmap):
    sol, tr = solve_ccbm(mid_mesh, mid_dofmap, 1.0, EPS, homogeneous_data(), None)
    assert not sol.x.any()
    assert not tr.phi.any() and not tr.zeta.any()
    fw = solve_forward_robin(mid_mesh, mid_dofmap, 1.0, homogeneous_data(), None,
                             np.zeros_like(tr.phi), np.zeros_like(tr.zeta))
    assert not fw.x.any()


def test_residual_and_zero_mean(solved, ops):
    sol, _ = solved
    assert sol.residual <= 1e-8
    c = ops.c
    for name in ("p1", "p2", "pt1", "pt2"):
        p = sol.field(name)
        assert abs(c @ p) <= 1e-10 * np.linalg.norm(c) * max(np.linalg.norm(p), 1e-300)


def test_solve_is_bit_reproducible(mid_mesh, mid_dofmap, case, solved):
    again = solve(assemble_ccbm(mid_mesh, mid_dofmap, 1.0, EPS, case.data(), case.f))
    assert np.array_equal(again.x, solved[0].x)
    fresh = build_dof_map(mid_mesh)
    other = solve(assemble_ccbm(mid_mesh, fresh, 1.0, EPS, case.data(), case.f))
    assert np.array_equal(other.x, solved[0].x)


def test_recover_traces_is_linear(solved):
    sol, tr = solved
    from stokes_ccbm.solver import FieldSolution

    x2 = sol.x.copy()
    x2[sol.layout.slice("w2")] *= 2
    x2[sol.layout.slice("w1")] *= 0
    tr2 = recover_traces(FieldSolution(x2, sol.layout, sol.residual, sol.ops), EPS)
    np.testing.assert_array_equal(tr2.phi, 2 * tr.phi)
    assert not tr2.zeta.any()
    assert tr.phi.shape == (len(tr.vertices), 2)


def test_superposition(mid_mesh, mid_dofmap, case):
    half = lambda g: (lambda x, y: tuple(0.5 * np.asarray(v) for v in g(x, y)))
    zero = lambda x, y: (0 * x, 0 * x)
    a, _ = solve_ccbm(mid_mesh, mid_dofmap, 1.0, EPS, CauchyData(case.psi, zero), None)
    b, _ = solve_ccbm(mid_mesh, mid_dofmap, 1.0, EPS, CauchyData(zero, case.kappa), case.f)
    c, _ = solve_ccbm(mid_mesh, mid_dofmap, 1.0, EPS, CauchyData(half(case.psi), half(case.kappa)), half(case.f))
    np.testing.assert_allclose(2 * c.x, a.x + b.x, atol=1e-8 * np.abs(a.x + b.x).max())


def test_cost_basics(ops):
    rng = np.random.default_rng(3)
    nv, npr = ops.nv, ops.np_
    z = np.zeros((len(ops.dofmap.boundary_vertices(GAMMA1)), 2))
    assert cost(ops, np.zeros(nv), np.zeros(npr), z, z, EPS) == 0.0
    phi = _random_trace(ops, rng)
    reg = lambda p: cost(ops, np.zeros(nv), np.zeros(npr), p, z, EPS)
    assert reg(2 * phi) == pytest.approx(4 * reg(phi), rel=1e-14)


def test_recovered_traces_minimize_cost(ops, solved, case):
    _, tr = solved
    data = case.data()
    j0 = cost_at(ops, data, case.f, tr.phi, tr.zeta, EPS)
    rng = np.random.default_rng(11)
    for _ in range(10):
        dphi, dzeta = _random_trace(ops, rng), _random_trace(ops, rng)
        assert j0 <= cost_at(ops, data, case.f, tr.phi + 1e-2 * dphi, tr.zeta + 1e-2 * dzeta, EPS)


def test_directional_derivative_zero_direction(ops, case):
    rng = np.random.default_rng(0)
    phi, zeta = _random_trace(ops, rng), _random_trace(ops, rng)
    z = np.zeros_like(phi)
    assert directional_derivative(ops, case.data(), case.f, phi, zeta, z, z, EPS) == 0.0


def test_derivative_matches_central_difference(ops, case):
    rng = np.random.default_rng(5)
    data, tau = case.data(), 1e-4
    for _ in range(3):
        phi, zeta, eta, s = (_random_trace(ops, rng) for _ in range(4))
        d3 = directional_derivative(ops, data, case.f, phi, zeta, eta, s, EPS)
        dadj = adjoint_directional_derivative(ops, data, case.f, phi, zeta, eta, s, EPS)
        fd = (cost_at(ops, data, case.f, phi + tau * eta, zeta + tau * s, EPS)
              - cost_at(ops, data, case.f, phi - tau * eta, zeta - tau * s, EPS)) / (2 * tau)
        assert d3 == pytest.approx(fd, rel=1e-5)
        assert dadj == pytest.approx(d3, rel=1e-9)


def test_gradient_vanishes_at_recovered_traces(ops, solved, case):
    _, tr = solved
    g_phi, g_zeta = adjoint_gradient(ops, case.data(), case.f, tr.phi, tr.zeta, EPS)
    ref = EPS * (ops.trace_norm(tr.phi) + ops.trace_norm(tr.zeta))
    assert ops.trace_norm(g_phi) + ops.trace_norm(g_zeta) <= 1e-6 * ref


def test_exact_traces_give_small_imaginary_part(case):
    vals = []
    for k in (1, 2, 4):
        m = generate_annulus(0.5, 1.0, 2 * k, 16 * k)
        dm = build_dof_map(m)
        ops = operators(m, dm)
        s = solve_forward_robin(m, dm, 1.0, case.data(), case.f, _trace(m, case.phi), _trace(m, case.zeta))
        u2, p2 = s.field("u2"), s.pressure("p2")
        vals.append(np.sqrt(u2 @ ops.M_vel @ u2) + np.sqrt(p2 @ ops.M_p @ p2))
    assert vals[0] > vals[1] > vals[2]


def test_forward_stability_constant(case):
    """Energy norm of the forward solution over data norm stays bounded across refinements."""
    ratios = []
    for k in (1, 2, 4):
        m = generate_annulus(0.5, 1.0, 2 * k, 16 * k)
        dm = build_dof_map(m)
        ops = operators(m, dm)
        s = solve_forward_robin(m, dm, 1.0, case.data(), case.f, _trace(m, case.phi), _trace(m, case.zeta))
        u = np.concatenate([s.field("u1"), s.field("u2")])
        A = ops.K + ops.M_vel
        energy = np.sqrt(s.field("u1") @ A @ s.field("u1") + s.field("u2") @ A @ s.field("u2"))
        assert np.isfinite(u).all()
        ratios.append(energy)
    assert max(ratios) / min(ratios) < 1.5


def test_data_perturbation_bound(case):
    """Clean vs noisy forward solutions differ by at most C delta, C stable in h."""
    cs = []
    for k in (1, 2, 4):
        m = generate_annulus(0.5, 1.0, 2 * k, 16 * k)
        dm = build_dof_map(m)
        ops = operators(m, dm)
        phi, zeta = _trace(m, case.phi), _trace(m, case.zeta)
        for delta in (0.01, 0.04):
            a = forward(ops, case.data(), case.f, phi, zeta)
            b = forward(ops, case.data(delta, seed=7), case.f, phi, zeta)
            du1, du2 = a.field("u1") - b.field("u1"), a.field("u2") - b.field("u2")
            A = ops.K + ops.M_vel
            cs.append(np.sqrt(du1 @ A @ du1 + du2 @ A @ du2) / delta)
    assert max(cs) < 3 * min(cs)


def test_solver_error_on_singular_matrix():
    A = sp.csc_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SolverError) as info:
        SparseSolver(A).solve(np.array([1.0, 0.0]))
    assert isinstance(info.value.diagnostics, dict)


def test_sparse_solver_zero_rhs_and_accuracy(coarse_mesh, coarse_dofmap):
    ops = operators(coarse_mesh, coarse_dofmap)
    solver = ops.forward_solver
    x, res = solver.solve(np.zeros(solver.A.shape[0]))
    assert not x.any() and res == 0.0
    rng = np.random.default_rng(0)
    b = rng.standard_normal(solver.A.shape[0])
    x, res = solver.solve(b)
    assert res <= 1e-12
    assert np.linalg.norm(solver.A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_block_ordering_is_permutation(coarse_mesh, coarse_dofmap):
    order = block_ordering(coarse_mesh, coarse_dofmap, 4, 4, 4)
    n = 8 * coarse_dofmap.velocity_dofs_per_component + 4 * coarse_dofmap.n_pressure + 4
    assert np.array_equal(np.sort(order), np.arange(n))
    assert list(order[-4:]) == [n - 4, n - 3, n - 2, n - 1]


def test_cauchy_data_validation(mid_mesh, case):
    with pytest.raises(DomainError):
        CauchyData(case.psi, case.kappa, delta=-0.1)
    psi, kappa = case.data(0.05, seed=3).samples(mid_mesh)
    psi0, kappa0 = case.data().samples(mid_mesh)
    assert np.all(np.abs(psi - psi0) <= 0.05 * np.abs(psi0) + 1e-15)
    assert np.all(np.abs(kappa - kappa0) <= 0.05 * np.abs(kappa0) + 1e-15)
    psi_b, _ = case.data(0.05, seed=3).samples(mid_mesh)
    np.testing.assert_array_equal(psi, psi_b)
    bad = CauchyData(lambda x, y: (x / 0.0, y), case.kappa)
    with np.errstate(divide="ignore"):
        with pytest.raises(DomainError):
            bad.samples(mid_mesh)


def test_viscosity_enters_solution(case, mid_mesh, mid_dofmap):
    c2 = manufactured_case(mu=2.0)
    rep, sol, _ = run_case(mid_mesh, c2, EPS, dofmap=mid_dofmap)
    assert sol.ops.mu == 2.0
    assert rep.err_zeta < 0.05
