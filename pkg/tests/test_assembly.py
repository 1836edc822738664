import numpy as np
import pytest
import scipy.io
import scipy.linalg

from stokes_ccbm.assembly import (
    assemble_boundary_load,
    assemble_boundary_mass,
    assemble_divergence,
    assemble_pressure_mean,
    assemble_vector_laplacian,
    assemble_viscous,
    assemble_volume_load,
    assemble_volume_mass,
    dump_matrix,
    inf_sup_constant,
)
from stokes_ccbm.errors import DomainError, NumericError
from stokes_ccbm.mesh import ALL_BOUNDARY, GAMMA0, GAMMA1, TriangleMesh, boundary_length, generate_annulus
from stokes_ccbm.spaces import build_dof_map, interpolate_velocity


def _area(mesh):
    return mesh.signed_areas().sum()


@pytest.fixture(scope="module")
def ops(mid_mesh, mid_dofmap):
    m, d = mid_mesh, mid_dofmap
    return {
        "K": assemble_viscous(m, d, 1.7),
        "L": assemble_vector_laplacian(m, d),
        "B": assemble_divergence(m, d),
        "Mv": assemble_volume_mass(m, d, "velocity"),
        "Mp": assemble_volume_mass(m, d, "pressure"),
        "M0": assemble_boundary_mass(m, d, GAMMA0),
        "M1": assemble_boundary_mass(m, d, GAMMA1),
        "MG": assemble_boundary_mass(m, d, ALL_BOUNDARY),
    }


@pytest.mark.parametrize("name", ["K", "L", "Mv", "Mp", "M0", "M1", "MG"])
def test_exact_symmetry(ops, name):
    A = ops[name]
    assert (A - A.T).count_nonzero() == 0
    coo = A.tocoo()
    assert len(set(zip(coo.row.tolist(), coo.col.tolist()))) == coo.nnz


def test_rigid_motions_in_kernel(ops, mid_mesh, mid_dofmap):
    K = ops["K"]
    scale = abs(K).max()
    for u in [lambda x, y: (-y, x), lambda x, y: (1 + 0 * x, 0 * x), lambda x, y: (0 * x, 1 + 0 * x)]:
        v = interpolate_velocity(mid_mesh, mid_dofmap, u)
        assert np.linalg.norm(K @ v) <= 1e-10 * scale


def test_kernel_is_exactly_rigid_on_coarse_mesh(coarse_mesh, coarse_dofmap):
    K = assemble_viscous(coarse_mesh, coarse_dofmap, 1.0).toarray()
    w = scipy.linalg.eigvalsh(K)
    assert np.sum(w < 1e-10 * w.max()) == 3
    assert w.min() > -1e-12 * w.max()


def test_linear_field_energy(ops, mid_mesh, mid_dofmap):
    v = interpolate_velocity(mid_mesh, mid_dofmap, lambda x, y: (x, 0 * x))
    assert v @ ops["K"] @ v == pytest.approx(2 * 1.7 * _area(mid_mesh), rel=1e-12)


def test_nonpositive_viscosity(mid_mesh, mid_dofmap):
    with pytest.raises(DomainError):
        assemble_viscous(mid_mesh, mid_dofmap, 0.0)


def test_divergence_examples(ops, mid_mesh, mid_dofmap):
    B = ops["B"]
    rot = interpolate_velocity(mid_mesh, mid_dofmap, lambda x, y: (-y, x))
    const = interpolate_velocity(mid_mesh, mid_dofmap, lambda x, y: (2 + 0 * x, -1 + 0 * x))
    dil = interpolate_velocity(mid_mesh, mid_dofmap, lambda x, y: (x, y))
    assert np.abs(B @ rot).max() < 1e-14
    assert np.abs(B @ const).max() < 1e-14
    rowsum = np.asarray(ops["Mp"].sum(axis=1)).ravel()
    np.testing.assert_allclose(B @ dil, -2 * rowsum, rtol=1e-12)


def test_bubble_divergence_by_parts(ops, mid_mesh, mid_dofmap):
    # -int q div(b e1) = int b dq/dx for every P1 q; the bubble integral is area/60
    B = ops["B"].toarray()
    from stokes_ccbm.spaces import barycentric_gradients
    G, area = barycentric_gradients(mid_mesh.vertices[mid_mesh.triangles])
    t = 5
    col = mid_dofmap.n_vertices + t
    expected = np.zeros(mid_dofmap.n_pressure)
    expected[mid_mesh.triangles[t]] = area[t] / 60 * G[t][:, 0]
    np.testing.assert_allclose(B[:, col], expected, atol=1e-15)


def test_volume_mass(ops, mid_mesh, mid_dofmap):
    one = np.ones(ops["Mp"].shape[0])
    assert one @ ops["Mp"] @ one == pytest.approx(_area(mid_mesh), rel=1e-13)
    with pytest.raises(DomainError):
        assemble_volume_mass(mid_mesh, mid_dofmap, "vorticity")


def test_p1_mass_against_local_formula():
    # every element contributes area/12 * (1 + delta_ij); row sums are area/3
    m = generate_annulus(0.5, 1.0, 1, 3)
    dm = build_dof_map(m)
    Mp = assemble_volume_mass(m, dm, "pressure").toarray()
    expected = np.zeros_like(Mp)
    for t, a in zip(m.triangles, m.signed_areas()):
        expected[np.ix_(t, t)] += a / 12 * (np.ones((3, 3)) + np.eye(3))
    np.testing.assert_allclose(Mp, expected, atol=1e-15)
    rows = Mp.sum(axis=1)
    per_vertex = np.zeros(m.n_vertices)
    np.add.at(per_vertex, m.triangles.ravel(), np.repeat(m.signed_areas() / 3, 3))
    np.testing.assert_allclose(rows, per_vertex, atol=1e-15)


def test_mass_matrices_spd(tiny_mesh):
    dm = build_dof_map(tiny_mesh)
    for space in ("velocity", "pressure"):
        M = assemble_volume_mass(tiny_mesh, dm, space).toarray()
        assert scipy.linalg.eigvalsh(M).min() > 0


def test_boundary_mass(mid_mesh, mid_dofmap, ops):
    m64 = generate_annulus(0.5, 1.0, 2, 64)
    dm = build_dof_map(m64)
    M = assemble_boundary_mass(m64, dm, ALL_BOUNDARY)
    u = interpolate_velocity(m64, dm, lambda x, y: (1 + 0 * x, 0 * x))
    perimeter = boundary_length(m64, GAMMA0) + boundary_length(m64, GAMMA1)
    assert u @ M @ u == pytest.approx(perimeter, rel=1e-13)
    assert (ops["M0"] + ops["M1"] - ops["MG"]).count_nonzero() == 0 or abs(
        ops["M0"] + ops["M1"] - ops["MG"]
    ).max() < 1e-15
    interior = np.setdiff1d(np.arange(mid_mesh.n_vertices), mid_dofmap.boundary_vertices(ALL_BOUNDARY))
    assert abs(ops["MG"][interior]).sum() == 0
    w = scipy.linalg.eigvalsh(ops["M1"].toarray())
    assert w.min() > -1e-15


def test_boundary_mass_empty_tag(tiny_mesh):
    m = TriangleMesh(tiny_mesh.vertices, tiny_mesh.triangles, tiny_mesh.boundary_edges, [GAMMA0] * 8)
    dm = build_dof_map(m)
    assert assemble_boundary_mass(m, dm, GAMMA1).nnz == 0
    assert not assemble_boundary_load(m, dm, lambda x, y: (1.0, 1.0), GAMMA1).any()


def test_loads(mid_mesh, mid_dofmap):
    e1 = interpolate_velocity(mid_mesh, mid_dofmap, lambda x, y: (1 + 0 * x, 0 * x))
    zero = assemble_volume_load(mid_mesh, mid_dofmap, lambda x, y: (0.0, 0.0))
    assert not zero.any()
    F = assemble_volume_load(mid_mesh, mid_dofmap, lambda x, y: (1.0, 0.0))
    assert F @ e1 == pytest.approx(_area(mid_mesh), rel=1e-13)
    G = assemble_boundary_load(mid_mesh, mid_dofmap, lambda x, y: (1.0, 0.0), GAMMA0)
    assert G @ e1 == pytest.approx(boundary_length(mid_mesh, GAMMA0), rel=1e-13)


def test_boundary_load_matches_mass_for_linear_data(mid_mesh, mid_dofmap):
    g = lambda x, y: (2 * x - y, 3 + x)
    v = interpolate_velocity(mid_mesh, mid_dofmap, g)
    M0 = assemble_boundary_mass(mid_mesh, mid_dofmap, GAMMA0)
    np.testing.assert_allclose(assemble_boundary_load(mid_mesh, mid_dofmap, g, GAMMA0), M0 @ v, atol=1e-14)


def _polygon_moment(mesh, a, b):
    """Exact integral of x^a y^b over the mesh, triangle by triangle (sympy oracle)."""
    import sympy

    s, t = sympy.symbols("s t")
    total = 0.0
    for tri in mesh.triangles:
        p0, p1, p2 = (sympy.Matrix(mesh.vertices[i]) for i in tri)
        x = p0 + s * (p1 - p0) + t * (p2 - p0)
        jac = abs(float((p1 - p0)[0] * (p2 - p0)[1] - (p1 - p0)[1] * (p2 - p0)[0]))
        expr = sympy.expand(x[0] ** a * x[1] ** b)
        total += jac * float(sympy.integrate(sympy.integrate(expr, (t, 0, 1 - s)), (s, 0, 1)))
    return total


def test_galerkin_polynomial_integrals(tiny_mesh):
    dm = build_dof_map(tiny_mesh)
    # int (x^2 y) * x and int (x y) * y: degree 3 integrands are exact under the rule
    F = assemble_volume_load(tiny_mesh, dm, lambda x, y: (x * x * y, x * y))
    vx = interpolate_velocity(tiny_mesh, dm, lambda x, y: (x, 0 * x))
    vy = interpolate_velocity(tiny_mesh, dm, lambda x, y: (0 * x, y))
    assert F @ vx == pytest.approx(_polygon_moment(tiny_mesh, 3, 1), abs=1e-14)
    assert F @ vy == pytest.approx(_polygon_moment(tiny_mesh, 1, 2), abs=1e-14)
    # mass pairing of two linear fields
    Mv = assemble_volume_mass(tiny_mesh, dm, "velocity")
    ux = interpolate_velocity(tiny_mesh, dm, lambda x, y: (x, 0 * x))
    uy = interpolate_velocity(tiny_mesh, dm, lambda x, y: (y, 0 * x))
    assert ux @ Mv @ uy == pytest.approx(_polygon_moment(tiny_mesh, 1, 1), abs=1e-14)


def test_nonfinite_load(mid_mesh, mid_dofmap):
    bad = lambda x, y: (1 / (x - x), y)
    with np.errstate(divide="ignore", invalid="ignore"):
        with pytest.raises(NumericError, match=r"\("):
            assemble_volume_load(mid_mesh, mid_dofmap, bad)
        with pytest.raises(NumericError):
            assemble_boundary_load(mid_mesh, mid_dofmap, bad, GAMMA1)


def test_pressure_mean(mid_mesh, mid_dofmap):
    c = assemble_pressure_mean(mid_mesh, mid_dofmap)
    assert np.all(c > 0)
    assert c.sum() == pytest.approx(_area(mid_mesh), rel=1e-13)


def test_bit_reproducible(mid_mesh, mid_dofmap, ops):
    K2 = assemble_viscous(mid_mesh, mid_dofmap, 1.7)
    assert (K2 != ops["K"]).nnz == 0


def test_inf_sup_floor():
    values = []
    for k in (1, 2, 4):
        m = generate_annulus(0.5, 1.0, 2 * k, 16 * k)
        values.append(inf_sup_constant(m, build_dof_map(m)))
    assert min(values) > 0.3
    assert values[-1] > 0.9 * values[0]


def test_dump_matrix(tmp_path, ops):
    p = tmp_path / "K.mtx"
    dump_matrix(ops["K"], p, comment="viscous")
    back = scipy.io.mmread(str(p)).tocsr()
    assert abs(back - ops["K"]).max() == 0
    assert p.read_text().startswith("%%MatrixMarket")
