import pytest

from stokes_ccbm.experiments import manufactured_case
from stokes_ccbm.mesh import generate_annulus
from stokes_ccbm.spaces import build_dof_map


@pytest.fixture(scope="session")
def tiny_mesh():
    return generate_annulus(0.5, 1.0, 1, 4)


@pytest.fixture(scope="session")
def coarse_mesh():
    return generate_annulus(0.5, 1.0, 2, 16)


@pytest.fixture(scope="session")
def coarse_dofmap(coarse_mesh):
    return build_dof_map(coarse_mesh)


@pytest.fixture(scope="session")
def mid_mesh():
    return generate_annulus(0.5, 1.0, 4, 32)


@pytest.fixture(scope="session")
def mid_dofmap(mid_mesh):
    return build_dof_map(mid_mesh)


@pytest.fixture(scope="session")
def case():
    return manufactured_case()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
