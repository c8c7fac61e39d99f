import numpy as np
import pytest

from hdivfwd.hexmesh import CompartmentTable, HexMesh, SphereSpec, generate_sphere_mesh


def box_mesh(nx, ny, nz, h=1.0, label=1, origin=(0.0, 0.0, 0.0)):
    return HexMesh((nx, ny, nz), h, origin, np.full((nx, ny, nz), label, dtype=np.uint8))


def unit_table(sigma=1.0):
    return CompartmentTable({1: ("tissue", sigma)})


@pytest.fixture(scope="session")
def sphere_2mm():
    return generate_sphere_mesh(SphereSpec((78.0, 80.0, 86.0, 92.0), 2.0))


@pytest.fixture(scope="session")
def small_sphere():
    """Four-layer sphere scaled down so that solves take well under a second."""
    return generate_sphere_mesh(SphereSpec((20.0, 22.0, 24.0, 26.0), 2.0))


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
