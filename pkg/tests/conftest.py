import numpy as np
import pytest

from bctopo.mesh import Mesh, generate_ellipsoid_mesh
from bctopo.problem import DirichletProblem

ALPHA = np.array([0.1, 10.0, 3.0])

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def mesh6():
    return generate_ellipsoid_mesh(1.0, 0.5, 1.0, 6)


@pytest.fixture(scope="session")
def mesh4():
    return generate_ellipsoid_mesh(1.0, 0.5, 1.0, 4)


@pytest.fixture
def unit_tet():
    return Mesh.from_arrays([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2, 3]])


def two_material_labels(mesh):
    c = mesh.face_centroids
    return np.where(c[:, 1] ** 2 + c[:, 2] ** 2 < 0.1, 1, 2)


def three_material_labels(mesh):
    c = mesh.face_centroids
    return np.where((c[:, 0] < 0) & (c[:, 1] < 0), 1, np.where((c[:, 0] < 0) & (c[:, 1] > 0), 2, 3))


def make_problem(mesh, labels, alpha=ALPHA, lam=0.0):
    problem = DirichletProblem(mesh, source=1.0, lam=lam)
    problem.u_ref = problem.state(labels, alpha)
    return problem
