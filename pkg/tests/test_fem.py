import numpy as np
import pytest

from bctopo import fem
from bctopo.mesh import generate_ellipsoid_mesh


@pytest.fixture(scope="module")
def ops(mesh6):
    return fem.assemble_stiffness(mesh6), fem.assemble_mass(mesh6)


def test_stiffness_kernel_and_symmetry(mesh6, ops):
    K, _ = ops
    assert np.max(np.abs(K @ np.ones(mesh6.n_vertices))) <= 1e-12
    assert abs(K - K.T).max() <= 1e-12


def test_unit_tet_element(unit_tet):
    Ke = fem.element_stiffness(unit_tet)[0]
    np.testing.assert_allclose(Ke.sum(axis=1), 0, atol=1e-14)
    assert np.all(np.diag(Ke) > 0)


def test_energy_of_linear_is_volume(mesh6, ops):
    K, _ = ops
    u = mesh6.vertices[:, 0]
    assert u @ K @ u == pytest.approx(mesh6.volume, rel=1e-10)


def test_mass_integrates_one(mesh6, ops):
    _, M = ops
    one = np.ones(mesh6.n_vertices)
    assert fem.l2_inner(M, one, one) == pytest.approx(mesh6.volume, rel=1e-10)
    assert np.all(M.diagonal() > 0)
    assert abs(M - M.T).max() <= 1e-15


def test_l2_inner_examples(mesh6, ops):
    _, M = ops
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, mesh6.n_vertices))
    assert fem.l2_inner(M, a, np.zeros_like(a)) == 0.0
    assert fem.l2_inner(M, a, b) == pytest.approx(fem.l2_inner(M, b, a), abs=1e-12)


def test_mass_second_moment_on_ball():
    exact = 4 * np.pi / 15
    errs = []
    for n in (4, 8):
        m = generate_ellipsoid_mesh(1, 1, 1, n)
        x = m.vertices[:, 0]
        errs.append(abs(fem.l2_inner(fem.assemble_mass(m), x, x) - exact))
    assert errs[1] < errs[0]


def test_load_vector_constant(mesh6):
    assert fem.load_vector(mesh6, 2.0).sum() == pytest.approx(2 * mesh6.volume)


def test_projection_examples(mesh6):
    alpha = np.array([0.1, 10.0, 3.0])
    g = fem.project_boundary_control(mesh6, np.full(mesh6.n_faces, 2), alpha)
    np.testing.assert_allclose(g[mesh6.boundary_vertices], 10.0)
    assert np.all(g[mesh6.interior_vertices] == 0)


def test_projection_equal_area_average(unit_tet):
    # the origin touches the three right triangles (area 0.5 each) only
    right = np.flatnonzero(np.isclose(unit_tet.face_areas, 0.5))
    labels = np.full(4, 3)
    labels[right] = [1, 2, 3]
    g = fem.project_boundary_control(unit_tet, labels, [0.0, 10.0, 5.0])
    assert g[0] == pytest.approx(5.0)


def test_projection_rejects_bad_labels(mesh6):
    with pytest.raises(ValueError):
        fem.project_boundary_control(mesh6, np.full(mesh6.n_faces, 4), [1, 2, 3])
    with pytest.raises(ValueError):
        fem.project_boundary_control(mesh6, np.ones(3, dtype=int), [1, 2, 3])


def test_constant_and_linear_solutions(mesh6, ops):
    K, _ = ops
    u = fem.solve_dirichlet(mesh6, K, np.full(mesh6.n_vertices, 2.5))
    np.testing.assert_allclose(u, 2.5, atol=1e-9)
    x = mesh6.vertices[:, 0]
    np.testing.assert_allclose(fem.solve_dirichlet(mesh6, K, x), x, atol=1e-9)


def test_maximum_principle(mesh6, ops):
    K, _ = ops
    g = np.sin(3 * mesh6.vertices[:, 0]) + mesh6.vertices[:, 2] ** 2
    g[mesh6.interior_vertices] = 0
    u = fem.solve_dirichlet(mesh6, K, g)
    b = mesh6.boundary_vertices
    assert u.min() >= g[b].min() - 1e-9 and u.max() <= g[b].max() + 1e-9


def test_linearity(mesh6, ops):
    K, M = ops
    rng = np.random.default_rng(3)
    g1, g2, f1, f2 = rng.normal(size=(4, mesh6.n_vertices))
    u = fem.solve_dirichlet(mesh6, K, g1 + g2, f1 + f2, M=M)
    v = fem.solve_dirichlet(mesh6, K, g1, f1, M=M) + fem.solve_dirichlet(mesh6, K, g2, f2, M=M)
    np.testing.assert_allclose(u, v, atol=1e-8)


def test_pcg_failure_reports_residual(mesh6, ops):
    K, _ = ops
    I = mesh6.interior_vertices
    A = K[I][:, I].tocsr()
    with pytest.raises(fem.SolverError) as info:
        fem.pcg(A, np.ones(A.shape[0]), maxiter=2)
    assert info.value.residual > 0 and info.value.iterations == 2


def test_pcg_zero_rhs(mesh6, ops):
    K, _ = ops
    x, its = fem.pcg(K[:5, :5] + 0, np.zeros(5))
    assert its == 0 and not x.any()
