import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bctopo import control, fem
from bctopo.control import ControlValues
from bctopo.mesh import generate_ellipsoid_mesh
from bctopo.problem import DirichletProblem

from conftest import ALPHA, make_problem, three_material_labels


@pytest.fixture(scope="module")
def bump_problem():
    m = generate_ellipsoid_mesh(1, 0.5, 1, 8)
    pr = DirichletProblem(m, source=0.0, u_ref=np.zeros(m.n_vertices))
    x = m.vertices
    u = np.exp(-20 * ((x[:, 0] - 0.7) ** 2 + x[:, 1] ** 2 + x[:, 2] ** 2))
    return pr, u


def test_cost_examples(mesh4):
    M = fem.assemble_mass(mesh4)
    u = np.linspace(0, 1, mesh4.n_vertices)
    assert control.cost(M, u, u, [1, 2, 3], 0.0) == 0.0
    assert control.cost(M, u, u, [1, 2, 3], 2.0) == pytest.approx(28.0)


def test_adjoint_vanishes_at_reference(mesh4):
    pr = DirichletProblem(mesh4, u_ref=np.ones(mesh4.n_vertices))
    p = pr.adjoint(np.ones(mesh4.n_vertices))
    assert np.max(np.abs(p)) <= 1e-9


def test_adjoint_sign_and_boundary(bump_problem):
    pr, u = bump_problem
    p = pr.adjoint(u)
    assert np.all(p[pr.mesh.boundary_vertices] == 0)
    assert p.max() <= 1e-9
    r = (pr.K @ p + 2 * pr.M @ u)[pr.mesh.interior_vertices]
    assert np.linalg.norm(r) <= 1e-9 * np.linalg.norm(2 * pr.M @ u)


def test_flux_sign_near_excess(bump_problem):
    # p <= 0 inside and p = 0 on the boundary, so grad p . n >= 0 next to the
    # region where u exceeds u_ref
    pr, u = bump_problem
    flux = control.boundary_flux(pr.mesh, pr.adjoint(u))
    near = np.argmin(np.linalg.norm(pr.mesh.face_centroids - [1, 0, 0], axis=1))
    assert flux[near] > 0
    assert flux[near] > 10 * np.median(np.abs(flux))


def test_flux_of_linear_field(mesh6):
    flux = control.boundary_flux(mesh6, mesh6.vertices[:, 0])
    np.testing.assert_allclose(flux, mesh6.face_normals[:, 0], atol=1e-12)
    assert not control.boundary_flux(mesh6, np.zeros(mesh6.n_vertices)).any()


def _duality(n, method):
    m = generate_ellipsoid_mesh(1, 0.5, 1, n)
    pr = DirichletProblem(m, source=0.0, u_ref=np.zeros(m.n_vertices))
    x, c = m.vertices, m.face_centroids
    u = 1 + x[:, 0] ** 2 + np.sin(x[:, 2])
    p = pr.adjoint(u)
    g_face = np.cos(2 * c[:, 0]) + c[:, 2]
    g = fem.project_boundary_control(m, np.arange(1, m.n_faces + 1), g_face)
    u_g = fem.solve_dirichlet(m, pr.K, g)
    direct = u_g @ (-2 * (pr.M @ u))
    # Green's identity with p = 0 on the boundary: int u_g (-lap p) = -int g dp/dn
    pairing = -np.sum(m.face_areas * g_face * pr.flux(u, p, method))
    return abs(direct - pairing) / abs(direct)


def test_adjoint_identity_consistent_flux_exact():
    assert _duality(8, "consistent") <= 1e-9


def test_adjoint_identity_tet_flux_moderate_mesh():
    assert _duality(12, "tet") <= 0.02


def test_adjoint_identity_tet_flux_converges():
    errs = [_duality(n, "tet") for n in (6, 12)]
    assert errs[1] < 0.7 * errs[0]


def test_project_controls_clamp_example():
    assert control.project_controls([10.0], 1.0, [-1.0], [2.0])[0] == 2.0


def test_project_controls_rejects_zero_lambda():
    with pytest.raises(ValueError, match="lambda"):
        control.project_controls([1.0], 0.0, [-1.0], [1.0])


@settings(max_examples=50, deadline=None)
@given(moments=st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3),
       lam=st.floats(1e-6, 1e6),
       lo=st.lists(st.floats(-100, 0), min_size=3, max_size=3),
       width=st.lists(st.floats(0, 100), min_size=3, max_size=3))
def test_box_feasibility(moments, lam, lo, width):
    lo = np.array(lo)
    hi = lo + np.array(width)
    a = control.project_controls(moments, lam, lo, hi)
    assert np.all(lo <= a) and np.all(a <= hi)


def test_lambda_limit_tends_to_clamped_zero():
    lo, hi = np.array([0.5, -2.0]), np.array([1.0, 3.0])
    for lam in (1e3, 1e6, 1e9):
        a = control.project_controls([7.0, -4.0], lam, lo, hi)
    np.testing.assert_allclose(a, np.clip(0.0, lo, hi), atol=1e-8)


def test_zero_flux_and_empty_regions(mesh4):
    labels = np.full(mesh4.n_faces, 3)
    labels[:10] = 1
    ctl = ControlValues([5.0, 5.0, 5.0], [-1, 0.5, -1], [1, 1, 1])
    out = control.optimal_alpha(mesh4, labels, np.zeros(mesh4.n_faces), 1.0, ctl)
    np.testing.assert_allclose(out.alpha, [0.0, 0.5, 0.0])
    np.testing.assert_array_equal(out.active, [True, False, True])


def test_control_values_validation():
    with pytest.raises(ValueError):
        ControlValues([0, 0], [1, 1], [0, 0])
    assert ControlValues([0.5], [0], [1]).feasible()


@pytest.fixture(scope="module")
def alpha_problem(mesh6):
    return make_problem(mesh6, three_material_labels(mesh6), ALPHA, lam=1.0), three_material_labels(mesh6)


def test_fixed_point_is_stationary(alpha_problem):
    pr, labels = alpha_problem
    out, its = control.solve_optimal_alpha(pr, labels, ControlValues([1.0, 1.0, 1.0]), pr.lam)
    u = pr.state(labels, out.alpha)
    again = control.optimal_alpha(pr.mesh, labels, pr.flux(u, pr.adjoint(u), "consistent"), pr.lam, out)
    assert np.max(np.abs(again.alpha - out.alpha)) <= 1e-8


def test_fixed_point_first_order(alpha_problem):
    pr, labels = alpha_problem
    out, _ = control.solve_optimal_alpha(pr, labels, ControlValues([1.0, 1.0, 1.0]), pr.lam)
    J0 = pr.cost(labels, out.alpha)
    rng = np.random.default_rng(0)
    for _ in range(3):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        for t in (1e-2, 1e-3):
            assert pr.cost(labels, out.alpha + t * d) >= J0 - 1e-3 * t ** 2


def test_fixed_point_nonconvergence_raises(alpha_problem):
    pr, labels = alpha_problem
    with pytest.raises(fem.SolverError):
        control.solve_optimal_alpha(pr, labels, ControlValues([1.0, 1.0, 1.0]), pr.lam, maxiter=2)


def test_fixed_point_diverges_for_small_lambda(mesh6):
    # the damped map contracts only while eig(H) / (2 lam) < (2 - theta) / theta,
    # H being the Hessian of the tracking term in alpha (largest eigenvalue ~1.7 here)
    labels = three_material_labels(mesh6)
    pr = make_problem(mesh6, labels, ALPHA, lam=1e-3)
    with pytest.raises(fem.SolverError):
        control.solve_optimal_alpha(pr, labels, ControlValues([1.0, 1.0, 1.0]), pr.lam)
