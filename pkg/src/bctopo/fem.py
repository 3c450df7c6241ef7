"""P1 finite elements on tetrahedra: assembly, Dirichlet lifting and PCG."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh

DEFAULT_RTOL = 1e-10


class SolverError(RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    rows = np.repeat(mesh.tets, 4, axis=1).ravel()
    cols = np.tile(mesh.tets, (1, 4)).ravel()
    mat = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_vertices,) * 2)
    mat.sum_duplicates()
    return mat


def element_stiffness(mesh: Mesh) -> np.ndarray:
    grads = mesh.tet_gradients
    return mesh.tet_volumes[:, None, None] * np.einsum("tik,tjk->tij", grads, grads)


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    """Global matrix of the bilinear form (grad u, grad v)."""
    return _scatter(mesh, element_stiffness(mesh))


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix: vol/20 * (1 + delta_ij) per element."""
    local = (np.ones((4, 4)) + np.eye(4)) / 20.0
    return _scatter(mesh, mesh.tet_volumes[:, None, None] * local)


def l2_inner(M, a, b) -> float:
    return float(np.asarray(a) @ (M @ np.asarray(b)))


def load_vector(mesh: Mesh, f, M=None) -> np.ndarray:
    """P1 load vector of a constant or nodal source."""
    if np.ndim(f) == 0:
        vec = np.zeros(mesh.n_vertices)
        np.add.at(vec, mesh.tets.ravel(), np.repeat(mesh.tet_volumes * (float(f) / 4.0), 4))
        return vec
    f = np.asarray(f, dtype=float)
    if f.shape != (mesh.n_vertices,):
        raise ValueError(f"nodal source must have {mesh.n_vertices} entries, got {f.shape}")
    if M is None:
        M = assemble_mass(mesh)
    return M @ f


def project_boundary_control(mesh: Mesh, labels, alpha) -> np.ndarray:
    """Lumped L2 projection of the piecewise-constant control onto P1 traces.

    Each boundary vertex gets the area-weighted mean of alpha over its
    incident faces; interior vertices get zero.  ``labels`` are 1-based.
    """
    labels = np.asarray(labels)
    alpha = np.asarray(alpha, dtype=float)
    if labels.shape != (mesh.n_faces,):
        raise ValueError(f"need one label per boundary face ({mesh.n_faces}), got {labels.shape}")
    if labels.min() < 1 or labels.max() > len(alpha):
        raise ValueError(f"labels must lie in 1..{len(alpha)}")
    inc = mesh.vertex_face_incidence
    weight = inc @ mesh.face_areas
    value = inc @ (mesh.face_areas * alpha[labels - 1])
    orphan = mesh.boundary_vertex_flags & ~(weight > 0)
    if np.any(orphan):
        raise ValueError(f"boundary vertex {np.flatnonzero(orphan)[0]} has no incident boundary face")
    g = np.zeros(mesh.n_vertices)
    b = mesh.boundary_vertex_flags
    g[b] = value[b] / weight[b]
    return g


def pcg(A, b, x0=None, rtol=DEFAULT_RTOL, maxiter=None):
    """Jacobi-preconditioned conjugate gradients for SPD ``A``.

    Stops once ||b - A x|| <= rtol * ||b||.  Returns ``(x, iterations)``.
    """
    n = len(b)
    if maxiter is None:
        maxiter = 10 * max(n, 1)
    inv_diag = 1.0 / A.diagonal()
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0
    target = rtol * bnorm
    if np.linalg.norm(r) <= target:
        return x, 0
    z = inv_diag * r
    d = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        q = A @ d
        step = rz / (d @ q)
        x += step * d
        r -= step * q
        res = np.linalg.norm(r)
        if res <= target:
            return x, it
        z = inv_diag * r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise SolverError(
        f"CG did not converge in {maxiter} iterations (relative residual {res / bnorm:.3e})",
        residual=res / bnorm,
        iterations=maxiter,
    )


def solve_dirichlet(mesh: Mesh, K, g, f=0.0, M=None, rtol=DEFAULT_RTOL, maxiter=None) -> np.ndarray:
    """Solve -lap u = f with u = g on the boundary by homogenisation.

    ``g`` is a nodal field whose interior values are ignored; ``f`` is a
    constant or a nodal field.  Interior rows satisfy K u = F.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (mesh.n_vertices,):
        raise ValueError(f"boundary data must have {mesh.n_vertices} entries, got {g.shape}")
    interior = mesh.interior_vertices
    u = np.zeros(mesh.n_vertices)
    b = mesh.boundary_vertices
    u[b] = g[b]
    if interior.size == 0:
        return u
    rhs = load_vector(mesh, f, M) - K @ u
    K_ii = K[interior][:, interior]
    u[interior], _ = pcg(K_ii.tocsr(), rhs[interior], rtol=rtol, maxiter=maxiter)
    return u


def nodal_interpolant(mesh: Mesh, func) -> np.ndarray:
    return np.asarray(func(mesh.vertices), dtype=float)
