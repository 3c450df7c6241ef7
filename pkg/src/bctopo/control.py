"""Cost functional, adjoint state, boundary flux and optimal control values.

Sign convention: the adjoint ``p`` vanishes on the boundary and solves
``-lap p = -2 (u - u_ref)``.  With this choice the derivative of the tracking
term with respect to the Dirichlet value on a boundary patch is the patch
integral of ``grad p . n``, so transferring a patch from region i to region j
changes the cost at the rate ``-(alpha_i - alpha_j) grad p . n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import DEFAULT_RTOL, SolverError, solve_dirichlet
from .mesh import Mesh


@dataclass
class ControlValues:
    """Dirichlet values per region together with their box bounds."""

    alpha: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None
    active: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).copy()
        m = len(self.alpha)
        self.lower = np.full(m, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float)
        self.upper = np.full(m, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        if self.lower.shape != (m,) or self.upper.shape != (m,):
            raise ValueError("bounds must have one entry per region")
        if np.any(self.lower > self.upper):
            raise ValueError(f"lower bound exceeds upper bound: {self.lower} > {self.upper}")
        if self.active is None:
            self.active = np.ones(m, dtype=bool)

    @property
    def M(self) -> int:
        return len(self.alpha)

    def feasible(self) -> bool:
        return bool(np.all(self.lower <= self.alpha) and np.all(self.alpha <= self.upper))


def cost(M, u, u_ref, alpha, lam: float = 0.0) -> float:
    e = np.asarray(u) - np.asarray(u_ref)
    a = np.asarray(getattr(alpha, "alpha", alpha), dtype=float)
    return float(e @ (M @ e) + lam * (a @ a))


def solve_adjoint(mesh: Mesh, K, M, u, u_ref, rtol=DEFAULT_RTOL) -> np.ndarray:
    """Homogeneous Dirichlet solve with source -2 (u - u_ref)."""
    source = -2.0 * (np.asarray(u) - np.asarray(u_ref))
    return solve_dirichlet(mesh, K, np.zeros(mesh.n_vertices), source, M=M, rtol=rtol)


def boundary_flux(mesh: Mesh, p) -> np.ndarray:
    """grad p . n on every boundary face, using the P1 gradient of the owning tet."""
    p = np.asarray(p, dtype=float)
    tets = mesh.face_to_tet
    grad = np.einsum("tkd,tk->td", mesh.tet_gradients[tets], p[mesh.tets[tets]])
    return np.einsum("fd,fd->f", grad, mesh.face_normals)


def consistent_flux(mesh: Mesh, K, M, u, u_ref, p) -> np.ndarray:
    """Variationally consistent grad p . n per face.

    The adjoint residual ``R = K p + 2 M (u - u_ref)`` at a boundary vertex is
    the exact derivative of the discrete cost with respect to that vertex's
    Dirichlet value.  Dividing by the vertex's incident face area and summing
    over the three vertices of a face gives the flux whose pairing with a
    face-wise change of the control reproduces the first-order change of the
    discrete cost exactly.
    """
    residual = K @ np.asarray(p) + 2.0 * (M @ (np.asarray(u) - np.asarray(u_ref)))
    weight = mesh.vertex_face_incidence @ mesh.face_areas
    b = mesh.boundary_vertex_flags
    nodal = np.zeros(mesh.n_vertices)
    nodal[b] = residual[b] / weight[b]
    return nodal[mesh.boundary_faces].sum(axis=1)


def region_flux_integrals(mesh: Mesh, labels, flux, n_regions: int) -> np.ndarray:
    """Integral of the face flux over each region S_i (face-wise constant)."""
    labels = np.asarray(labels)
    return np.bincount(labels - 1, weights=mesh.face_areas * np.asarray(flux), minlength=n_regions)


def project_controls(moments, lam: float, lower, upper) -> np.ndarray:
    """Clamp moments / (2 lam) into [lower, upper] componentwise."""
    if not lam > 0:
        raise ValueError("optimal control values need lambda > 0; keep alpha fixed when lambda == 0")
    return np.clip(np.asarray(moments, dtype=float) / (2.0 * lam), lower, upper)


def optimal_alpha(mesh: Mesh, labels, flux, lam: float, controls: ControlValues) -> ControlValues:
    """Projected stationarity formula for the control values at a fixed design.

    The moment of region i is minus the flux integral over S_i, which makes
    the formula the projected-gradient fixed point of J in alpha.  Empty
    regions get clamp(0) and are flagged inactive.
    """
    integrals = region_flux_integrals(mesh, labels, flux, controls.M)
    alpha = project_controls(-integrals, lam, controls.lower, controls.upper)
    present = np.bincount(np.asarray(labels) - 1, minlength=controls.M) > 0
    alpha[~present] = np.clip(0.0, controls.lower[~present], controls.upper[~present])
    return ControlValues(alpha, controls.lower, controls.upper, active=present)


def solve_optimal_alpha(problem, labels, controls: ControlValues, lam: float,
                        theta: float = 0.5, tol: float = 1e-8, maxiter: int = 100,
                        flux: str = "consistent"):
    """Damped fixed-point iteration alpha <- (1-theta) alpha + theta formula(alpha).

    ``problem`` supplies ``state``, ``adjoint`` and ``flux``.  With the
    consistent flux the region integrals are the exact gradient of the
    discrete tracking term, so the fixed point is the discrete minimiser; the
    owning-tet flux leaves an O(h) bias.  The damped map contracts only while
    the largest eigenvalue of the tracking Hessian in alpha stays below
    2 lam (2 - theta) / theta.  Returns the converged :class:`ControlValues`
    and the number of iterations.
    """
    current = ControlValues(controls.alpha, controls.lower, controls.upper)
    mesh = problem.mesh
    for it in range(1, maxiter + 1):
        u = problem.state(labels, current.alpha)
        fluxes = problem.flux(u, problem.adjoint(u), flux)
        target = optimal_alpha(mesh, labels, fluxes, lam, current)
        if not np.all(np.isfinite(target.alpha)):
            break
        if np.max(np.abs(target.alpha - current.alpha)) <= tol:
            current.active = target.active
            return current, it
        new = (1.0 - theta) * current.alpha + theta * target.alpha
        current = ControlValues(new, current.lower, current.upper, active=target.active)
    raise SolverError(f"control fixed-point iteration did not converge in {maxiter} iterations")
