"""Sector geometry of the vector level set and face-wise topological derivatives.

Region l corresponds to the open cone

    s_l = {x in R^(M-1) : n^{jl} . x > 0 for all j != l},

and the steering field of a face in region l is G = (N^l)^-1 T^l, where the
rows of N^l are n^{kl} and T^l stacks D^{lk} for k != l, both in ascending k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import DirichletProblem

TIE_TOL = 1e-12
_R = 1.0 / np.sqrt(2.0)


@dataclass(frozen=True)
class SectorGeometry:
    M: int
    normals: dict  # (i, j) -> n^{ij}, 1-based labels
    N: tuple  # N[l-1] is N^l
    N_inv: tuple

    def normal(self, i: int, j: int) -> np.ndarray:
        return self.normals[(i, j)]

    def others(self, l: int) -> list[int]:
        return [k for k in range(1, self.M + 1) if k != l]


def make_sector_geometry(M: int) -> SectorGeometry:
    if M == 2:
        base = {(1, 2): np.array([1.0])}
    elif M == 3:
        base = {
            (1, 2): np.array([_R, -_R]),
            (1, 3): np.array([1.0, 0.0]),
            (2, 3): np.array([0.0, 1.0]),
        }
    else:
        raise ValueError(f"sector geometry is only available for M in {{2, 3}}, got {M}")
    normals = {}
    for (i, j), n in base.items():
        normals[(i, j)] = n
        normals[(j, i)] = -n
    N = []
    for l in range(1, M + 1):
        N.append(np.array([normals[(k, l)] for k in range(1, M + 1) if k != l]))
    N_inv = tuple(np.linalg.inv(mat) for mat in N)
    return SectorGeometry(M, normals, tuple(N), N_inv)


def sector_centers(geom: SectorGeometry) -> np.ndarray:
    """Unit direction inside each open sector: normalised sum of n^{kl}, k != l.

    Row l-1 is the centre of s_l.
    """
    rows = [sum(geom.normal(k, l) for k in geom.others(l)) for l in range(1, geom.M + 1)]
    return np.array([r / np.linalg.norm(r) for r in rows])


def sector_of(geom: SectorGeometry, psi) -> int:
    """Smallest label l with psi . n^{jl} >= -TIE_TOL for every j != l."""
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    for l in range(1, geom.M + 1):
        if all(psi @ geom.normals[(j, l)] >= -TIE_TOL for j in geom.others(l)):
            return l
    # unreachable for the supported geometries: the closed sectors cover R^(M-1)
    raise AssertionError(f"no sector contains {psi}")


def sectors_of(geom: SectorGeometry, psi) -> np.ndarray:
    """Vectorised :func:`sector_of` over rows of ``psi`` (shape (n, M-1))."""
    psi = np.asarray(psi, dtype=float).reshape(-1, geom.M - 1)
    labels = np.zeros(len(psi), dtype=np.int64)
    for l in range(geom.M, 0, -1):
        inside = np.all([psi @ geom.normals[(j, l)] >= -TIE_TOL for j in geom.others(l)], axis=0)
        labels[inside] = l
    return labels


def strict_sector_count(geom: SectorGeometry, psi) -> np.ndarray:
    """Number of open sectors containing each row of ``psi``."""
    psi = np.asarray(psi, dtype=float).reshape(-1, geom.M - 1)
    count = np.zeros(len(psi), dtype=np.int64)
    for l in range(1, geom.M + 1):
        count += np.all([psi @ geom.normals[(j, l)] > 0 for j in geom.others(l)], axis=0)
    return count


def topological_derivative_fixed_alpha(i: int, j: int, alpha, flux_value: float) -> float:
    """D^{ij} at a face: -(alpha_i - alpha_j) grad p . n."""
    alpha = np.asarray(getattr(alpha, "alpha", alpha), dtype=float)
    return -(alpha[i - 1] - alpha[j - 1]) * flux_value


def derivative_table(alpha, flux) -> np.ndarray:
    """All D^{ij} per face, shape (n_faces, M, M) with 0-based (i, j)."""
    alpha = np.asarray(getattr(alpha, "alpha", alpha), dtype=float)
    diff = alpha[:, None] - alpha[None, :]
    return -diff[None, :, :] * np.asarray(flux)[:, None, None]


@dataclass
class TopoFields:
    T: np.ndarray  # (n_faces, M-1)
    G: np.ndarray  # (n_faces, M-1)


def build_topo_fields(geom: SectorGeometry, labels, alpha, flux) -> TopoFields:
    labels = np.asarray(labels)
    table = derivative_table(alpha, flux)
    T = np.zeros((len(labels), geom.M - 1))
    G = np.zeros_like(T)
    for l in range(1, geom.M + 1):
        faces = np.flatnonzero(labels == l)
        if faces.size == 0:
            continue
        cols = [k - 1 for k in geom.others(l)]
        T[faces] = table[faces, l - 1][:, cols]
        G[faces] = T[faces] @ geom.N_inv[l - 1].T
    return TopoFields(T, G)


def fd_topological_derivative(i: int, j: int, face: int, problem: DirichletProblem,
                              labels, alpha, base_cost: float | None = None) -> float:
    """Difference quotient (J(S with face moved i -> j) - J(S)) / |face|."""
    labels = np.asarray(labels)
    if labels[face] != i:
        raise ValueError(f"face {face} carries label {labels[face]}, not {i}")
    if i == j:
        return 0.0
    if base_cost is None:
        base_cost = problem.cost(labels, alpha)
    perturbed = labels.copy()
    perturbed[face] = j
    return (problem.cost(perturbed, alpha) - base_cost) / problem.mesh.face_areas[face]


@dataclass
class OracleComparison:
    faces: np.ndarray
    pairs: list
    closed_form: np.ndarray
    finite_difference: np.ndarray

    @property
    def relative_errors(self) -> np.ndarray:
        fd = self.finite_difference
        return np.abs(self.closed_form - fd) / (np.abs(fd) + 1e-12)

    @property
    def sign_agreement(self) -> float:
        return float(np.mean(np.sign(self.closed_form) == np.sign(self.finite_difference)))

    @property
    def median_relative_error(self) -> float:
        return float(np.median(self.relative_errors))

    @property
    def mean_relative_error(self) -> float:
        return float(np.mean(self.relative_errors))


def compare_with_oracle(problem: DirichletProblem, labels, alpha, n_faces: int = 20,
                        seed: int = 0, flux: str = "tet") -> OracleComparison:
    """Closed-form vs finite-difference D^{ij} on randomly drawn faces.

    For each sampled face in region i the target j is drawn uniformly among
    the regions whose control value differs from alpha_i.  ``flux`` picks the
    grad p . n estimate (see :meth:`DirichletProblem.flux`).
    """
    labels = np.asarray(labels)
    alpha = np.asarray(getattr(alpha, "alpha", alpha), dtype=float)
    rng = np.random.default_rng(seed)
    mesh = problem.mesh
    u = problem.state(labels, alpha)
    base = problem.cost_of_state(u, alpha)
    flux_values = problem.flux(u, problem.adjoint(u), flux)

    faces = rng.choice(mesh.n_faces, size=min(n_faces, mesh.n_faces), replace=False)
    pairs, closed, fd = [], [], []
    for face in faces:
        i = int(labels[face])
        targets = [k for k in range(1, len(alpha) + 1) if alpha[k - 1] != alpha[i - 1]]
        if not targets:
            raise ValueError("every region has the same control value; nothing to compare")
        j = int(rng.choice(targets))
        pairs.append((i, j))
        closed.append(topological_derivative_fixed_alpha(i, j, alpha, flux_values[face]))
        fd.append(fd_topological_derivative(i, j, int(face), problem, labels, alpha, base))
    return OracleComparison(faces, pairs, np.array(closed), np.array(fd))
