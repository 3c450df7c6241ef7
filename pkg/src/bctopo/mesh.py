"""Tetrahedral meshes with oriented boundary triangles.

A :class:`Mesh` is immutable once built.  Tetrahedra are stored with positive
signed volume and boundary faces are ordered so that the right-hand normal
points out of the domain.  Per-face geometry (area, centroid, unit normal) is
computed once and cached.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

# local vertex triples of the four facets, each opposite the omitted vertex
_TET_FACETS = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


class MeshError(ValueError):
    """Raised when a mesh violates one of its structural invariants."""


@dataclass(frozen=True)
class FaceGeometry:
    area: float
    centroid: np.ndarray
    normal: np.ndarray


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    tets: np.ndarray
    boundary_faces: np.ndarray
    face_to_tet: np.ndarray

    @classmethod
    def from_arrays(cls, vertices, tets, boundary_faces=None) -> "Mesh":
        """Build a validated mesh.

        Tetrahedra with negative orientation are reordered.  If
        ``boundary_faces`` is omitted the boundary is reconstructed from
        facets used by exactly one tetrahedron; otherwise every given triangle
        must match such a facet.
        """
        vertices = np.ascontiguousarray(vertices, dtype=float)
        tets = np.array(tets, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError(f"vertices must have shape (n, 3), got {vertices.shape}")
        if tets.ndim != 2 or tets.shape[1] != 4 or len(tets) == 0:
            raise MeshError(f"tets must have shape (m, 4) with m > 0, got {tets.shape}")
        if tets.min() < 0 or tets.max() >= len(vertices):
            raise MeshError("tet references a vertex index out of range")

        vol6 = _signed_volumes6(vertices, tets)
        flat = np.flatnonzero(np.abs(vol6) <= 1e-14 * np.max(np.abs(vol6)))
        if flat.size:
            raise MeshError(f"tetrahedron {flat[0]} is degenerate (zero volume)")
        neg = vol6 < 0
        tets[neg] = tets[neg][:, [0, 2, 1, 3]]

        facets, owners, counts = _facet_table(tets)
        if np.any(counts > 2):
            bad = facets[np.flatnonzero(counts > 2)[0]]
            raise MeshError(f"facet {tuple(bad)} is shared by more than two tetrahedra")
        on_boundary = counts == 1
        bfaces = facets[on_boundary]
        btets = owners[on_boundary]

        if boundary_faces is not None:
            given = np.array(boundary_faces, dtype=np.int64).reshape(-1, 3)
            lookup = {tuple(sorted(f)): k for k, f in enumerate(bfaces.tolist())}
            interior = {tuple(f) for f in np.sort(facets[~on_boundary], axis=1).tolist()}
            order = []
            for k, tri in enumerate(given.tolist()):
                key = tuple(sorted(tri))
                if key not in lookup:
                    kind = "an interior facet" if key in interior else "no tetrahedron facet"
                    raise MeshError(
                        f"boundary triangle {k} {tuple(tri)} matches {kind}; "
                        "surface is not watertight"
                    )
                order.append(lookup[key])
            if len(set(order)) != len(order):
                raise MeshError("duplicate boundary triangle in surface elements")
            if len(order) != len(bfaces):
                missing = sorted(set(range(len(bfaces))) - set(order))
                raise MeshError(
                    f"surface elements cover {len(order)} of {len(bfaces)} boundary facets; "
                    f"facet {tuple(bfaces[missing[0]])} is uncovered"
                )
            bfaces = bfaces[order]
            btets = btets[order]

        mesh = cls(vertices, tets, bfaces, btets)
        mesh.validate()
        for arr in (mesh.vertices, mesh.tets, mesh.boundary_faces, mesh.face_to_tet):
            arr.setflags(write=False)
        return mesh

    # sizes -----------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def n_faces(self) -> int:
        return len(self.boundary_faces)

    # geometry --------------------------------------------------------------
    @cached_property
    def tet_volumes(self) -> np.ndarray:
        return _signed_volumes6(self.vertices, self.tets) / 6.0

    @property
    def volume(self) -> float:
        return float(self.tet_volumes.sum())

    @cached_property
    def tet_gradients(self) -> np.ndarray:
        """Constant gradients of the four P1 hat functions, shape (m, 4, 3)."""
        x = self.vertices[self.tets]
        jac = (x[:, 1:] - x[:, :1]).transpose(0, 2, 1)
        inv = np.linalg.inv(jac)
        grads = np.empty((len(self.tets), 4, 3))
        grads[:, 1:] = inv
        grads[:, 0] = -inv.sum(axis=1)
        return grads

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._face_cross, axis=1)

    @cached_property
    def face_centroids(self) -> np.ndarray:
        return self.vertices[self.boundary_faces].mean(axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        return self._face_cross / (2.0 * self.face_areas[:, None])

    @cached_property
    def _face_cross(self) -> np.ndarray:
        p = self.vertices[self.boundary_faces]
        return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    @property
    def surface_area(self) -> float:
        return float(self.face_areas.sum())

    # topology --------------------------------------------------------------
    @cached_property
    def boundary_vertex_flags(self) -> np.ndarray:
        flags = np.zeros(self.n_vertices, dtype=bool)
        flags[self.boundary_faces.ravel()] = True
        return flags

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_vertex_flags)

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_vertex_flags)

    @cached_property
    def vertex_face_incidence(self) -> sp.csr_matrix:
        """Sparse (n_vertices, n_faces) 0/1 incidence of boundary faces."""
        rows = self.boundary_faces.ravel()
        cols = np.repeat(np.arange(self.n_faces), 3)
        data = np.ones(rows.size)
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n_vertices, self.n_faces))

    def face_geometry(self, face: int) -> FaceGeometry:
        if not 0 <= face < self.n_faces:
            raise IndexError(f"face index {face} out of range [0, {self.n_faces})")
        area = float(self.face_areas[face])
        if not area > 0.0:
            raise MeshError(f"boundary face {face} is degenerate (zero area)")
        return FaceGeometry(area, self.face_centroids[face].copy(), self.face_normals[face].copy())

    def validate(self) -> None:
        """Check every structural invariant, raising :class:`MeshError`."""
        vol6 = _signed_volumes6(self.vertices, self.tets)
        if np.any(vol6 <= 0):
            raise MeshError(f"tetrahedron {np.flatnonzero(vol6 <= 0)[0]} has non-positive volume")

        areas = self.face_areas
        if np.any(areas <= 0):
            raise MeshError(f"boundary face {np.flatnonzero(areas <= 0)[0]} has zero area")

        # every boundary edge must be shared by exactly two boundary faces
        edges = np.sort(self.boundary_faces[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        if np.any(counts != 2):
            bad = uniq[np.flatnonzero(counts != 2)[0]]
            raise MeshError(
                f"boundary edge {tuple(bad)} is shared by {counts[counts != 2][0]} faces; "
                "surface is not watertight"
            )

        tet_centroids = self.vertices[self.tets[self.face_to_tet]].mean(axis=1)
        outward = np.einsum("ij,ij->i", self.face_normals, self.face_centroids - tet_centroids)
        if np.any(outward <= 0):
            raise MeshError(f"boundary face {np.flatnonzero(outward <= 0)[0]} is not oriented outward")


def face_geometry(mesh: Mesh, face: int) -> FaceGeometry:
    return mesh.face_geometry(face)


def divergence_volume(mesh: Mesh) -> float:
    """Volume from the boundary alone: sum of A_F (c_F . n_F) / 3."""
    flux = np.einsum("ij,ij->i", mesh.face_centroids, mesh.face_normals)
    return float(np.sum(mesh.face_areas * flux) / 3.0)


def generate_ellipsoid_mesh(a1: float, a2: float, a3: float, n: int) -> Mesh:
    """Structured tetrahedral mesh of the ellipsoid with semi-axes (a1, a2, a3).

    The cube [-1, 1]^3 is cut into n^3 cells of six tetrahedra each, every
    lattice point is pushed radially onto the ball by x * |x|_inf / |x|_2 and
    the result is scaled axis-wise.  Cells are split along the diagonal that
    points away from the origin, so the mesh is symmetric under reflection in
    the coordinate planes.
    """
    if int(n) != n or n < 2:
        raise ValueError(f"subdivision count must be an integer >= 2, got {n}")
    axes = np.array([a1, a2, a3], dtype=float)
    if np.any(~np.isfinite(axes)) or np.any(axes <= 0):
        raise ValueError(f"ellipsoid axes must be positive, got {tuple(axes)}")
    n = int(n)

    t = np.linspace(-1.0, 1.0, n + 1)
    grid = np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3)
    # reuse exact lattice values so boundary points have |x|_inf == 1 exactly
    inf = np.abs(grid).max(axis=1)
    two = np.linalg.norm(grid, axis=1)
    scale = np.divide(inf, two, out=np.zeros_like(inf), where=two > 0)
    points = grid * scale[:, None] * axes

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    cells = np.stack(np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij"), axis=-1)
    cells = cells.reshape(-1, 3)
    # the corner nearest the origin and the stepping direction per axis
    upper_half = (2 * cells + 1) >= n
    start = cells + np.where(upper_half, 0, 1)
    step = np.where(upper_half, 1, -1)

    tets = []
    for perm in itertools.permutations(range(3)):
        corners = [start.copy()]
        cur = start.copy()
        for axis in perm:
            cur = cur.copy()
            cur[:, axis] += step[:, axis]
            corners.append(cur)
        tets.append(np.stack([vid(c[:, 0], c[:, 1], c[:, 2]) for c in corners], axis=1))
    tets = np.concatenate(tets, axis=0)
    return Mesh.from_arrays(points, tets)


def _signed_volumes6(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    x = vertices[tets]
    return np.einsum("ij,ij->i", np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), x[:, 3] - x[:, 0])


def _facet_table(tets: np.ndarray):
    """Unique facets with a representative owning tet and usage counts.

    For positively oriented tets the facets in ``_TET_FACETS`` order have
    outward right-hand normals, so the oriented facet of a boundary tet is
    kept as-is.
    """
    oriented = tets[:, _TET_FACETS].reshape(-1, 3)
    owner = np.repeat(np.arange(len(tets)), 4)
    keys = np.sort(oriented, axis=1)
    _, first, inverse, counts = np.unique(
        keys, axis=0, return_index=True, return_inverse=True, return_counts=True
    )
    return oriented[first], owner[first], counts
