"""File formats: Gmsh ASCII MSH 2.2 meshes and legacy VTK boundary snapshots."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .mesh import Mesh, MeshError

MSH_TET = 4
MSH_TRIANGLE = 2
# geometric markers Gmsh writes alongside the mesh; carry no cells we need
_MSH_IGNORED = {1: "2-node line", 15: "1-node point"}
_NODES_PER_TYPE = {MSH_TRIANGLE: 3, MSH_TET: 4, 1: 2, 15: 1}

VTK_TRIANGLE = 5


class MshFormatError(MeshError):
    pass


def import_msh(path) -> Mesh:
    """Read a tetrahedral mesh from an ASCII MSH 2.2 file.

    Triangles in ``$Elements`` are taken as the boundary surface; when a file
    holds none, the boundary is rebuilt from the tetrahedra.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    pos = 0

    def expect(tag):
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines) or lines[pos].strip() != tag:
            got = lines[pos].strip() if pos < len(lines) else "end of file"
            raise MshFormatError(f"{path}: expected {tag} at line {pos + 1}, found {got!r}")
        pos += 1

    def next_line():
        nonlocal pos
        if pos >= len(lines):
            raise MshFormatError(f"{path}: unexpected end of file")
        pos += 1
        return lines[pos - 1]

    expect("$MeshFormat")
    header = next_line().split()
    if len(header) != 3 or header[0] not in ("2.2", "2"):
        raise MshFormatError(f"{path}: unsupported MSH version header {' '.join(header)!r}; need 2.2")
    if header[1] != "0":
        raise MshFormatError(f"{path}: binary MSH files are not supported")
    expect("$EndMeshFormat")

    # skip optional sections (e.g. $PhysicalNames) up to $Nodes
    while pos < len(lines) and lines[pos].strip() != "$Nodes":
        pos += 1
    expect("$Nodes")
    try:
        n_nodes = int(next_line())
        node_ids = np.empty(n_nodes, dtype=np.int64)
        coords = np.empty((n_nodes, 3))
        for k in range(n_nodes):
            fields = next_line().split()
            node_ids[k] = int(fields[0])
            coords[k] = [float(v) for v in fields[1:4]]
    except (ValueError, IndexError) as exc:
        raise MshFormatError(f"{path}: malformed $Nodes entry near line {pos}: {exc}") from None
    expect("$EndNodes")
    index_of = {int(nid): k for k, nid in enumerate(node_ids)}
    if len(index_of) != n_nodes:
        raise MshFormatError(f"{path}: duplicate node ids in $Nodes")

    expect("$Elements")
    tets, tris = [], []
    try:
        n_elem = int(next_line())
    except ValueError:
        raise MshFormatError(f"{path}: malformed element count at line {pos}") from None
    for _ in range(n_elem):
        line_no = pos + 1
        fields = next_line().split()
        try:
            elem_id, etype, ntags = int(fields[0]), int(fields[1]), int(fields[2])
            nodes = [int(v) for v in fields[3 + ntags:]]
        except (ValueError, IndexError):
            raise MshFormatError(f"{path}: malformed element at line {line_no}") from None
        if etype in _MSH_IGNORED:
            continue
        if etype not in (MSH_TET, MSH_TRIANGLE):
            raise MshFormatError(
                f"{path}: element {elem_id} (line {line_no}) has unsupported type {etype}; "
                "only 4-node tetrahedra (4) and 3-node triangles (2) are accepted"
            )
        if len(nodes) != _NODES_PER_TYPE[etype]:
            raise MshFormatError(f"{path}: element {elem_id} has {len(nodes)} nodes, expected {_NODES_PER_TYPE[etype]}")
        try:
            local = [index_of[v] for v in nodes]
        except KeyError as exc:
            raise MshFormatError(f"{path}: element {elem_id} references unknown node {exc.args[0]}") from None
        (tets if etype == MSH_TET else tris).append(local)
    expect("$EndElements")

    if not tets:
        raise MshFormatError(f"{path}: no tetrahedra found")
    return Mesh.from_arrays(coords, tets, tris if tris else None)


def export_msh(mesh: Mesh, path) -> None:
    """Write vertices, boundary triangles and tetrahedra as ASCII MSH 2.2."""
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(mesh.n_vertices)]
    out += [f"{k + 1} {x!r} {y!r} {z!r}" for k, (x, y, z) in enumerate(mesh.vertices.tolist())]
    out += ["$EndNodes", "$Elements", str(mesh.n_faces + mesh.n_tets)]
    eid = 1
    for tri in (mesh.boundary_faces + 1).tolist():
        out.append(f"{eid} {MSH_TRIANGLE} 2 1 1 {tri[0]} {tri[1]} {tri[2]}")
        eid += 1
    for tet in (mesh.tets + 1).tolist():
        out.append(f"{eid} {MSH_TET} 2 1 1 {tet[0]} {tet[1]} {tet[2]} {tet[3]}")
        eid += 1
    out.append("$EndElements")
    Path(path).write_text("\n".join(out) + "\n")


def _fmt(value) -> str:
    return format(float(value), ".17g")


def export_boundary_snapshot(mesh: Mesh, labels, path, **cell_fields) -> None:
    """Write the boundary surface as a legacy ASCII VTK unstructured grid.

    ``labels`` becomes the integer cell array ``label``.  Each keyword
    argument adds one cell array; 2-D arrays are split into one scalar array
    per column with a ``_<k>`` suffix (1-based).
    """
    labels = np.asarray(labels)
    if labels.shape != (mesh.n_faces,):
        raise ValueError(f"labels must have one entry per boundary face ({mesh.n_faces})")
    arrays = []
    for name, values in cell_fields.items():
        values = np.asarray(values, dtype=float)
        if values.shape[0] != mesh.n_faces:
            raise ValueError(f"cell field {name!r} has {values.shape[0]} rows, expected {mesh.n_faces}")
        if values.ndim == 1:
            arrays.append((name, values))
        else:
            arrays.extend((f"{name}_{k + 1}", values[:, k]) for k in range(values.shape[1]))

    # compact point set: only vertices on the boundary
    used = mesh.boundary_vertices
    remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    tris = remap[mesh.boundary_faces]

    out = [
        "# vtk DataFile Version 3.0",
        "boundary partition snapshot",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {used.size} double",
    ]
    out += [" ".join(_fmt(c) for c in p) for p in mesh.vertices[used]]
    out.append(f"CELLS {len(tris)} {4 * len(tris)}")
    out += [f"3 {a} {b} {c}" for a, b, c in tris.tolist()]
    out.append(f"CELL_TYPES {len(tris)}")
    out += [str(VTK_TRIANGLE)] * len(tris)
    out += [f"CELL_DATA {len(tris)}", "SCALARS label int 1", "LOOKUP_TABLE default"]
    out += [str(int(v)) for v in labels]
    for name, values in arrays:
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [_fmt(v) for v in values]

    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text("\n".join(out) + "\n")
    os.replace(tmp, path)


def read_vtk_cell_data(path) -> dict[str, np.ndarray]:
    """Read the CELL_DATA scalar arrays back from a snapshot file."""
    tokens = Path(path).read_text().split()
    data: dict[str, np.ndarray] = {}
    n_cells = None
    k = 0
    while k < len(tokens):
        tok = tokens[k]
        if tok == "CELL_DATA":
            n_cells = int(tokens[k + 1])
            k += 2
        elif tok == "SCALARS" and n_cells is not None:
            name, dtype = tokens[k + 1], tokens[k + 2]
            k += 4
            if tokens[k] == "LOOKUP_TABLE":
                k += 2
            raw = tokens[k:k + n_cells]
            data[name] = np.array(raw, dtype=int if dtype == "int" else float)
            k += n_cells
        else:
            k += 1
    return data
