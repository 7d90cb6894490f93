"""Mesh export/import: VTK legacy ASCII and a plain sectioned text format.

Both writers format floats with repr-faithful %.17g, so identical inputs
produce byte-identical files and plain-text round trips reproduce themselves
exactly.
"""

from __future__ import annotations

import numpy as np

from .domain import ValidationError
from .fem import SimplicialMesh

VTK_TRIANGLE = 5
VTK_TETRA = 10
VTK_WEDGE = 13


def _fmt(x: float) -> str:
    return "%.17g" % x


def _vtk_header(title: str) -> list:
    return [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
    ]


def mesh_to_vtk(mesh, title: str = "polygrade mesh", point_data: dict = None) -> str:
    """VTK legacy ASCII for a SimplicialMesh or a Decomposition.

    Triangles are written as cell type 5, tetrahedra as 10, prisms as wedges
    (13); decomposition octahedra are coned into 8 tetrahedra for export.
    """
    from .refine3d import Decomposition, _OCT_FACES

    if isinstance(mesh, SimplicialMesh):
        pts = mesh.points
        if pts.shape[1] == 2:
            pts = np.hstack([pts, np.zeros((len(pts), 1))])
        cells = [(VTK_TRIANGLE if mesh.dim == 2 else VTK_TETRA, row)
                 for row in mesh.cells]
    elif isinstance(mesh, Decomposition):
        pts = mesh.points
        cells = [(VTK_TETRA, row) for row in mesh.tets]
        if len(mesh.octs):
            centres = pts[mesh.octs].mean(axis=1)
            base = len(pts)
            pts = np.vstack([pts, centres])
            for r, o in enumerate(mesh.octs):
                for f in _OCT_FACES:
                    cells.append((VTK_TETRA, [base + r, o[f[0]], o[f[1]], o[f[2]]]))
        cells += [(VTK_WEDGE, row) for row in mesh.prisms]
    else:
        raise ValidationError(f"cannot export {type(mesh).__name__} to VTK")

    lines = _vtk_header(title)
    lines.append(f"POINTS {len(pts)} double")
    for p in pts:
        lines.append(" ".join(_fmt(c) for c in p))
    total = sum(len(row) + 1 for _, row in cells)
    lines.append(f"CELLS {len(cells)} {total}")
    for _, row in cells:
        lines.append(str(len(row)) + " " + " ".join(str(int(i)) for i in row))
    lines.append(f"CELL_TYPES {len(cells)}")
    for ctype, _ in cells:
        lines.append(str(ctype))
    if point_data:
        lines.append(f"POINT_DATA {len(pts)}")
        for name, values in point_data.items():
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            for v in values:
                lines.append(_fmt(float(v)))
    return "\n".join(lines) + "\n"


def mesh_to_plain(mesh) -> str:
    """Plain text format: [points], [cells], [types] sections."""
    from .refine3d import Decomposition

    if isinstance(mesh, SimplicialMesh):
        pts = mesh.points
        rows = [(VTK_TRIANGLE if mesh.dim == 2 else VTK_TETRA, row)
                for row in mesh.cells]
    elif isinstance(mesh, Decomposition):
        pts = mesh.points
        rows = [(VTK_TETRA, row) for row in mesh.tets]
        rows += [(VTK_WEDGE, row) for row in mesh.prisms]
    else:
        raise ValidationError(f"cannot export {type(mesh).__name__}")
    lines = ["[points]"]
    for p in pts:
        lines.append(" ".join(_fmt(c) for c in p))
    lines.append("[cells]")
    for _, row in rows:
        lines.append(" ".join(str(int(i)) for i in row))
    lines.append("[types]")
    for ctype, _ in rows:
        lines.append(str(ctype))
    return "\n".join(lines) + "\n"


def plain_to_mesh(text: str):
    """Parse the plain format back into (points, cells, types) arrays."""
    section = None
    pts, cells, types = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            section = line.strip("[]").lower()
            if section not in ("points", "cells", "types"):
                raise ValidationError(f"line {lineno}: unknown section [{section}]")
            continue
        toks = line.split()
        try:
            if section == "points":
                pts.append([float(t) for t in toks])
            elif section == "cells":
                cells.append([int(t) for t in toks])
            elif section == "types":
                types.append(int(toks[0]))
            else:
                raise ValueError("content before a section header")
        except ValueError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
    if len(types) != len(cells):
        raise ValidationError("[types] and [cells] lengths differ")
    return np.array(pts, dtype=float), cells, types


def plain_to_simplicial(text: str) -> SimplicialMesh:
    pts, cells, types = plain_to_mesh(text)
    want = {VTK_TRIANGLE, VTK_TETRA}
    if any(t not in want for t in types):
        raise ValidationError("plain mesh contains non-simplex cells")
    return SimplicialMesh(
        points=pts,
        cells=np.array(cells, dtype=np.int64),
        boundary_facets=np.zeros((0, pts.shape[1]), dtype=np.int64),
        dirichlet=np.zeros(0, dtype=bool),
    )


# decomposition spec files: [points], [tets], [prisms], optional mark lines


def decomposition_to_text(d) -> str:
    lines = ["[points]"]
    for p in d.points:
        lines.append(" ".join(_fmt(c) for c in p))
    lines.append("[tets]")
    for row in d.tets:
        lines.append(" ".join(str(int(i)) for i in row))
    lines.append("[prisms]")
    for row in d.prisms:
        lines.append(" ".join(str(int(i)) for i in row))
    lines.append("[marks]")
    for key in sorted(d.marks):
        diag = d.marks[key]
        lines.append(" ".join(str(int(i)) for i in key) + " : "
                     + " ".join(str(int(i)) for i in diag))
    return "\n".join(lines) + "\n"


def decomposition_from_text(text: str, domain):
    """Parse and validate a decomposition spec against its domain."""
    from .refine3d import build_decomposition

    section = None
    pts, tets, prisms = [], [], []
    marks = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            section = line.strip("[]").lower()
            if section not in ("points", "tets", "prisms", "marks"):
                raise ValidationError(f"line {lineno}: unknown section [{section}]")
            continue
        toks = line.split()
        try:
            if section == "points":
                pts.append([float(t) for t in toks])
            elif section == "tets":
                tets.append([int(t) for t in toks[:4]])
            elif section == "prisms":
                prisms.append([int(t) for t in toks[:6]])
            elif section == "marks":
                key = tuple(int(t) for t in toks[:4])
                diag = tuple(int(t) for t in toks[5:7])
                marks[tuple(sorted(key))] = tuple(sorted(diag))
            else:
                raise ValueError("content before a section header")
        except (ValueError, IndexError) as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
    return build_decomposition(
        domain, np.array(pts, dtype=float), tets, prisms, marks=marks,
    )
