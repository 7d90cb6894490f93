"""Builtin domains and initial decompositions for the test geometries.

3D fixtures are unions of unit boxes.  Their initial decompositions come from
a half-cube grid: every half-cube touches exactly one lattice point (its
anchor).  Cubes anchored at a domain vertex become a fan of cone tetrahedra
over their Kuhn-triangulated far faces, cubes anchored inside a singular edge
become two prisms running along it, and the rest get the six-tetrahedron Kuhn
split.  Because every grid face carries the same lexicographic-extreme
diagonal (as a triangulation edge or as a prism mark), the pieces conform.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .domain import Domain, ValidationError, load_domain
from .refine3d import Decomposition, build_decomposition

H = 0.5  # half-cube side

SQUARE2D = """
[vertices]
0 0
1 0
1 1
0 1
[facets]
0 1 {f0}
1 2 {f1}
2 3 {f2}
3 0 {f3}
[grading]
m = 1
a = 0.5
"""

LSHAPE2D = """
# L-shaped polygon: re-entrant corner of opening 3*pi/2 at the origin
[vertices]
0 0
1 0
1 1
-1 1
-1 -1
0 -1
[facets]
0 1 D
1 2 D
2 3 D
3 4 D
4 5 D
5 0 D
[grading]
m = 1
a = 0.5
"""


def square2d(neumann=()) -> Domain:
    """Unit square; `neumann` lists facet indices 0..3 (bottom,right,top,left)."""
    flags = {f"f{k}": ("N" if k in neumann else "D") for k in range(4)}
    return load_domain(SQUARE2D.format(**flags))


def lshape2d() -> Domain:
    return load_domain(LSHAPE2D)


def sector2d(alpha: float, arc_segments: int = None) -> Domain:
    """Polygonal sector of opening alpha: apex at the origin, straight legs,
    a chorded arc at radius 1 (every chord point is a mild convex corner)."""
    if not (0.0 < alpha < 2 * math.pi):
        raise ValidationError(f"sector opening {alpha} outside (0, 2*pi)")
    if arc_segments is None:
        arc_segments = max(2, int(math.ceil(alpha / (math.pi / 4))))
    lines = ["[vertices]", "0 0"]
    for k in range(arc_segments + 1):
        t = alpha * k / arc_segments
        lines.append(f"{math.cos(t):.17g} {math.sin(t):.17g}")
    lines.append("[facets]")
    lines.append("0 1 D")
    for k in range(1, arc_segments + 1):
        lines.append(f"{k} {k + 1} D")
    lines.append(f"{arc_segments + 1} 0 D")
    lines += ["[grading]", "m = 1", "a = 0.5"]
    return load_domain("\n".join(lines))


# ---------------------------------------------------------------------------
# box-union 3D domains
# ---------------------------------------------------------------------------

_FACE_TABLE = {
    # axis, sign -> corner offsets (cyclic, outward-oriented)
    (0, +1): ((1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)),
    (0, -1): ((0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)),
    (1, +1): ((0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)),
    (1, -1): ((0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)),
    (2, +1): ((0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)),
    (2, -1): ((0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)),
}


class BoxComplex:
    """Union of unit lattice boxes with singular-set bookkeeping."""

    def __init__(self, voxels):
        self.voxels = {tuple(int(c) for c in v) for v in voxels}
        if not self.voxels:
            raise ValidationError("empty voxel set")
        self._build_domain()

    def _build_domain(self):
        vid = {}
        verts = []

        def vertex(p):
            key = tuple(int(round(2 * c)) for c in p)  # half-integer safe
            if key not in vid:
                vid[key] = len(verts)
                verts.append(tuple(float(c) for c in p))
            return vid[key]

        facets = []
        for v in sorted(self.voxels):
            for axis in range(3):
                for sign in (+1, -1):
                    nb = list(v)
                    nb[axis] += sign
                    if tuple(nb) in self.voxels:
                        continue
                    corners = [
                        tuple(v[k] + off[k] for k in range(3))
                        for off in _FACE_TABLE[(axis, sign)]
                    ]
                    facets.append(tuple(vertex(c) for c in corners))

        # classify lattice unit segments on the boundary by voxel occupancy
        sing_edges = []
        openings = {}
        seen = set()
        for facet in facets:
            for k in range(4):
                i, j = facet[k], facet[(k + 1) % 4]
                key = tuple(sorted((i, j)))
                if key in seen:
                    continue
                seen.add(key)
                occ = self._edge_occupancy(verts[key[0]], verts[key[1]])
                if occ == 4:
                    continue  # interior line: never reached for boundary edges
                if occ == 3:
                    sing_edges.append(key)
                    openings[key] = 3 * math.pi / 2
                elif occ == 1:
                    sing_edges.append(key)
                    openings[key] = math.pi / 2
                # occ == 2 (adjacent): coplanar facets, smooth: not singular

        # vertices terminating non-collinear singular segments
        incident = {}
        for i, j in sing_edges:
            dvec = np.array(verts[j]) - np.array(verts[i])
            dvec = tuple((dvec / np.linalg.norm(dvec)).round(9))
            incident.setdefault(i, set()).add(dvec)
            incident.setdefault(j, set()).add(tuple(-c for c in dvec))
        sing_v = set()
        for pid, dirs in incident.items():
            if len(dirs) == 2:
                d1, d2 = list(dirs)
                if all(abs(a + b) < 1e-12 for a, b in zip(d1, d2)):
                    continue  # straight through: open-edge interior
            sing_v.add(pid)

        self.domain = Domain(
            dimension=3,
            vertices=np.array(verts, dtype=float),
            boundary_facets=tuple(facets),
            facet_flags=("D",) * len(facets),
            singular_vertices=frozenset(sing_v),
            singular_edges=tuple(sorted(sing_edges)),
            corner_openings=openings,
        )
        self._vid = vid

    def _edge_occupancy(self, a, b) -> int:
        """Occupied voxels among the 4 sharing the unit segment a-b."""
        a = np.array(a)
        b = np.array(b)
        axis = int(np.argmax(np.abs(b - a)))
        lo = np.minimum(a, b).astype(int)
        count = 0
        t1, t2 = [k for k in range(3) if k != axis]
        for o1 in (-1, 0):
            for o2 in (-1, 0):
                cell = lo.copy()
                cell[t1] += o1
                cell[t2] += o2
                if tuple(cell) in self.voxels:
                    count += 1
        return count

    # -- half-cube grid ----------------------------------------------------

    def initial_decomposition(self) -> Decomposition:
        dom = self.domain
        pts = []
        pid = {}

        def vertex(p):
            key = tuple(int(round(4 * c)) for c in p)  # quarter-integer safe
            if key not in pid:
                pid[key] = len(pts)
                pts.append(np.asarray(p, dtype=float))
            return pid[key]

        sing_v_coords = {tuple(map(float, dom.vertices[i])) for i in
                         dom.singular_vertices}
        seg_arr = dom.singular_segments()

        def anchor_type(p):
            p = tuple(map(float, p))
            if p in sing_v_coords:
                return "V", None
            for k in range(len(seg_arr)):
                a, b = seg_arr[k]
                d = b - a
                t = np.dot(np.array(p) - a, d) / np.dot(d, d)
                if -1e-12 <= t <= 1 + 1e-12:
                    close = a + t * d
                    if np.linalg.norm(close - np.array(p)) < 1e-12:
                        return "E", int(np.argmax(np.abs(d)))
            return "S", None

        tets = []
        prisms = []
        marks = {}

        for vox in sorted(self.voxels):
            for signs in itertools.product((+1, -1), repeat=3):
                corner = np.array([
                    vox[k] + (0 if signs[k] > 0 else 1) for k in range(3)
                ], dtype=float)
                kind, axis = anchor_type(corner)
                if kind == "V":
                    self._emit_cone(corner, signs, vertex, tets)
                elif kind == "E":
                    self._emit_arm(corner, signs, axis, vertex, prisms, marks)
                else:
                    self._emit_kuhn(corner, signs, vertex, tets)

        return build_decomposition(
            dom, np.array(pts), np.array(tets, dtype=np.int64),
            np.array(prisms, dtype=np.int64) if prisms else
            np.zeros((0, 6), dtype=np.int64),
            marks=marks,
        )

    def _emit_cone(self, corner, signs, vertex, tets):
        vc = vertex(corner)
        for axis in range(3):
            far = corner.copy()
            far[axis] += signs[axis] * H
            # far face spans the other two axes
            t1, t2 = [k for k in range(3) if k != axis]
            quad = []
            for o1, o2 in ((0, 0), (1, 0), (1, 1), (0, 1)):
                p = far.copy()
                p[t1] += signs[t1] * H * o1
                p[t2] += signs[t2] * H * o2
                quad.append(p)
            for tri in _kuhn_triangles(quad):
                tets.append([vc] + [vertex(p) for p in tri])

    def _emit_arm(self, corner, signs, axis, vertex, prisms, marks):
        t1, t2 = [k for k in range(3) if k != axis]
        base = []
        for o1, o2 in ((0, 0), (1, 0), (1, 1), (0, 1)):
            p = corner.copy()
            p[t1] += signs[t1] * H * o1
            p[t2] += signs[t2] * H * o2
            base.append(p)
        shift = np.zeros(3)
        shift[axis] = signs[axis] * H
        for tri in _kuhn_triangles(base):
            b_ids = [vertex(p) for p in tri]
            t_ids = [vertex(p + shift) for p in tri]
            prisms.append(b_ids + t_ids)
            for (i, j) in ((0, 1), (1, 2), (2, 0)):
                quad = (tri[i], tri[j], tri[j] + shift, tri[i] + shift)
                ids = (b_ids[i], b_ids[j], t_ids[j], t_ids[i])
                key = tuple(sorted(ids))
                if key not in marks:
                    marks[key] = _lex_diag(quad, ids)

    def _emit_kuhn(self, corner, signs, vertex, tets):
        # split along the global (+1,+1,+1) diagonal from the cube's min
        # corner so every face carries its lex-extreme diagonal
        lo = np.array([
            corner[k] if signs[k] > 0 else corner[k] - H for k in range(3)
        ])
        steps = np.diag([H, H, H])
        for perm in itertools.permutations(range(3)):
            path = [lo.copy()]
            for axis in perm:
                path.append(path[-1] + steps[axis])
            tets.append([vertex(p) for p in path])


def _kuhn_triangles(quad):
    """Split a cyclic quad by the diagonal through its lex-extreme corners."""
    keys = [tuple(np.round(np.asarray(p), 12)) for p in quad]
    k = min(range(4), key=lambda i: keys[i])
    return (
        (quad[k], quad[(k + 1) % 4], quad[(k + 2) % 4]),
        (quad[k], quad[(k + 2) % 4], quad[(k + 3) % 4]),
    )


def _lex_diag(quad, ids):
    keys = [tuple(np.round(np.asarray(p), 12)) for p in quad]
    k = min(range(4), key=lambda i: keys[i])
    return tuple(sorted((ids[k], ids[(k + 2) % 4])))


def cube3d() -> BoxComplex:
    return BoxComplex([(0, 0, 0)])


def fichera3d() -> BoxComplex:
    voxels = [v for v in itertools.product((-1, 0), repeat=3) if v != (0, 0, 0)]
    return BoxComplex(voxels)


def prismwedge3d() -> BoxComplex:
    """L-shaped prism: re-entrant dihedral edge of opening 3*pi/2 on the z-axis."""
    return BoxComplex([(0, 0, 0), (-1, 0, 0), (-1, -1, 0)])


BUILTIN_2D = {
    "square2d": square2d,
    "lshape2d": lshape2d,
}
BUILTIN_3D = {
    "cube3d": cube3d,
    "fichera3d": fichera3d,
    "prismwedge3d": prismwedge3d,
}


def builtin_domain(name: str):
    """Domain (and BoxComplex for 3D) for a builtin fixture name.

    `sector2d(alpha)` takes the opening angle in radians, e.g.
    `sector2d(4.71238898038469)`.
    """
    name = name.strip()
    if name.startswith("sector2d"):
        inner = name[len("sector2d"):].strip("()")
        return sector2d(float(inner)), None
    if name in BUILTIN_2D:
        return BUILTIN_2D[name](), None
    if name in BUILTIN_3D:
        bc = BUILTIN_3D[name]()
        return bc.domain, bc
    raise ValidationError(f"unknown builtin fixture {name!r}")
