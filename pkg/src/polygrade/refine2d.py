"""Graded triangle mesh sequences on polygons.

Each refinement level splits every edge once (toward the more singular
endpoint at ratio kappa, at the midpoint for equally singular endpoints) and
every triangle into four children.  The initial mesh is an ear-clipping
triangulation of the polygon whose all-corner triangles are midpoint-split
once, so that every singular vertex has only VSS triangles around it and no
edge joins two corners.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import (
    Domain,
    GradingSpec,
    ValidationError,
    VertexType,
    classify_points,
)
from .fem import SimplicialMesh


@dataclass
class Mesh2:
    """Conforming triangle mesh with vertex singularity types."""

    points: np.ndarray  # (nv, 2)
    ptypes: np.ndarray  # (nv,) uint8 VertexType (V or S in 2D)
    triangles: np.ndarray  # (nt, 3) int64, positively oriented
    boundary_edges: np.ndarray  # (nb, 2) int64
    boundary_flags: np.ndarray  # (nb,) unicode 'D'/'N'
    corner_ref: np.ndarray  # (nv,) int64: domain vertex id for V points, -1 else
    level: int = 0

    def signed_areas(self) -> np.ndarray:
        p = self.points[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def to_simplicial(self) -> SimplicialMesh:
        return SimplicialMesh(
            points=self.points,
            cells=self.triangles,
            boundary_facets=self.boundary_edges,
            dirichlet=self.boundary_flags == "D",
            level=self.level,
        )


def split_edge(a, type_a, b, type_b, kappa: float):
    """Division point of edge AB: ratio kappa from the more singular endpoint."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not (0.0 < kappa <= 0.5):
        raise ValidationError(f"kappa={kappa} outside (0, 1/2]")
    if type_a > type_b:
        return a + kappa * (b - a)
    if type_b > type_a:
        return b + kappa * (a - b)
    return 0.5 * (a + b)


def refine_triangle2(pts, types, kappa: float):
    """Split one triangle into 4 children; returns (children (4,3,2), types (4,3)).

    The most singular vertex is moved to the A slot; C' on AB and B' on AC sit
    at ratio kappa from A, A' is the midpoint of BC.  New points are smooth.
    """
    pts = np.asarray(pts, dtype=float)
    types = np.asarray(types, dtype=np.uint8)
    order = np.argsort(-types.astype(np.int8), kind="stable")
    pts = pts[order]
    types = types[order]
    d1, d2 = pts[1] - pts[0], pts[2] - pts[0]
    if d1[0] * d2[1] - d1[1] * d2[0] < 0:
        pts = pts[[0, 2, 1]]
        types = types[[0, 2, 1]]
    if types[1] == VertexType.V and types[0] == VertexType.V:
        raise ValidationError("triangle has a VV edge")
    a, b, c = pts
    cp = split_edge(a, types[0], b, types[1], kappa)
    bp = split_edge(a, types[0], c, types[2], kappa)
    ap = split_edge(b, types[1], c, types[2], kappa)
    s = VertexType.S
    children = np.array([
        [a, cp, bp],
        [cp, b, ap],
        [bp, ap, c],
        [cp, ap, bp],
    ])
    ctypes = np.array([
        [types[0], s, s],
        [s, types[1], s],
        [s, s, types[2]],
        [s, s, s],
    ], dtype=np.uint8)
    return children, ctypes


def _ear_clip(poly_pts: np.ndarray, loop_ids: np.ndarray) -> np.ndarray:
    """Triangulate a simple polygon (CCW) by ear clipping; returns (nt, 3) ids."""
    ids = list(loop_ids)
    pts = {int(i): poly_pts[int(i)] for i in ids}
    tris = []
    guard = 0
    while len(ids) > 3:
        guard += 1
        if guard > 10 * len(loop_ids) ** 2:
            raise ValidationError("ear clipping failed: polygon may be invalid")
        n = len(ids)
        clipped = False
        for k in range(n):
            i0, i1, i2 = ids[(k - 1) % n], ids[k], ids[(k + 1) % n]
            p0, p1, p2 = pts[i0], pts[i1], pts[i2]
            cross = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
            if cross <= 1e-14:
                continue
            if _any_point_inside(p0, p1, p2, [pts[j] for j in ids if j not in (i0, i1, i2)]):
                continue
            tris.append((i0, i1, i2))
            del ids[k]
            clipped = True
            break
        if not clipped:
            raise ValidationError("ear clipping failed: no ear found")
    tris.append(tuple(ids))
    return np.array(tris, dtype=np.int64)


def _any_point_inside(a, b, c, others) -> bool:
    for p in others:
        s1 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
        s2 = (c[0] - b[0]) * (p[1] - b[1]) - (c[1] - b[1]) * (p[0] - b[0])
        s3 = (a[0] - c[0]) * (p[1] - c[1]) - (a[1] - c[1]) * (p[0] - c[0])
        if s1 > 1e-14 and s2 > 1e-14 and s3 > 1e-14:
            return True
    return False


def initial_mesh2(domain: Domain) -> Mesh2:
    """Ear-fan triangulation of the polygon, midpoint-split once.

    The raw triangulation uses only polygon corners (all type V); a single
    uniform 4-split puts midpoints on every edge, so afterwards each corner
    has only VSS triangles around it and no VV edges remain.
    """
    if domain.dimension != 2:
        raise ValidationError("initial_mesh2 requires a 2D domain")
    from .domain import _boundary_loop, polygon_interior_angles

    loop = _boundary_loop(domain.boundary_facets, len(domain.vertices))
    p = domain.vertices[loop]
    q = domain.vertices[np.roll(loop, -1)]
    if np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]) < 0:
        loop = loop[::-1]
    tris = _ear_clip(domain.vertices, loop)

    points = np.array(domain.vertices, dtype=float)
    ptypes = np.full(len(points), VertexType.S, dtype=np.uint8)
    corner_ref = np.full(len(points), -1, dtype=np.int64)
    for vid in domain.singular_vertices:
        ptypes[vid] = VertexType.V
        corner_ref[vid] = vid

    # midpoint 4-split of the all-corner triangulation
    edges = np.sort(tris[:, [[0, 1], [0, 2], [1, 2]]].reshape(-1, 2), axis=1)
    uniq, inv = np.unique(edges, axis=0, return_inverse=True)
    mid = 0.5 * (points[uniq[:, 0]] + points[uniq[:, 1]])
    mid_id = len(points) + np.arange(len(uniq))
    points = np.vstack([points, mid])
    ptypes = np.concatenate([ptypes, np.full(len(uniq), VertexType.S, dtype=np.uint8)])
    corner_ref = np.concatenate([corner_ref, np.full(len(uniq), -1, dtype=np.int64)])

    inv = inv.reshape(len(tris), 3)
    m01, m02, m12 = (mid_id[inv[:, k]] for k in range(3))
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    children = np.concatenate([
        np.stack([a, m01, m02], axis=1),
        np.stack([m01, b, m12], axis=1),
        np.stack([m02, m12, c], axis=1),
        np.stack([m01, m12, m02], axis=1),
    ])

    # boundary edges follow the polygon loop, split at the inserted midpoints
    bedges = []
    bflags = []
    flag_of = {}
    for facet, flag in zip(domain.boundary_facets, domain.facet_flags):
        flag_of[tuple(sorted(facet))] = flag
    lookup = {tuple(e): mid_id[k] for k, e in enumerate(map(tuple, uniq))}
    for facet in domain.boundary_facets:
        i, j = int(facet[0]), int(facet[1])
        m = lookup[tuple(sorted((i, j)))]
        flag = flag_of[tuple(sorted((i, j)))]
        bedges += [(i, m), (m, j)]
        bflags += [flag, flag]

    mesh = Mesh2(
        points=points,
        ptypes=ptypes,
        triangles=children,
        boundary_edges=np.array(bedges, dtype=np.int64),
        boundary_flags=np.array(bflags),
        corner_ref=corner_ref,
        level=0,
    )
    neg = mesh.signed_areas() <= 0
    if np.any(neg):
        raise ValidationError(f"initial mesh has non-positive triangle {np.flatnonzero(neg)[0]}")
    return mesh


def refine_mesh2(mesh: Mesh2, grading: GradingSpec, domain: Domain = None) -> Mesh2:
    """One level of graded refinement: every triangle into 4, edges split once.

    Edge split points are memoized on the sorted vertex-id pair, so both
    triangles sharing an edge see the same point and the result conforms.
    """
    tris = mesh.triangles
    ptypes = mesh.ptypes

    # put the most singular vertex in slot 0 (V > S; ties keep order), then
    # restore positive orientation by swapping the two smooth slots if needed
    t_types = ptypes[tris]
    order = np.argsort(-t_types.astype(np.int8), axis=1, kind="stable")
    tris = np.take_along_axis(tris, order, axis=1)
    p = mesh.points[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    flipped = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tris[flipped, 1], tris[flipped, 2] = tris[flipped, 2], tris[flipped, 1]

    edges = np.sort(np.stack([
        tris[:, [0, 1]], tris[:, [0, 2]], tris[:, [1, 2]],
    ], axis=1).reshape(-1, 2), axis=1)
    uniq, inv = np.unique(edges, axis=0, return_inverse=True)
    inv = inv.reshape(len(tris), 3)

    ta = ptypes[uniq[:, 0]].astype(np.int8)
    tb = ptypes[uniq[:, 1]].astype(np.int8)
    pa = mesh.points[uniq[:, 0]]
    pb = mesh.points[uniq[:, 1]]
    kap = _edge_kappas(mesh, uniq, ta, tb, grading)
    new_pts = np.where(
        (ta > tb)[:, None], pa + kap[:, None] * (pb - pa),
        np.where((tb > ta)[:, None], pb + kap[:, None] * (pa - pb), 0.5 * (pa + pb)),
    )
    if np.any((ta == VertexType.V) & (tb == VertexType.V)):
        bad = uniq[np.flatnonzero((ta == VertexType.V) & (tb == VertexType.V))[0]]
        raise ValidationError(f"VV edge {tuple(bad)} in mesh")

    base = len(mesh.points)
    new_id = base + np.arange(len(uniq))
    points = np.vstack([mesh.points, new_pts])
    ptypes_out = np.concatenate(
        [ptypes, np.full(len(uniq), VertexType.S, dtype=np.uint8)]
    )
    corner_ref = np.concatenate(
        [mesh.corner_ref, np.full(len(uniq), -1, dtype=np.int64)]
    )

    c01 = new_id[inv[:, 0]]  # on AB
    c02 = new_id[inv[:, 1]]  # on AC
    c12 = new_id[inv[:, 2]]  # on BC
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    children = np.concatenate([
        np.stack([a, c01, c02], axis=1),
        np.stack([c01, b, c12], axis=1),
        np.stack([c02, c12, c], axis=1),
        np.stack([c01, c12, c02], axis=1),
    ])

    # boundary edges split at the memoized point, inheriting the parent flag
    lookup_rows = {tuple(e): k for k, e in enumerate(map(tuple, uniq))}
    bedges = np.empty((2 * len(mesh.boundary_edges), 2), dtype=np.int64)
    bflags = np.empty(2 * len(mesh.boundary_edges), dtype=mesh.boundary_flags.dtype)
    for r, (i, j) in enumerate(mesh.boundary_edges):
        m = new_id[lookup_rows[tuple(sorted((int(i), int(j))))]]
        bedges[2 * r] = (i, m)
        bedges[2 * r + 1] = (m, j)
        bflags[2 * r] = bflags[2 * r + 1] = mesh.boundary_flags[r]

    out = Mesh2(
        points=points,
        ptypes=ptypes_out,
        triangles=children,
        boundary_edges=bedges,
        boundary_flags=bflags,
        corner_ref=corner_ref,
        level=mesh.level + 1,
    )
    neg = out.signed_areas()
    if np.any(neg <= 0):
        raise ValidationError("refinement produced a non-positive triangle")
    return out


def _edge_kappas(mesh, uniq, ta, tb, grading: GradingSpec) -> np.ndarray:
    """Per-edge grading ratio: kappa of the more singular endpoint's corner."""
    kap = np.full(len(uniq), 0.5)
    graded = ta != tb
    if not graded.any():
        return kap
    if not isinstance(grading.kappa, dict) and not isinstance(grading.a, dict):
        kap[graded] = grading.kappa_for()
        return kap
    rows = np.flatnonzero(graded)
    more = np.where(ta[rows] > tb[rows], uniq[rows, 0], uniq[rows, 1])
    for r, vid in zip(rows, more):
        kap[r] = grading.kappa_for(int(mesh.corner_ref[vid]))
    return kap


def check_mesh2(mesh: Mesh2, domain: Domain = None):
    """Conformity and area-conservation report; raises nothing, returns dict."""
    edges = np.sort(np.stack([
        mesh.triangles[:, [0, 1]], mesh.triangles[:, [0, 2]],
        mesh.triangles[:, [1, 2]],
    ], axis=1).reshape(-1, 2), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    over = uniq[counts > 2]
    single = uniq[counts == 1]
    listed = set(map(tuple, np.sort(mesh.boundary_edges, axis=1)))
    orphans = [tuple(e) for e in single if tuple(e) not in listed]
    areas = mesh.signed_areas()
    report = {
        "conforming": len(over) == 0 and len(orphans) == 0,
        "overshared_edges": [tuple(e) for e in over],
        "orphan_boundary_edges": orphans,
        "min_area": float(areas.min()) if len(areas) else 0.0,
        "total_area": float(areas.sum()),
    }
    if domain is not None:
        exact = domain.volume()
        report["area_rel_error"] = abs(report["total_area"] - exact) / exact
        report["conforming"] &= report["area_rel_error"] < 1e-12
    return report


def mesh_sequence(domain: Domain, grading: GradingSpec, levels: int):
    """Initial mesh plus `levels` refinements; yields every level."""
    mesh = initial_mesh2(domain)
    yield mesh
    for _ in range(levels):
        mesh = refine_mesh2(mesh, grading, domain)
        yield mesh


def min_angles(mesh: Mesh2) -> np.ndarray:
    """Minimum interior angle per triangle (radians)."""
    p = mesh.points[mesh.triangles]
    angs = np.empty((len(mesh.triangles), 3))
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cosv = np.einsum("nd,nd->n", u, v) / (
            np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
        )
        angs[:, k] = np.arccos(np.clip(cosv, -1.0, 1.0))
    return angs.min(axis=1)
