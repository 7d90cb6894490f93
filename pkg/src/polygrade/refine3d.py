"""3D graded decompositions: typed tetrahedra, octahedra, and marked prisms.

The decomposition sequence refines cells by vertex type:

* S4 tetrahedra split into 4 half-scale corner tetrahedra and a central
  octahedron.  Octahedra are first-class cells: they refine into 6 half-scale
  octahedra and 8 tetrahedra, and are coned from their centers (8 tetrahedra
  each, giving the familiar 12-children-per-tetrahedron view) only when the
  tetrahedral mesh is emitted.  The family then stays within two similarity
  classes per seed, so dihedral angles never degrade under iteration.
* VS3 tetrahedra grade their three V-edges at ratio kappa and emit one VS3
  corner child plus 11 S4 tetrahedra (the warped central region is coned once
  from the centroid of its six division points).
* VESS tetrahedra emit a kappa-scaled VESS corner copy, an anisotropic prism
  along the singular edge (the only child containing the old E vertex), and
  four S4 fillers; the quadrilateral between prism and fillers gets a mark.
* Prisms refine semi-uniformly: kappa-graded in the cross-section, midpoint
  along the axis, 8 children.

Marks (quad-face diagonals) live in a global map keyed by the face's vertex
ids: new quads take the diagonal from their smallest-id corner; sub-quads of a
marked quad inherit the diagonal rising from the same cross-section side,
which is exactly the diagonal pattern a midpoint-refined tetrahedron pair
induces from the other side of the quad.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import (
    Domain,
    GradingSpec,
    NumericalError,
    ValidationError,
    VertexType,
    point_segment_distance,
)
from .fem import SimplicialMesh

S4, VS3, VESS = 0, 1, 2
_TET_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])
# octahedron layout: antipodal pairs (p0,p1,p2 | q0,q1,q2), axis i = (i, i+3)
_OCT_EDGES = np.array([
    [0, 1], [0, 2], [0, 4], [0, 5],
    [3, 1], [3, 2], [3, 4], [3, 5],
    [1, 2], [1, 5], [4, 2], [4, 5],
])
_OCT_EDGE_COL = {tuple(sorted(e)): k for k, e in enumerate(map(tuple, _OCT_EDGES))}
_OCT_FACES = np.array([
    [0, 1, 2], [0, 1, 5], [0, 4, 2], [0, 4, 5],
    [3, 1, 2], [3, 1, 5], [3, 4, 2], [3, 4, 5],
])
_PRISM_LATERAL = ((0, 1), (1, 2), (2, 0))


@dataclass
class ConformityReport:
    ok: bool
    n_cells: int
    volume_total: float
    volume_rel_error: float | None
    violations: list
    dihedral_stats: dict

    def __str__(self):
        status = "PASS" if self.ok else "FAIL"
        lines = [f"conformity {status}: {self.n_cells} cells, "
                 f"volume {self.volume_total:.12g}"]
        if self.volume_rel_error is not None:
            lines.append(f"  volume rel error {self.volume_rel_error:.3e}")
        for kind, stats in sorted(self.dihedral_stats.items()):
            lines.append(
                f"  dihedral {kind}: min {math.degrees(stats[0]):.3f} deg, "
                f"max {math.degrees(stats[1]):.3f} deg"
            )
        for v in self.violations[:20]:
            lines.append(f"  violation: {v}")
        if len(self.violations) > 20:
            lines.append(f"  ... {len(self.violations) - 20} more")
        return "\n".join(lines)


@dataclass
class Decomposition:
    """Mixed tet/octahedron/prism decomposition of a polyhedral domain."""

    domain: Domain
    points: np.ndarray  # (n, 3)
    ptypes: np.ndarray  # (n,) uint8 VertexType
    corner_ref: np.ndarray  # (n,) domain vertex id (V) / singular edge idx (E) / -1
    tets: np.ndarray  # (mt, 4); VS3 has V at slot 0, VESS is (V, E, S, S)
    tclass: np.ndarray  # (mt,) uint8 in {S4, VS3, VESS}
    octs: np.ndarray  # (mo, 6) antipodal-pair layout
    prisms: np.ndarray  # (mp, 6) (b0 b1 b2 | t0 t1 t2), EE edge at (b0, t0)
    marks: dict  # quad key (sorted 4-tuple) -> sorted diagonal pair
    level: int = 0

    def n_elements(self) -> int:
        return len(self.tets) + len(self.octs) + len(self.prisms)

    def census(self) -> dict:
        return {
            "S4": int(np.sum(self.tclass == S4)),
            "VS3": int(np.sum(self.tclass == VS3)),
            "VESS": int(np.sum(self.tclass == VESS)),
            "octs": len(self.octs),
            "prisms": len(self.prisms),
        }

    def tet_volumes(self) -> np.ndarray:
        return _tet_volumes(self.points, self.tets)

    def oct_volumes(self) -> np.ndarray:
        if not len(self.octs):
            return np.zeros(0)
        total = np.zeros(len(self.octs))
        centre = self.points[self.octs].mean(axis=1)
        for f in _OCT_FACES:
            tri = self.points[self.octs[:, f]]
            total += np.abs(np.einsum(
                "nd,nd->n",
                np.cross(tri[:, 1] - centre, tri[:, 2] - centre),
                tri[:, 0] - centre,
            )) / 6.0
        return total

    def prism_volumes(self) -> np.ndarray:
        if not len(self.prisms):
            return np.zeros(0)
        p = self.points[self.prisms]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        base = 0.5 * np.linalg.norm(n, axis=1)
        n = n / (2.0 * base[:, None])
        axis = p[:, 3] - p[:, 0]
        return base * np.abs(np.einsum("nd,nd->n", axis, n))

    def total_volume(self) -> float:
        return float(self.tet_volumes().sum() + self.oct_volumes().sum()
                     + self.prism_volumes().sum())


def _tet_volumes(points, tets) -> np.ndarray:
    if not len(tets):
        return np.zeros(0)
    x = points[tets]
    return np.linalg.det(x[:, 1:] - x[:, :1]) / 6.0


# ---------------------------------------------------------------------------
# single-element operations (the contract surface; the engine vectorizes the
# same arithmetic)
# ---------------------------------------------------------------------------

def refine_s4(pts):
    """Uniform split of one S4 tetrahedron into 12 children (coordinates).

    4 corner tetrahedra on edge midpoints plus the central octahedron coned
    from its barycenter: 4 children of volume V/8 and 8 of volume V/16.
    """
    pts = np.asarray(pts, dtype=float)
    m = {(i, j): 0.5 * (pts[i] + pts[j]) for i, j in map(tuple, _TET_EDGES)}
    out = [
        np.array([pts[0], m[(0, 1)], m[(0, 2)], m[(0, 3)]]),
        np.array([pts[1], m[(0, 1)], m[(1, 2)], m[(1, 3)]]),
        np.array([pts[2], m[(0, 2)], m[(1, 2)], m[(2, 3)]]),
        np.array([pts[3], m[(0, 3)], m[(1, 3)], m[(2, 3)]]),
    ]
    octa = np.array([m[(0, 1)], m[(0, 2)], m[(0, 3)],
                     m[(2, 3)], m[(1, 3)], m[(1, 2)]])
    centre = octa.mean(axis=0)
    for f in _OCT_FACES:
        out.append(np.array([centre, octa[f[0]], octa[f[1]], octa[f[2]]]))
    return out


def refine_vs3(pts, kappa: float):
    """Graded split of one VS3 tetrahedron (V at slot 0) into 12 children.

    Edges through V divide at ratio kappa, the rest at midpoints; the child at
    V is the kappa-scaled VS3 copy (volume kappa^3 V), the other 11 are S4.
    Returns (children, classes).
    """
    pts = np.asarray(pts, dtype=float)
    a = pts[0]
    p = {j: a + kappa * (pts[j] - a) for j in (1, 2, 3)}
    m = {(i, j): 0.5 * (pts[i] + pts[j]) for i, j in ((1, 2), (1, 3), (2, 3))}
    children = [np.array([a, p[1], p[2], p[3]])]
    classes = [VS3]
    children += [
        np.array([pts[1], p[1], m[(1, 2)], m[(1, 3)]]),
        np.array([pts[2], p[2], m[(1, 2)], m[(2, 3)]]),
        np.array([pts[3], p[3], m[(1, 3)], m[(2, 3)]]),
    ]
    classes += [S4] * 3
    octa = np.array([p[1], p[2], p[3], m[(2, 3)], m[(1, 3)], m[(1, 2)]])
    centre = octa.mean(axis=0)
    for f in _OCT_FACES:
        children.append(np.array([centre, octa[f[0]], octa[f[1]], octa[f[2]]]))
        classes.append(S4)
    vols = np.array([np.linalg.det(c[1:] - c[0]) / 6.0 for c in children])
    if np.any(vols == 0.0):
        raise NumericalError("degenerate child in VS3 split")
    return children, classes


def refine_vess(pts, kappa: float):
    """Graded split of one VESS tetrahedron (A=V, B=E, C, D smooth).

    Returns (tets, classes, prism): a kappa-scaled VESS copy at A, four S4
    fillers, and the prism along the singular edge, the only child containing
    B.  The quad between the pyramid fillers splits along the diagonal from
    its smallest corner (the engine substitutes the globally marked one).
    """
    pts = np.asarray(pts, dtype=float)
    a, b, c, d = pts
    pab = a + kappa * (b - a)
    pac = a + kappa * (c - a)
    pad = a + kappa * (d - a)
    pbc = b + kappa * (c - b)
    pbd = b + kappa * (d - b)
    mcd = 0.5 * (c + d)
    tets = [np.array([a, pab, pac, pad])]
    classes = [VESS]
    tets += [
        np.array([c, pac, pbc, mcd]),
        np.array([d, pad, pbd, mcd]),
        np.array([pac, pbc, pbd, mcd]),  # pyramid half 1, diagonal pac-pbd
        np.array([pac, pbd, pad, mcd]),  # pyramid half 2
    ]
    classes += [S4] * 4
    prism = np.array([pab, pac, pad, b, pbc, pbd])
    return tets, classes, prism


def refine_prism(pts, types, kappa: float):
    """Semi-uniform split of one prism into 8 children (coordinate arrays).

    The ESS cross-section grades at ratio kappa toward the E corner, the axis
    splits at midpoints; an SSS prism refines uniformly.
    """
    pts = np.asarray(pts, dtype=float)
    types = np.asarray(types, dtype=np.uint8)

    def cross_split(tri, tt):
        c01 = _graded_point(tri[0], tt[0], tri[1], tt[1], kappa)
        c12 = _graded_point(tri[1], tt[1], tri[2], tt[2], kappa)
        c20 = _graded_point(tri[2], tt[2], tri[0], tt[0], kappa)
        return [
            np.array([tri[0], c01, c20]),
            np.array([c01, tri[1], c12]),
            np.array([c20, c12, tri[2]]),
            np.array([c01, c12, c20]),
        ]

    cells_b = cross_split(pts[:3], types[:3])
    cells_t = cross_split(pts[3:], types[3:])
    out = []
    for cb, ct in zip(cells_b, cells_t):
        cm = 0.5 * (cb + ct)
        out.append(np.vstack([cb, cm]))
        out.append(np.vstack([cm, ct]))
    return out


def _graded_point(a, ta, b, tb, kappa):
    if ta > tb:
        return a + kappa * (b - a)
    if tb > ta:
        return b + kappa * (a - b)
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# prism tetrahedralization templates
# ---------------------------------------------------------------------------

def _build_prism_templates():
    """Map delta pattern -> three local tets (indices into b0 b1 b2 t0 t1 t2).

    delta_ab = 1 when the quad between lateral edges a and b carries the
    diagonal a -> top(b).  The two cyclic patterns admit no decomposition.
    """
    base = {
        (1, 1, 0): ((0, 1, 2, 5), (0, 1, 4, 5), (0, 3, 4, 5)),
        (1, 0, 0): ((0, 1, 2, 4), (0, 2, 4, 5), (0, 3, 4, 5)),
    }
    rot = (1, 2, 0, 4, 5, 3)
    templates = {}
    for pat, tets in base.items():
        cur_p, cur_t = pat, tets
        for _ in range(3):
            templates[cur_p] = cur_t
            cur_t = tuple(tuple(rot[i] for i in tet) for tet in cur_t)
            # relabeling (0,1,2)->(1,2,0) permutes the quad faces the same way
            cur_p = (cur_p[2], cur_p[0], cur_p[1])
    return templates


_PRISM_TEMPLATES = _build_prism_templates()


def _check_templates():
    pts = np.array([
        [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0],
    ])
    assert len(_PRISM_TEMPLATES) == 6
    for pat, tets in _PRISM_TEMPLATES.items():
        vol = sum(
            abs(np.linalg.det(pts[list(tet)][1:] - pts[list(tet)][0])) / 6.0
            for tet in tets
        )
        assert abs(vol - 0.5) < 1e-12, (pat, vol)


_check_templates()


def _prism_deltas(prism, marks):
    """(delta01, delta12, delta20) for one prism row from the global mark map."""
    deltas = []
    for a, b in _PRISM_LATERAL:
        lo = (int(prism[a]), int(prism[b]))
        hi = (int(prism[a + 3]), int(prism[b + 3]))
        key = tuple(sorted(lo + hi))
        diag = marks.get(key)
        if diag is None:
            raise ValidationError(f"prism quad {key} has no mark")
        if set(diag) == {lo[0], hi[1]}:
            deltas.append(1)
        elif set(diag) == {lo[1], hi[0]}:
            deltas.append(0)
        else:
            raise ValidationError(f"mark {diag} is not a diagonal of quad {key}")
    return tuple(deltas)


def tetrahedralize(d: Decomposition) -> SimplicialMesh:
    """Conforming tetrahedral mesh: prisms split by marks, octahedra coned.

    Octahedron centers become new mesh vertices; every output tetrahedron has
    positive volume and boundary faces inherit the domain facet flags.
    """
    points = [d.points]
    tets = [d.tets]
    if len(d.octs):
        centres = d.points[d.octs].mean(axis=1)
        cid = len(d.points) + np.arange(len(d.octs))
        points.append(centres)
        cones = np.empty((len(d.octs) * 8, 4), dtype=np.int64)
        for k, f in enumerate(_OCT_FACES):
            cones[k::8, 0] = cid
            cones[k::8, 1:] = d.octs[:, f]
        tets.append(cones)
    if len(d.prisms):
        ptets = np.empty((len(d.prisms) * 3, 4), dtype=np.int64)
        for r, prism in enumerate(d.prisms):
            pat = _prism_deltas(prism, d.marks)
            tpl = _PRISM_TEMPLATES.get(pat)
            if tpl is None:
                raise NumericalError(
                    f"prism {r}: cyclic mark pattern {pat} admits no split"
                )
            for k, tet in enumerate(tpl):
                ptets[3 * r + k] = [prism[i] for i in tet]
        tets.append(ptets)
    allpts = np.vstack(points)
    alltets = np.vstack(tets)
    vols = _tet_volumes(allpts, alltets)
    flip = vols < 0
    alltets[flip, 2], alltets[flip, 3] = (
        alltets[flip, 3].copy(), alltets[flip, 2].copy())
    if np.any(_tet_volumes(allpts, alltets) <= 0):
        raise NumericalError("tetrahedralization produced a degenerate cell")
    bfaces, bflags = _boundary_faces(allpts, alltets, d.domain)
    return SimplicialMesh(
        points=allpts, cells=alltets, boundary_facets=bfaces,
        dirichlet=bflags == "D", level=d.level,
    )


def _face_census(tets):
    local = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
    f = np.sort(tets[:, local].reshape(-1, 3), axis=1)
    return np.unique(f, axis=0, return_counts=True)


def _boundary_faces(points, tets, domain):
    uniq, counts = _face_census(tets)
    bf = uniq[counts == 1]
    flags = _facet_flags_for(points[bf].mean(axis=1), domain)
    if np.any(flags == "?"):
        bad = bf[np.flatnonzero(flags == "?")[0]]
        raise ValidationError(f"boundary face {tuple(bad)} lies on no domain facet")
    return bf, flags


def _facet_flags_for(centroids, domain, tol=None):
    """D/N flag of the domain facet containing each point ('?' if none)."""
    if tol is None:
        tol = 1e-9 * domain.diameter
    flags = np.full(len(centroids), "?", dtype="<U1")
    for facet, flag in zip(domain.boundary_facets, domain.facet_flags):
        pts = domain.vertices[list(facet)]
        n = np.cross(pts[1] - pts[0], pts[2] - pts[0])
        n = n / np.linalg.norm(n)
        todo = np.flatnonzero(flags == "?")
        if not len(todo):
            break
        c = centroids[todo]
        on_plane = np.abs((c - pts[0]) @ n) <= tol
        if not on_plane.any():
            continue
        inside = _in_polygon(c[on_plane], pts, n, tol)
        flags[todo[on_plane][inside]] = flag
    return flags


def _in_polygon(pts3, poly, n, tol):
    """Point-in-polygon for points coplanar with the facet."""
    drop = int(np.argmax(np.abs(n)))
    keep = [i for i in range(3) if i != drop]
    p2 = pts3[:, keep]
    q = poly[:, keep]
    inside = np.zeros(len(p2), dtype=bool)
    for k in range(len(q)):
        a, b = q[k], q[(k + 1) % len(q)]
        cond = (a[1] <= p2[:, 1]) != (b[1] <= p2[:, 1])
        denom = b[1] - a[1]
        if abs(denom) < 1e-300:
            continue
        xs = a[0] + (p2[:, 1] - a[1]) * (b[0] - a[0]) / denom
        inside ^= cond & (p2[:, 0] <= xs)
    d = point_segment_distance(pts3, poly, np.roll(poly, -1, axis=0))
    inside |= d.min(axis=1) <= tol
    return inside


# ---------------------------------------------------------------------------
# conformity checking
# ---------------------------------------------------------------------------

def check_conformity(obj, domain: Domain = None) -> ConformityReport:
    """Face-accounting conformity check for decompositions and tet meshes.

    Every interior triangle must be shared by exactly two cells; a prism quad
    either matches another prism quad or a pair of triangles split along its
    mark; leftover faces must lie on the domain boundary.  Also reports volume
    partition and per-type dihedral ranges.
    """
    if isinstance(obj, SimplicialMesh):
        return _check_mesh(obj, domain)
    return _check_decomposition(obj, domain or obj.domain)


def _check_mesh(mesh: SimplicialMesh, domain):
    violations = []
    vols = mesh.cell_volumes()
    if np.any(vols <= 0):
        violations.append(f"{int(np.sum(vols <= 0))} non-positive cells")
    uniq, counts = _face_census(mesh.cells)
    if np.any(counts > 2):
        for f in uniq[counts > 2][:5]:
            violations.append(f"face {tuple(f)} shared by >2 cells")
    singles = uniq[counts == 1]
    if domain is not None and len(singles):
        flags = _facet_flags_for(mesh.points[singles].mean(axis=1), domain)
        orphans = np.flatnonzero(flags == "?")
        for f in singles[orphans[:5]]:
            violations.append(f"orphan interior face {tuple(f)}")
        if len(orphans) > 5:
            violations.append(f"... {len(orphans) - 5} more orphan faces")
    total = float(np.abs(vols).sum())
    rel = None
    if domain is not None:
        exact = domain.volume()
        rel = abs(total - exact) / exact
        if rel > 1e-10:
            violations.append(f"volume partition off by {rel:.3e}")
    stats = {"tets": _dihedral_range(mesh.points, mesh.cells)}
    return ConformityReport(
        ok=not violations, n_cells=len(mesh.cells), volume_total=total,
        volume_rel_error=rel, violations=violations, dihedral_stats=stats,
    )


def _check_decomposition(d: Decomposition, domain):
    violations = []
    tris = {}

    def add_tris(rows):
        for row in np.sort(rows, axis=1):
            key = tuple(row)
            tris[key] = tris.get(key, 0) + 1

    local = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
    if len(d.tets):
        add_tris(d.tets[:, local].reshape(-1, 3))
    if len(d.octs):
        add_tris(d.octs[:, _OCT_FACES].reshape(-1, 3))
    if len(d.prisms):
        add_tris(d.prisms[:, :3])
        add_tris(d.prisms[:, 3:])

    quads = {}
    for prism in d.prisms:
        for a, b in _PRISM_LATERAL:
            key = tuple(sorted(map(int, (prism[a], prism[b],
                                         prism[a + 3], prism[b + 3]))))
            quads[key] = quads.get(key, 0) + 1

    for key, cnt in quads.items():
        if cnt > 2:
            violations.append(f"quad {key} shared by {cnt} prisms")
        elif cnt == 1:
            diag = d.marks.get(key)
            matched = False
            if diag:
                others = [v for v in key if v not in diag]
                t1 = tuple(sorted(diag + (others[0],)))
                t2 = tuple(sorted(diag + (others[1],)))
                if tris.get(t1, 0) >= 1 and tris.get(t2, 0) >= 1:
                    tris[t1] -= 1
                    tris[t2] -= 1
                    matched = True
            if not matched and not _on_boundary(d, key):
                violations.append(f"quad {key}: no partner prism or tet pair")

    for key, cnt in tris.items():
        if cnt == 0:
            continue
        if cnt > 2:
            violations.append(f"triangle {key} shared by {cnt} cells")
        elif cnt == 1 and not _on_boundary(d, key):
            violations.append(f"orphan interior triangle {key}")

    violations.extend(_type_violations(d))
    vols = d.tet_volumes()
    if np.any(vols <= 0):
        violations.append(f"{int(np.sum(vols <= 0))} non-positive tets")
    total = d.total_volume()
    exact = domain.volume()
    rel = abs(total - exact) / exact
    if rel > 1e-10:
        violations.append(f"volume partition off by {rel:.3e}")
    stats = {}
    for cls, name in ((S4, "S4"), (VS3, "VS3"), (VESS, "VESS")):
        sel = d.tets[d.tclass == cls]
        if len(sel):
            stats[name] = _dihedral_range(d.points, sel)
    return ConformityReport(
        ok=not violations,
        n_cells=d.n_elements(),
        volume_total=total,
        volume_rel_error=rel,
        violations=violations,
        dihedral_stats=stats,
    )


def _on_boundary(d: Decomposition, key) -> bool:
    centroid = d.points[list(key)].mean(axis=0)[None, :]
    return _facet_flags_for(centroid, d.domain)[0] != "?"


def _type_violations(d: Decomposition):
    out = []
    if len(d.tets):
        t = d.ptypes[d.tets]
        v_count = np.sum(t == VertexType.V, axis=1)
        e_count = np.sum(t == VertexType.E, axis=1)
        for cls, want_v, want_e, name in (
            (S4, 0, 0, "S4"), (VS3, 1, 0, "VS3"), (VESS, 1, 1, "VESS"),
        ):
            sel = d.tclass == cls
            bad = np.flatnonzero(sel & ((v_count != want_v) | (e_count != want_e)))
            for b in bad[:5]:
                out.append(
                    f"{name} tet {b} has type pattern "
                    f"{[VertexType(x).name for x in t[b]]}"
                )
    for cells, name, etable in ((d.tets, "tet", _TET_EDGES),
                                (d.octs, "oct", _OCT_EDGES)):
        if not len(cells):
            continue
        e = d.ptypes[cells[:, etable]]
        vv = np.all(e == VertexType.V, axis=2)
        if vv.any():
            out.append(f"{int(vv.sum())} VV edges in {name}s")
        ee = np.all(e == VertexType.E, axis=2)
        if name == "tet" and ee.any():
            out.append(f"{int(ee.sum())} tetrahedral EE edges")
    # VESS slot pattern and VE edge placement
    segs = d.domain.singular_segments()
    for b in np.flatnonzero(d.tclass == VESS):
        tet = d.tets[b]
        tt = d.ptypes[tet]
        if not (tt[0] == VertexType.V and tt[1] == VertexType.E):
            out.append(f"VESS tet {b} slots are not (V, E, S, S)")
            continue
        if len(segs):
            mid = 0.5 * (d.points[tet[0]] + d.points[tet[1]])
            dmin = point_segment_distance(
                mid[None, :], segs[:, 0], segs[:, 1]).min()
            if dmin > 1e-9 * d.domain.diameter:
                out.append(f"VESS tet {b}: VE edge not on a singular edge")
    # E vertices confined to prisms and VESS tets
    e_ids = np.flatnonzero(d.ptypes == VertexType.E)
    if len(e_ids):
        eset = np.zeros(len(d.ptypes), dtype=bool)
        eset[e_ids] = True
        for cells, name in ((d.tets[d.tclass == S4], "S4"),
                            (d.tets[d.tclass == VS3], "VS3"),
                            (d.octs, "oct")):
            if len(cells) and eset[cells].any():
                out.append(f"E vertex inside an {name} cell")
    return out


def _dihedral_range(points, tets):
    x = points[tets]
    lo, hi = math.inf, -math.inf
    for i, j in map(tuple, _TET_EDGES):
        k, l = [z for z in range(4) if z not in (i, j)]
        t = x[:, j] - x[:, i]
        n1 = np.cross(t, x[:, k] - x[:, i])
        n2 = np.cross(t, x[:, l] - x[:, i])
        c = np.einsum("nd,nd->n", n1, n2)
        c /= np.linalg.norm(n1, axis=1) * np.linalg.norm(n2, axis=1)
        ang = np.arccos(np.clip(c, -1.0, 1.0))
        lo = min(lo, float(ang.min()))
        hi = max(hi, float(ang.max()))
    return lo, hi


# ---------------------------------------------------------------------------
# the refinement engine
# ---------------------------------------------------------------------------

class _PointBuilder:
    """Grows the vertex store; types new points by the singular geometry."""

    def __init__(self, d: Decomposition, grading: GradingSpec):
        self.d = d
        self.grading = grading
        self._pts = [d.points]
        self._types = [d.ptypes]
        self._refs = [d.corner_ref]
        self._count = len(d.points)
        self.edge_point = {}

    def _classify(self, pts):
        dom = self.d.domain
        tol = 1e-9 * dom.diameter
        types = np.zeros(len(pts), dtype=np.uint8)
        refs = np.full(len(pts), -1, dtype=np.int64)
        segs = dom.singular_segments()
        if len(segs):
            dist = point_segment_distance(pts, segs[:, 0], segs[:, 1])
            near = dist.min(axis=1) <= tol
            types[near] = VertexType.E
            refs[near] = dist.argmin(axis=1)[near]
        return types, refs

    def _append(self, pts, types, refs):
        ids = self._count + np.arange(len(pts))
        self._pts.append(pts)
        self._types.append(types)
        self._refs.append(refs)
        self._count += len(pts)
        return ids

    def add_smooth(self, pts):
        pts = np.atleast_2d(pts)
        return self._append(
            pts,
            np.zeros(len(pts), dtype=np.uint8),
            np.full(len(pts), -1, dtype=np.int64),
        )

    def split_edges(self, uniq):
        """Split sorted unique id pairs; returns ids aligned with uniq rows."""
        types = self.types()
        pts = self.points()
        ta = types[uniq[:, 0]].astype(np.int8)
        tb = types[uniq[:, 1]].astype(np.int8)
        if np.any((ta == VertexType.V) & (tb == VertexType.V)):
            bad = uniq[np.flatnonzero((ta == VertexType.V) & (tb == VertexType.V))[0]]
            raise ValidationError(f"VV edge {tuple(bad)}")
        pa = pts[uniq[:, 0]]
        pb = pts[uniq[:, 1]]
        kap = self._edge_kappas(uniq, ta, tb)
        newp = np.where(
            (ta > tb)[:, None], pa + kap[:, None] * (pb - pa),
            np.where((tb > ta)[:, None], pb + kap[:, None] * (pa - pb),
                     0.5 * (pa + pb)),
        )
        ntypes, nrefs = self._classify(newp)
        ids = self._append(newp, ntypes, nrefs)
        for (i, j), nid in zip(map(tuple, uniq), ids):
            self.edge_point[(int(i), int(j))] = int(nid)
        return ids

    def split_single(self, i, j) -> int:
        key = (min(int(i), int(j)), max(int(i), int(j)))
        nid = self.edge_point.get(key)
        if nid is None:
            nid = int(self.split_edges(np.array([key]))[0])
        return nid

    def lookup(self, i, j) -> int:
        return self.edge_point[(min(int(i), int(j)), max(int(i), int(j)))]

    def points(self):
        if len(self._pts) > 1:
            self._pts = [np.vstack(self._pts)]
        return self._pts[0]

    def types(self):
        if len(self._types) > 1:
            self._types = [np.concatenate(self._types)]
        return self._types[0]

    def refs(self):
        if len(self._refs) > 1:
            self._refs = [np.concatenate(self._refs)]
        return self._refs[0]

    def _edge_kappas(self, uniq, ta, tb):
        kap = np.full(len(uniq), 0.5)
        graded = ta != tb
        if not graded.any():
            return kap
        g = self.grading
        if not isinstance(g.kappa, dict) and not isinstance(g.a, dict):
            kap[graded] = g.kappa_for()
            return kap
        refs = self.refs()
        types = self.types()
        rows = np.flatnonzero(graded)
        more = np.where(ta[rows] > tb[rows], uniq[rows, 0], uniq[rows, 1])
        for r, vid in zip(rows, more):
            ref = int(refs[vid])
            if types[vid] == VertexType.V:
                kap[r] = g.kappa_for(ref)
            else:
                edge = self.d.domain.singular_edges[ref]
                kap[r] = g.kappa_for(tuple(edge))
        return kap


def _edge_ids(cells, edge_table, builder) -> np.ndarray:
    """Split-point ids for each cell edge column, via the batch memo."""
    ep = builder.edge_point
    out = np.empty((len(cells), len(edge_table)), dtype=np.int64)
    for k, (i, j) in enumerate(map(tuple, edge_table)):
        lo = np.minimum(cells[:, i], cells[:, j])
        hi = np.maximum(cells[:, i], cells[:, j])
        out[:, k] = [ep[(int(x), int(y))] for x, y in zip(lo, hi)]
    return out


def refine_decomposition(d: Decomposition, grading: GradingSpec) -> Decomposition:
    """One graded refinement level of the whole decomposition.

    Edge split points are memoized on sorted vertex-id pairs (two passes: cell
    edges, then prism mid-height cross edges), so the result is deterministic
    and conforming by construction.
    """
    edges = []
    if len(d.tets):
        edges.append(d.tets[:, _TET_EDGES].reshape(-1, 2))
    if len(d.octs):
        edges.append(d.octs[:, _OCT_EDGES].reshape(-1, 2))
    if len(d.prisms):
        pr = d.prisms
        edges.append(np.stack([
            pr[:, [0, 1]], pr[:, [1, 2]], pr[:, [2, 0]],
            pr[:, [3, 4]], pr[:, [4, 5]], pr[:, [5, 3]],
            pr[:, [0, 3]], pr[:, [1, 4]], pr[:, [2, 5]],
        ], axis=1).reshape(-1, 2))
    uniq = np.unique(np.sort(np.vstack(edges), axis=1), axis=0)

    builder = _PointBuilder(d, grading)
    builder.split_edges(uniq)

    tet_blocks, cls_blocks = [], []
    oct_blocks = []
    prism_rows = []
    marks = {}
    flippable = set()

    _refine_s4_batch(d, builder, tet_blocks, cls_blocks, oct_blocks)
    _refine_oct_batch(d, builder, tet_blocks, cls_blocks, oct_blocks)
    _refine_vs3_batch(d, builder, tet_blocks, cls_blocks)
    _refine_vess_batch(d, builder, tet_blocks, cls_blocks, prism_rows, marks,
                       flippable)
    _refine_prism_batch(d, builder, prism_rows, marks, flippable)

    tets = (np.vstack(tet_blocks) if tet_blocks
            else np.zeros((0, 4), dtype=np.int64))
    tcls = (np.concatenate(cls_blocks) if cls_blocks
            else np.zeros(0, dtype=np.uint8))
    octs = (np.vstack(oct_blocks) if oct_blocks
            else np.zeros((0, 6), dtype=np.int64))
    prisms = (np.array(prism_rows, dtype=np.int64) if prism_rows
              else np.zeros((0, 6), dtype=np.int64))

    out = Decomposition(
        domain=d.domain,
        points=builder.points(),
        ptypes=builder.types(),
        corner_ref=builder.refs(),
        tets=tets,
        tclass=tcls,
        octs=octs,
        prisms=prisms,
        marks=marks,
        level=d.level + 1,
    )
    _orient_cells(out)
    _resolve_mark_cycles(out, flippable)
    return out


def _refine_s4_batch(d, builder, tet_blocks, cls_blocks, oct_blocks):
    rows = np.flatnonzero(d.tclass == S4)
    if not len(rows):
        return
    t = d.tets[rows]
    m = _edge_ids(t, _TET_EDGES, builder)
    corners = np.stack([
        np.stack([t[:, 0], m[:, 0], m[:, 1], m[:, 2]], axis=1),
        np.stack([t[:, 1], m[:, 0], m[:, 3], m[:, 4]], axis=1),
        np.stack([t[:, 2], m[:, 1], m[:, 3], m[:, 5]], axis=1),
        np.stack([t[:, 3], m[:, 2], m[:, 4], m[:, 5]], axis=1),
    ], axis=1).reshape(-1, 4)
    tet_blocks.append(corners)
    cls_blocks.append(np.full(len(corners), S4, dtype=np.uint8))
    oct_blocks.append(np.stack(
        [m[:, 0], m[:, 1], m[:, 2], m[:, 5], m[:, 4], m[:, 3]], axis=1))


def _refine_oct_batch(d, builder, tet_blocks, cls_blocks, oct_blocks):
    if not len(d.octs):
        return
    o = d.octs
    m = _edge_ids(o, _OCT_EDGES, builder)

    def col(i, j):
        return m[:, _OCT_EDGE_COL[tuple(sorted((i, j)))]]

    centres = d.points[o].mean(axis=1)
    cids = builder.add_smooth(centres)
    anti = {0: 3, 3: 0, 1: 4, 4: 1, 2: 5, 5: 2}
    for v in range(6):
        axes = [ax for ax in (0, 1, 2) if v not in (ax, anti[ax])]
        pairs = [(o[:, v], cids)]
        for ax in axes:
            pairs.append((col(v, ax), col(v, anti[ax])))
        oct_blocks.append(np.stack(
            [pairs[0][0], pairs[1][0], pairs[2][0],
             pairs[0][1], pairs[1][1], pairs[2][1]], axis=1))
    face_tets = np.empty((len(o) * 8, 4), dtype=np.int64)
    for k, f in enumerate(_OCT_FACES):
        i, j, l = map(int, f)
        face_tets[k::8, 0] = col(i, j)
        face_tets[k::8, 1] = col(i, l)
        face_tets[k::8, 2] = col(j, l)
        face_tets[k::8, 3] = cids
    tet_blocks.append(face_tets)
    cls_blocks.append(np.full(len(face_tets), S4, dtype=np.uint8))


def _refine_vs3_batch(d, builder, tet_blocks, cls_blocks):
    rows = np.flatnonzero(d.tclass == VS3)
    if not len(rows):
        return
    t = d.tets[rows]
    m = _edge_ids(t, _TET_EDGES, builder)
    corner = np.stack([t[:, 0], m[:, 0], m[:, 1], m[:, 2]], axis=1)
    tet_blocks.append(corner)
    cls_blocks.append(np.full(len(rows), VS3, dtype=np.uint8))
    fillers = np.stack([
        np.stack([t[:, 1], m[:, 0], m[:, 3], m[:, 4]], axis=1),
        np.stack([t[:, 2], m[:, 1], m[:, 3], m[:, 5]], axis=1),
        np.stack([t[:, 3], m[:, 2], m[:, 4], m[:, 5]], axis=1),
    ], axis=1).reshape(-1, 4)
    tet_blocks.append(fillers)
    cls_blocks.append(np.full(len(fillers), S4, dtype=np.uint8))
    # warped central region: cone once from the division-point centroid
    octa = np.stack([m[:, 0], m[:, 1], m[:, 2], m[:, 5], m[:, 4], m[:, 3]],
                    axis=1)
    centres = builder.points()[octa].mean(axis=1)
    cids = builder.add_smooth(centres)
    cones = np.empty((len(rows) * 8, 4), dtype=np.int64)
    for k, f in enumerate(_OCT_FACES):
        cones[k::8, 0] = cids
        cones[k::8, 1] = octa[:, f[0]]
        cones[k::8, 2] = octa[:, f[1]]
        cones[k::8, 3] = octa[:, f[2]]
    tet_blocks.append(cones)
    cls_blocks.append(np.full(len(cones), S4, dtype=np.uint8))


def _refine_vess_batch(d, builder, tet_blocks, cls_blocks, prism_rows, marks,
                       flippable):
    rows = np.flatnonzero(d.tclass == VESS)
    if not len(rows):
        return
    t = d.tets[rows]
    m = _edge_ids(t, _TET_EDGES, builder)
    tets = []
    cls = []
    for r in range(len(rows)):
        a, b, c, dd = map(int, t[r])
        pab, pac, pad, pbc, pbd, mcd = map(int, m[r])
        tets.append([a, pab, pac, pad])
        cls.append(VESS)
        tets.append([c, pac, pbc, mcd])
        tets.append([dd, pad, pbd, mcd])
        cls.extend([S4, S4])
        prism_rows.append([pab, pac, pad, b, pbc, pbd])
        quad = (pac, pbc, pbd, pad)  # cyclic, parallelogram
        key = tuple(sorted(quad))
        diag = marks.setdefault(key, _min_corner_diag(quad))
        flippable.discard(key)  # pyramid pair is committed to this diagonal
        o1, o2 = [v for v in quad if v not in diag]
        tets.append([diag[0], diag[1], o1, mcd])
        tets.append([diag[0], diag[1], o2, mcd])
        cls.extend([S4, S4])
        for quad2 in ((pab, pac, pbc, b), (pab, pad, pbd, b)):
            key2 = tuple(sorted(quad2))
            if key2 not in marks:
                marks[key2] = _min_corner_diag(quad2)
                flippable.add(key2)
    tet_blocks.append(np.array(tets, dtype=np.int64))
    cls_blocks.append(np.array(cls, dtype=np.uint8))


def _min_corner_diag(quad_cyclic):
    """Diagonal from the smallest-id corner of a cyclically ordered quad."""
    q = [int(v) for v in quad_cyclic]
    k = int(np.argmin(q))
    return tuple(sorted((q[k], q[(k + 2) % 4])))


def _refine_prism_batch(d, builder, prism_rows, marks, flippable):
    if not len(d.prisms):
        return
    ptypes = builder.types()
    for r in range(len(d.prisms)):
        b = [int(x) for x in d.prisms[r, :3]]
        t = [int(x) for x in d.prisms[r, 3:]]
        cb = [builder.lookup(b[i], b[j]) for i, j in _PRISM_LATERAL]
        ct = [builder.lookup(t[i], t[j]) for i, j in _PRISM_LATERAL]
        am = [builder.lookup(b[i], t[i]) for i in range(3)]
        # face centres: a neighbouring tetrahedron pair splits the mark
        # diagonal as one of its edges, so the centre of an ungraded face must
        # reuse that split point (same id, not just the same coordinates);
        # graded faces are prism/prism only and key on the mid-cross edge
        wm = []
        for col, (i, j) in enumerate(_PRISM_LATERAL):
            key = tuple(sorted((b[i], b[j], t[i], t[j])))
            diag = d.marks.get(key)
            if diag is None:
                raise ValidationError(f"prism quad {key} has no mark")
            if ptypes[b[i]] == ptypes[b[j]]:
                wm.append(builder.split_single(diag[0], diag[1]))
            else:
                wm.append(builder.split_single(am[i], am[j]))

        layers = (
            ([b[0], cb[0], cb[2]], [am[0], wm[0], wm[2]], [t[0], ct[0], ct[2]]),
            ([cb[0], b[1], cb[1]], [wm[0], am[1], wm[1]], [ct[0], t[1], ct[1]]),
            ([cb[2], cb[1], b[2]], [wm[2], wm[1], am[2]], [ct[2], ct[1], t[2]]),
            ([cb[0], cb[1], cb[2]], [wm[0], wm[1], wm[2]], [ct[0], ct[1], ct[2]]),
        )
        for lo, mid, hi in layers:
            prism_rows.append(lo + mid)
            prism_rows.append(mid + hi)

        # inherited sub-marks on the parent's lateral quads
        for col, (i, j) in enumerate(_PRISM_LATERAL):
            key = tuple(sorted((b[i], b[j], t[i], t[j])))
            diag = d.marks.get(key)
            if diag is None:
                raise ValidationError(f"prism quad {key} lost its mark")
            if b[i] in diag:
                side_lo, side_hi = i, j
            elif b[j] in diag:
                side_lo, side_hi = j, i
            else:
                raise ValidationError(f"mark {diag} not anchored in quad {key}")
            grid = (
                (b[side_lo], cb[col], b[side_hi]),
                (am[side_lo], wm[col], am[side_hi]),
                (t[side_lo], ct[col], t[side_hi]),
            )
            for rr in range(2):
                for cc in range(2):
                    sub = (grid[rr][cc], grid[rr][cc + 1],
                           grid[rr + 1][cc + 1], grid[rr + 1][cc])
                    skey = tuple(sorted(sub))
                    sdiag = tuple(sorted((grid[rr][cc], grid[rr + 1][cc + 1])))
                    prev = marks.setdefault(skey, sdiag)
                    if prev != sdiag:
                        raise ValidationError(
                            f"inconsistent inherited marks on quad {skey}"
                        )
        # new interior quads between sibling children
        for quad in (
            (cb[0], cb[2], wm[0], wm[2]), (cb[0], cb[1], wm[0], wm[1]),
            (cb[2], cb[1], wm[2], wm[1]),
            (wm[0], wm[2], ct[0], ct[2]), (wm[0], wm[1], ct[0], ct[1]),
            (wm[2], wm[1], ct[2], ct[1]),
        ):
            cyc = (quad[0], quad[1], quad[3], quad[2])
            skey = tuple(sorted(quad))
            if skey not in marks:
                marks[skey] = _min_corner_diag(cyc)
                flippable.add(skey)


def _orient_cells(d: Decomposition):
    """Flip slots so all tets and prisms have positive volume."""
    if len(d.tets):
        vols = d.tet_volumes()
        flip = vols < 0
        d.tets[flip, 2], d.tets[flip, 3] = (
            d.tets[flip, 3].copy(), d.tets[flip, 2].copy())
        if np.any(d.tet_volumes() <= 0):
            raise NumericalError("degenerate tetrahedron after refinement")
    if len(d.prisms):
        p = d.points[d.prisms]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        axis = p[:, 3] - p[:, 0]
        flip = np.einsum("nd,nd->n", n, axis) < 0
        for c1, c2 in ((1, 2), (4, 5)):
            d.prisms[flip, c1], d.prisms[flip, c2] = (
                d.prisms[flip, c2].copy(), d.prisms[flip, c1].copy())


def _prism_is_cyclic(prism, marks) -> bool:
    try:
        return _prism_deltas(prism, marks) in ((1, 1, 1), (0, 0, 0))
    except ValidationError:
        return True


def _resolve_mark_cycles(d: Decomposition, flippable):
    """Flip marks on freshly created quads until no prism is mark-cyclic."""
    for _round in range(4):
        bad = [r for r in range(len(d.prisms))
               if _prism_is_cyclic(d.prisms[r], d.marks)]
        if not bad:
            return
        for r in bad:
            prism = d.prisms[r]
            for a, b in _PRISM_LATERAL:
                key = tuple(sorted(map(int, (prism[a], prism[b],
                                             prism[a + 3], prism[b + 3]))))
                if key in flippable:
                    diag = d.marks[key]
                    d.marks[key] = tuple(sorted(v for v in key if v not in diag))
                    flippable.discard(key)
                    break
    bad = [r for r in range(len(d.prisms))
           if _prism_is_cyclic(d.prisms[r], d.marks)]
    if bad:
        raise NumericalError(f"unresolvable mark cycle on prisms {bad[:5]}")


# ---------------------------------------------------------------------------
# loading and validation
# ---------------------------------------------------------------------------

def build_decomposition(domain, points, tets, prisms, marks=None, level=0,
                        octs=None) -> Decomposition:
    """Assemble and validate a decomposition from raw arrays.

    Vertex types are derived from the domain's singular geometry; tet classes
    from the resulting per-vertex patterns (with slot normalization).  Marks
    missing from `marks` default to the smallest-id-corner diagonal.
    """
    from .domain import classify_points

    points = np.asarray(points, dtype=float)
    tets = (np.asarray(tets, dtype=np.int64) if len(tets)
            else np.zeros((0, 4), dtype=np.int64))
    prisms = (np.asarray(prisms, dtype=np.int64) if len(prisms)
              else np.zeros((0, 6), dtype=np.int64))
    octs = (np.asarray(octs, dtype=np.int64) if octs is not None and len(octs)
            else np.zeros((0, 6), dtype=np.int64))
    ptypes = classify_points(points, domain)
    refs = np.full(len(points), -1, dtype=np.int64)
    segs = domain.singular_segments()
    if len(segs):
        on_e = np.flatnonzero(ptypes == VertexType.E)
        if len(on_e):
            dist = point_segment_distance(points[on_e], segs[:, 0], segs[:, 1])
            refs[on_e] = dist.argmin(axis=1)
    vmap = {}
    for k, dv in enumerate(domain.vertices):
        vmap[tuple(np.round(dv, 12))] = k
    for pid in np.flatnonzero(ptypes == VertexType.V):
        refs[pid] = vmap.get(tuple(np.round(points[pid], 12)), -1)

    tclass = np.empty(len(tets), dtype=np.uint8)
    for r in range(len(tets)):
        tt = ptypes[tets[r]]
        nv = int(np.sum(tt == VertexType.V))
        ne = int(np.sum(tt == VertexType.E))
        if nv == 0 and ne == 0:
            tclass[r] = S4
        elif nv == 1 and ne == 0:
            tclass[r] = VS3
            tets[r] = np.roll(tets[r], -int(np.argmax(tt == VertexType.V)))
        elif nv == 1 and ne == 1:
            tclass[r] = VESS
            order = np.concatenate([
                np.flatnonzero(tt == VertexType.V),
                np.flatnonzero(tt == VertexType.E),
                np.flatnonzero(tt == VertexType.S),
            ])
            tets[r] = tets[r][order]
        else:
            raise ValidationError(
                f"tet {r} has illegal type pattern "
                f"{[VertexType(x).name for x in tt]}"
            )
    # prisms: E corner (if any) to slot 0/3
    for r in range(len(prisms)):
        tt = ptypes[prisms[r]]
        ne_b = np.flatnonzero(tt[:3] == VertexType.E)
        ne_t = np.flatnonzero(tt[3:] == VertexType.E)
        if np.any(tt == VertexType.V):
            raise ValidationError(f"prism {r} contains a V vertex")
        if len(ne_b) != len(ne_t) or len(ne_b) > 1:
            raise ValidationError(f"prism {r} has mismatched E corners")
        if len(ne_b) == 1:
            k = int(ne_b[0])
            if int(ne_t[0]) != k:
                raise ValidationError(f"prism {r}: EE edge is not a lateral edge")
            perm = [(k + i) % 3 for i in range(3)]
            prisms[r] = np.concatenate([prisms[r][:3][perm],
                                        prisms[r][3:][perm]])

    d = Decomposition(
        domain=domain, points=points, ptypes=ptypes, corner_ref=refs,
        tets=tets, tclass=tclass, octs=octs, prisms=prisms,
        marks=dict(marks or {}), level=level,
    )
    _orient_cells(d)
    # default marks by the smallest-corner rule
    for prism in d.prisms:
        for a, b in _PRISM_LATERAL:
            quad = (int(prism[a]), int(prism[b]),
                    int(prism[b + 3]), int(prism[a + 3]))
            key = tuple(sorted(quad))
            d.marks.setdefault(key, _min_corner_diag(quad))
    validate_decomposition(d)
    return d


def validate_decomposition(d: Decomposition):
    """Structural checks beyond conformity: straightness, VESS geometry, marks,
    and full coverage of every singular edge by VE segments and prism EE edges.
    """
    diam = d.domain.diameter
    p = d.points[d.prisms] if len(d.prisms) else np.zeros((0, 6, 3))
    for r in range(len(d.prisms)):
        base = p[r, :3]
        top = p[r, 3:]
        lat = top - base
        if np.abs(lat - lat[0]).max() > 1e-9 * diam:
            raise ValidationError(f"prism {r} is not a translation prism")
        n = np.cross(base[1] - base[0], base[2] - base[0])
        n /= np.linalg.norm(n)
        tangential = lat[0] - np.dot(lat[0], n) * n
        if np.linalg.norm(tangential) > 1e-9 * diam:
            raise ValidationError(f"prism {r} not straight (oblique axis)")
    for r in np.flatnonzero(d.tclass == VESS):
        tet = d.points[d.tets[r]]
        ab = tet[1] - tet[0]
        for other in (tet[2] - tet[1], tet[3] - tet[1]):
            if abs(np.dot(ab, other)) > 1e-9 * diam * np.linalg.norm(ab):
                raise ValidationError(
                    f"VESS tet {r}: VE edge not perpendicular to opposite face"
                )
    for r in range(len(d.prisms)):
        if not _prism_is_cyclic(d.prisms[r], d.marks):
            continue
        raise ValidationError(f"prism {r}: mark pattern is cyclic")
    _check_edge_coverage(d)
    report = check_conformity(d)
    if not report.ok:
        raise ValidationError(
            "initial decomposition is not conforming:\n" + str(report)
        )


def _check_edge_coverage(d: Decomposition):
    """Every singular edge must be covered by VE segments and prism EE edges."""
    dom = d.domain
    segs = dom.singular_segments()
    if not len(segs):
        return
    tol = 1e-9 * dom.diameter
    covered = np.zeros(len(segs))
    pieces = set()  # a VE/EE segment is shared by several cells: count once
    for r in np.flatnonzero(d.tclass == VESS):
        i, j = int(d.tets[r, 0]), int(d.tets[r, 1])
        pieces.add((min(i, j), max(i, j)))
    for r in range(len(d.prisms)):
        if (d.ptypes[d.prisms[r, 0]] == VertexType.E
                and d.ptypes[d.prisms[r, 3]] == VertexType.E):
            i, j = int(d.prisms[r, 0]), int(d.prisms[r, 3])
            pieces.add((min(i, j), max(i, j)))
    for i, j in pieces:
        a, b = d.points[int(i)], d.points[int(j)]
        mid = 0.5 * (a + b)[None, :]
        dist = point_segment_distance(mid, segs[:, 0], segs[:, 1])[0]
        k = int(dist.argmin())
        if dist[k] <= tol:
            covered[k] += np.linalg.norm(b - a)
    lengths = np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)
    for k in range(len(segs)):
        if abs(covered[k] - lengths[k]) > 1e-9 * lengths[k]:
            raise ValidationError(
                f"singular edge {dom.singular_edges[k]} covered length "
                f"{covered[k]:.12g} of {lengths[k]:.12g}"
            )
