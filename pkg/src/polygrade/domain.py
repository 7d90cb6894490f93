"""Computational domains: polygons/polyhedra with a marked singular set.

A Domain carries the geometry (vertices, boundary facets with Dirichlet/Neumann
flags) together with the singular set: the vertices (2D) or vertices+edges (3D)
toward which meshes are graded.  Openings (interior angles in 2D, dihedral
angles in 3D) are recomputed from the geometry at load time; user-supplied
values must agree to 1e-9 radians and every geometrically non-smooth vertex or
edge must be marked.

Domains are immutable after construction; all operations here are pure
functions safe for concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

ANGLE_TOL = 1e-9


class ValidationError(ValueError):
    """Geometric or structural validation failure (CLI exit code 2)."""


class NumericalError(RuntimeError):
    """Numerical failure: solver breakdown, degeneracy (CLI exit code 3)."""


class VertexType(IntEnum):
    """Singularity rank of a point; ordering V > E > S drives edge splits."""

    S = 0  # smooth point (interior, or interior of a boundary face)
    E = 1  # point on an open singular edge (3D)
    V = 2  # vertex of the domain


@dataclass(frozen=True)
class GradingSpec:
    """Refinement parameters: polynomial degree m, grading strength a, ratio kappa.

    `a` and `kappa` may be scalars or per-corner maps (key: singular vertex id
    in 2D, sorted edge tuple in 3D).  When kappa is omitted it defaults to
    min(1/2, 2^(-m/a)) per corner, the largest ratio the interpolation theory
    allows.
    """

    m: int
    a: float | dict = 0.5
    kappa: float | dict | None = None

    def __post_init__(self):
        if self.m < 1:
            raise ValidationError(f"polynomial degree must be >= 1, got {self.m}")
        for a in self._avalues():
            if not (0.0 < a <= 0.5):
                raise ValidationError(f"grading strength a={a} outside (0, 1/2]")
        if self.kappa is not None:
            for corner, k in self._kitems():
                if k == 0.5:
                    continue  # uniform refinement: grading disabled on purpose
                kmax = grading_parameter(self.m, self.a_for(corner))
                if not (0.0 < k <= kmax + 1e-12):
                    raise ValidationError(
                        f"kappa={k} for corner {corner} violates kappa <= "
                        f"min(1/2, 2^(-m/a)) = {kmax}"
                    )

    def _avalues(self):
        return self.a.values() if isinstance(self.a, dict) else [self.a]

    def _kitems(self):
        if isinstance(self.kappa, dict):
            return self.kappa.items()
        return [(None, self.kappa)]

    def a_for(self, corner=None) -> float:
        if isinstance(self.a, dict):
            if corner in self.a:
                return self.a[corner]
            return min(self.a.values())  # most restrictive strength
        return self.a

    def kappa_for(self, corner=None) -> float:
        """Grading ratio for one singular vertex/edge (global default otherwise)."""
        if self.kappa is None:
            return grading_parameter(self.m, self.a_for(corner))
        if isinstance(self.kappa, dict):
            if corner in self.kappa:
                return self.kappa[corner]
            return grading_parameter(self.m, self.a_for(corner))
        return self.kappa


@dataclass(frozen=True)
class Domain:
    """Polygonal (2D) or polyhedral (3D) domain with singular-set markup."""

    dimension: int
    vertices: np.ndarray  # (nv, dim), read-only
    boundary_facets: tuple  # tuple of vertex-index tuples
    facet_flags: tuple  # 'D' or 'N' per facet
    singular_vertices: frozenset
    singular_edges: tuple = ()  # sorted (i, j) pairs, 3D only
    corner_openings: dict = field(default_factory=dict)
    default_grading: GradingSpec | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=float))
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def diameter(self) -> float:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def volume(self) -> float:
        """Area (2D, shoelace) or volume (3D, divergence theorem)."""
        if self.dimension == 2:
            loop = _boundary_loop(self.boundary_facets, len(self.vertices))
            p = self.vertices[loop]
            q = self.vertices[np.roll(loop, -1)]
            return float(abs(np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1])) / 2.0)
        total = 0.0
        for facet in self.boundary_facets:
            pts = self.vertices[list(facet)]
            a = pts[0]
            for k in range(1, len(pts) - 1):
                total += np.dot(a, np.cross(pts[k], pts[k + 1]))
        return float(total / 6.0)

    def singular_segments(self) -> np.ndarray:
        """(ns, 2, dim) array of closed singular segments (3D), empty in 2D."""
        if self.dimension != 3 or not self.singular_edges:
            return np.zeros((0, 2, 3))
        idx = np.array(self.singular_edges, dtype=int)
        return self.vertices[idx]

    def singular_points(self) -> np.ndarray:
        ids = sorted(self.singular_vertices)
        return self.vertices[ids] if ids else np.zeros((0, self.dimension))


def grading_parameter(m: int, a: float) -> float:
    """Largest admissible grading ratio: min(1/2, 2^(-m/a))."""
    if m < 1:
        raise ValidationError(f"degree m must be >= 1, got {m}")
    if not (0.0 < a <= 0.5):
        raise ValidationError(f"grading strength a={a} outside (0, 1/2]")
    return min(0.5, 2.0 ** (-m / a))


def corner_exponent(domain: Domain, corner) -> float:
    """Regularity exponent pi/alpha for a singular vertex (2D) or edge (3D)."""
    key = corner if not isinstance(corner, (list, tuple)) else tuple(sorted(corner))
    if key not in domain.corner_openings:
        raise ValidationError(f"corner {corner!r} has no recorded opening angle")
    return math.pi / domain.corner_openings[key]


def singular_distance(x, domain: Domain):
    """Distance from point(s) x to the singular set; 1.0 if the set is empty.

    2D: distance to the set of singular vertices.  3D: distance to the union of
    the closed singular edges (point-segment projection).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    if domain.dimension == 2:
        anchors = domain.singular_points()
        if len(anchors) == 0:
            d = np.ones(len(pts))
        else:
            d = np.linalg.norm(pts[:, None, :] - anchors[None, :, :], axis=2).min(axis=1)
    else:
        segs = domain.singular_segments()
        if len(segs) == 0:
            d = np.ones(len(pts))
        else:
            d = point_segment_distance(pts, segs[:, 0, :], segs[:, 1, :]).min(axis=1)
    return float(d[0]) if single else d


def point_segment_distance(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from pts (n, d) to closed segments [a_k, b_k]; returns (n, ns)."""
    ab = b - a  # (ns, d)
    denom = np.einsum("kd,kd->k", ab, ab)
    denom = np.where(denom == 0.0, 1.0, denom)
    t = np.einsum("nkd,kd->nk", pts[:, None, :] - a[None, :, :], ab) / denom
    t = np.clip(t, 0.0, 1.0)
    proj = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    return np.linalg.norm(pts[:, None, :] - proj, axis=2)


def classify_point(x, domain: Domain, tol: float | None = None) -> VertexType:
    """Type of a point: V near a singular vertex, E near a singular edge, else S."""
    if tol is None:
        tol = 1e-12 * domain.diameter
    x = np.asarray(x, dtype=float)
    sp = domain.singular_points()
    if len(sp) and np.linalg.norm(sp - x, axis=1).min() <= tol:
        return VertexType.V
    if domain.dimension == 3:
        segs = domain.singular_segments()
        if len(segs):
            d = point_segment_distance(x[None, :], segs[:, 0, :], segs[:, 1, :]).min()
            if d <= tol:
                return VertexType.E
    return VertexType.S


def classify_points(pts: np.ndarray, domain: Domain, tol: float | None = None) -> np.ndarray:
    """Vectorized classify_point; returns uint8 array of VertexType values."""
    if tol is None:
        tol = 1e-12 * domain.diameter
    pts = np.asarray(pts, dtype=float)
    out = np.zeros(len(pts), dtype=np.uint8)
    if domain.dimension == 3:
        segs = domain.singular_segments()
        if len(segs):
            d = point_segment_distance(pts, segs[:, 0, :], segs[:, 1, :]).min(axis=1)
            out[d <= tol] = VertexType.E
    sp = domain.singular_points()
    if len(sp):
        d = np.linalg.norm(pts[:, None, :] - sp[None, :, :], axis=2).min(axis=1)
        out[d <= tol] = VertexType.V
    return out


def _boundary_loop(facets, nv: int) -> np.ndarray:
    """Order 2D boundary segments into a single closed vertex loop."""
    succ = {}
    degree = np.zeros(nv, dtype=int)
    for seg in facets:
        if len(seg) != 2:
            raise ValidationError(f"2D boundary facet {seg} is not a segment")
        degree[list(seg)] += 1
    used = np.flatnonzero(degree)
    if np.any(degree[used] != 2):
        bad = np.flatnonzero(degree == 1)
        raise ValidationError(f"boundary not closed: open at vertices {bad.tolist()}")
    adj = {int(i): [] for i in used}
    for i, j in facets:
        adj[int(i)].append(int(j))
        adj[int(j)].append(int(i))
    start = int(used[0])
    loop = [start]
    prev, cur = None, start
    while True:
        nxts = [n for n in adj[cur] if n != prev]
        nxt = nxts[0] if nxts else adj[cur][0]
        if nxt == start:
            break
        loop.append(nxt)
        prev, cur = cur, nxt
        if len(loop) > len(used):
            raise ValidationError("boundary facets do not form a single loop")
    if len(loop) != len(used):
        raise ValidationError("boundary facets form more than one loop")
    return np.array(loop, dtype=int)


def polygon_interior_angles(vertices: np.ndarray, loop: np.ndarray) -> dict:
    """Interior angle at each loop vertex, for a CCW-oriented loop."""
    p = vertices[loop]
    q = vertices[np.roll(loop, -1)]
    area2 = np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1])
    if area2 < 0:
        loop = loop[::-1]
    angles = {}
    n = len(loop)
    for k in range(n):
        v = vertices[loop[k]]
        u = vertices[loop[k - 1]]
        w = vertices[loop[(k + 1) % n]]
        d1 = u - v
        d2 = w - v
        ang = (math.atan2(d1[1], d1[0]) - math.atan2(d2[1], d2[0])) % (2 * math.pi)
        angles[int(loop[k])] = ang
    return angles


def _facet_dihedrals(vertices: np.ndarray, facets, flags):
    """Interior dihedral angle per shared facet edge of a closed 3D surface.

    Requires facets consistently oriented with outward normals (checked via
    positive enclosed volume by the caller).  Returns {sorted edge: angle}.
    """
    edge_owners = {}
    for fi, facet in enumerate(facets):
        n = len(facet)
        for k in range(n):
            i, j = int(facet[k]), int(facet[(k + 1) % n])
            edge_owners.setdefault(tuple(sorted((i, j))), []).append((fi, i, j))
    dihedrals = {}
    for edge, owners in edge_owners.items():
        if len(owners) != 2:
            raise ValidationError(
                f"boundary not closed: edge {edge} belongs to {len(owners)} facet(s)"
            )
        (f1, i1, j1), (f2, i2, j2) = owners
        if (i1, j1) == (i2, j2):
            raise ValidationError(
                f"facets {f1} and {f2} traverse edge {edge} in the same direction "
                "(inconsistent orientation)"
            )
        n1 = _facet_normal(vertices, facets[f1])
        n2 = _facet_normal(vertices, facets[f2])
        a, b = vertices[edge[0]], vertices[edge[1]]
        t = b - a
        t = t / np.linalg.norm(t)
        u1 = _into_facet(vertices, facets[f1], a, b, t)
        u2 = _into_facet(vertices, facets[f2], a, b, t)
        # 2D cross-section basis (e1, e2) orthogonal to the edge
        e1 = u1
        e2 = np.cross(t, u1)
        bx, by = float(np.dot(u2, e1)), float(np.dot(u2, e2))
        raw = math.atan2(by, bx) % (2 * math.pi)
        # interior lies on the -n1 side of facet f1
        if float(np.dot(np.cross(t, u1), n1)) > 0:
            raw = (2 * math.pi - raw) % (2 * math.pi)
        dihedrals[edge] = raw if raw > ANGLE_TOL else 2 * math.pi
    return dihedrals


def _facet_normal(vertices, facet):
    pts = vertices[list(facet)]
    n = np.zeros(3)
    for k in range(1, len(pts) - 1):
        n += np.cross(pts[k] - pts[0], pts[k + 1] - pts[0])
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ValidationError(f"degenerate facet {facet}")
    return n / norm


def _into_facet(vertices, facet, a, b, t):
    """Unit vector perpendicular to edge (a,b), in the facet plane, into the facet."""
    n = _facet_normal(vertices, facet)
    u = np.cross(n, t)
    u /= np.linalg.norm(u)
    centroid = vertices[list(facet)].mean(axis=0)
    if np.dot(centroid - (a + b) / 2.0, u) < 0:
        u = -u
    return u


def validate_domain(domain: Domain) -> None:
    """Check all Domain invariants; raise ValidationError naming the offender."""
    nv = len(domain.vertices)
    for fi, facet in enumerate(domain.boundary_facets):
        if any(not (0 <= i < nv) for i in facet):
            raise ValidationError(f"facet {fi} references missing vertex")
    for key, alpha in domain.corner_openings.items():
        if not (0.0 < alpha < 2 * math.pi + ANGLE_TOL):
            raise ValidationError(f"opening {alpha} at {key} outside (0, 2*pi)")

    if domain.dimension == 2:
        loop = _boundary_loop(domain.boundary_facets, nv)
        angles = polygon_interior_angles(domain.vertices, loop)
        for vid, ang in angles.items():
            non_smooth = abs(ang - math.pi) > ANGLE_TOL
            if non_smooth and vid not in domain.singular_vertices:
                raise ValidationError(
                    f"vertex {vid} has interior angle {ang:.6f} != pi but is not "
                    "marked singular"
                )
            if vid in domain.corner_openings:
                if abs(domain.corner_openings[vid] - ang) > ANGLE_TOL:
                    raise ValidationError(
                        f"recorded opening at vertex {vid} is "
                        f"{domain.corner_openings[vid]:.12f}, geometry gives {ang:.12f}"
                    )
        for vid in domain.singular_vertices:
            if vid not in angles:
                raise ValidationError(f"singular vertex {vid} is not on the boundary")
        return

    # 3D: planarity, closedness, outward orientation, dihedral census.
    diam = domain.diameter
    for fi, facet in enumerate(domain.boundary_facets):
        pts = domain.vertices[list(facet)]
        if len(facet) < 3:
            raise ValidationError(f"facet {fi} has fewer than 3 vertices")
        n = _facet_normal(domain.vertices, facet)
        off = np.abs((pts - pts[0]) @ n)
        if off.max() > 1e-9 * diam:
            raise ValidationError(f"facet {fi} is not planar (deviation {off.max():.3e})")
    if domain.volume() <= 0:
        raise ValidationError(
            "boundary facets are not outward-oriented (non-positive enclosed volume)"
        )
    dihedrals = _facet_dihedrals(domain.vertices, domain.boundary_facets, domain.facet_flags)
    marked = set(domain.singular_edges)
    for edge, ang in dihedrals.items():
        non_smooth = abs(ang - math.pi) > ANGLE_TOL
        if non_smooth and edge not in marked:
            raise ValidationError(
                f"edge {edge} has dihedral angle {ang:.6f} != pi but is not marked "
                "singular"
            )
        if edge in domain.corner_openings:
            if abs(domain.corner_openings[edge] - ang) > ANGLE_TOL:
                raise ValidationError(
                    f"recorded opening at edge {edge} is "
                    f"{domain.corner_openings[edge]:.12f}, geometry gives {ang:.12f}"
                )
    for edge in marked:
        if edge not in dihedrals:
            raise ValidationError(f"singular edge {edge} is not a boundary edge")
    # every endpoint of a non-collinear singular-edge pair must be a marked vertex
    incident = {}
    for i, j in marked:
        d = domain.vertices[j] - domain.vertices[i]
        d = d / np.linalg.norm(d)
        incident.setdefault(i, []).append(d)
        incident.setdefault(j, []).append(-d)
    for vid, dirs in incident.items():
        if len(dirs) == 2 and abs(np.dot(dirs[0], dirs[1]) + 1.0) < ANGLE_TOL:
            continue  # straight-through point: open-edge interior, type E
        if vid not in domain.singular_vertices:
            raise ValidationError(
                f"vertex {vid} terminates singular edges but is not marked singular"
            )


# ---------------------------------------------------------------------------
# domain-spec text format
# ---------------------------------------------------------------------------

def load_domain(spec_text: str) -> Domain:
    """Parse and validate the line-oriented domain-spec format.

    Sections: [vertices] with `x y [z]` lines, [facets] with vertex index lists
    plus a D/N flag, [singular] with vertex ids or `edge i j` lines (optional
    `alpha=<radians>` override), [grading] with `m=`, `a=`, and optional
    `kappa <id> <value>` lines.  `#` starts a comment.
    """
    vertices = []
    facets = []
    flags = []
    sing_v = set()
    sing_e = []
    openings = {}
    grading_kv = {}
    kappa_overrides = {}
    section = None
    for lineno, raw in enumerate(spec_text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            section = line.strip("[]").lower()
            if section not in ("vertices", "facets", "singular", "grading"):
                raise ValidationError(f"line {lineno}: unknown section [{section}]")
            continue
        toks = line.split()
        try:
            if section == "vertices":
                coords = [float(t) for t in toks]
                if len(coords) not in (2, 3):
                    raise ValueError("expected 2 or 3 coordinates")
                vertices.append(coords)
            elif section == "facets":
                if toks[-1].upper() not in ("D", "N"):
                    raise ValueError("facet line must end with flag D or N")
                facets.append(tuple(int(t) for t in toks[:-1]))
                flags.append(toks[-1].upper())
            elif section == "singular":
                alpha = None
                if toks[-1].startswith("alpha="):
                    alpha = float(toks[-1].split("=", 1)[1])
                    toks = toks[:-1]
                if toks[0] == "edge":
                    key = tuple(sorted((int(toks[1]), int(toks[2]))))
                    sing_e.append(key)
                else:
                    key = int(toks[0])
                    sing_v.add(key)
                if alpha is not None:
                    openings[key] = alpha
            elif section == "grading":
                if toks[0] == "kappa":
                    kappa_overrides[_corner_key(toks[1])] = float(toks[2])
                else:
                    k, _, v = line.partition("=")
                    grading_kv[k.strip()] = v.strip()
            else:
                raise ValueError("content before any section header")
        except (ValueError, IndexError) as exc:
            raise ValidationError(f"line {lineno}: {exc} in {raw!r}") from None
    if not vertices:
        raise ValidationError("no [vertices] section")
    verts = np.array(vertices, dtype=float)
    dim = verts.shape[1]
    if any(len(f) != 2 for f in facets) and dim == 2:
        raise ValidationError("2D facets must be segments")

    if dim == 2:
        loop = _boundary_loop(facets, len(verts))
        angles = polygon_interior_angles(verts, loop)
        # all polygon vertices are singular by default; users may only add
        sing_v |= set(int(v) for v in loop)
        for vid in sing_v:
            openings.setdefault(vid, angles.get(vid, math.pi))
        sing_edges = ()
    else:
        probe = Domain(3, verts, tuple(facets), tuple(flags), frozenset(),
                       tuple(), {}, None)
        dihedrals = _facet_dihedrals(verts, tuple(facets), tuple(flags))
        if probe.volume() <= 0:
            raise ValidationError("boundary facets are not outward-oriented")
        # all geometric edges are singular by default
        for edge, ang in dihedrals.items():
            if abs(ang - math.pi) > ANGLE_TOL:
                if edge not in sing_e:
                    sing_e.append(edge)
                openings.setdefault(edge, ang)
        sing_edges = tuple(sorted(set(sing_e)))
        # vertices terminating non-collinear singular edges
        incident = {}
        for i, j in sing_edges:
            d = verts[j] - verts[i]
            d = d / np.linalg.norm(d)
            incident.setdefault(i, []).append(d)
            incident.setdefault(j, []).append(-d)
        for vid, dirs in incident.items():
            if len(dirs) == 2 and abs(np.dot(dirs[0], dirs[1]) + 1.0) < ANGLE_TOL:
                continue
            sing_v.add(vid)

    grading = None
    if grading_kv or kappa_overrides:
        m = int(grading_kv.get("m", 1))
        a = float(grading_kv.get("a", 0.5))
        grading = GradingSpec(m=m, a=a, kappa=kappa_overrides or None)

    domain = Domain(
        dimension=dim,
        vertices=verts,
        boundary_facets=tuple(facets),
        facet_flags=tuple(flags),
        singular_vertices=frozenset(sing_v),
        singular_edges=sing_edges if dim == 3 else (),
        corner_openings=openings,
        default_grading=grading,
    )
    validate_domain(domain)
    return domain


def _corner_key(tok: str):
    if "-" in tok:
        i, j = tok.split("-")
        return tuple(sorted((int(i), int(j))))
    return int(tok)
