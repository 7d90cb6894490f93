import itertools
import math

import numpy as np
import pytest

from polygrade.domain import GradingSpec, ValidationError, VertexType
from polygrade.fixtures import cube3d, fichera3d, prismwedge3d
from polygrade.refine3d import (
    S4,
    VESS,
    VS3,
    build_decomposition,
    check_conformity,
    refine_decomposition,
    refine_prism,
    refine_s4,
    refine_vess,
    refine_vs3,
    tetrahedralize,
)

V, E, S = VertexType.V, VertexType.E, VertexType.S


def tet_volume(pts):
    return np.linalg.det(np.asarray(pts)[1:] - np.asarray(pts)[0]) / 6.0


def prism_volume(pts):
    pts = np.asarray(pts)
    n = np.cross(pts[1] - pts[0], pts[2] - pts[0])
    base = 0.5 * np.linalg.norm(n)
    return base * abs(np.dot(pts[3] - pts[0], n / np.linalg.norm(n)))


REF_TET = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])


class TestRefineS4:
    def test_reference_volumes(self):
        children = refine_s4(REF_TET)
        vols = sorted(abs(tet_volume(c)) for c in children)
        v = abs(tet_volume(REF_TET))
        # oracle: brute-force signed volumes of the 12 children
        assert len(children) == 12
        assert np.allclose(vols[:8], v / 16)
        assert np.allclose(vols[8:], v / 8)
        assert sum(vols) == pytest.approx(v, rel=1e-13)

    def test_partition_random(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            pts = rng.normal(size=(4, 3))
            v = abs(tet_volume(pts))
            if v < 1e-3:
                continue
            vols = [abs(tet_volume(c)) for c in refine_s4(pts)]
            assert sum(vols) == pytest.approx(v, rel=1e-12)

    def test_face_trace_is_midpoint_four_split(self):
        children = refine_s4(REF_TET)
        # children with all vertices on z=0 show the 4-split of that face
        on_face = [c for c in children if np.allclose(c[:, 2], 0.0)]
        assert len(on_face) == 0  # children are tets, only faces lie in plane
        tri_areas = []
        for c in children:
            mask = np.abs(c[:, 2]) < 1e-14
            if mask.sum() == 3:
                tri = c[mask]
                a = 0.5 * abs(np.cross(tri[1] - tri[0], tri[2] - tri[0])[2])
                tri_areas.append(a)
        assert len(tri_areas) == 4
        assert np.allclose(tri_areas, 0.125)


class TestRefineVS3:
    def test_kappa_half_matches_s4(self):
        got, classes = refine_vs3(REF_TET, 0.5)
        want = refine_s4(REF_TET)
        def keyed(cells):
            return sorted(tuple(sorted(map(tuple, np.round(c, 12)))) for c in cells)
        assert keyed(got) == keyed(want)

    def test_corner_volume_kappa_cubed(self):
        children, classes = refine_vs3(REF_TET, 0.25)
        assert classes[0] == VS3
        v = abs(tet_volume(REF_TET))
        assert abs(tet_volume(children[0])) == pytest.approx(v / 64, rel=1e-13)

    @pytest.mark.parametrize("kappa", [0.125, 0.25, 0.5])
    def test_partition_random(self, kappa):
        rng = np.random.default_rng(22)
        for _ in range(15):
            pts = rng.normal(size=(4, 3))
            v = abs(tet_volume(pts))
            if v < 1e-3:
                continue
            children, classes = refine_vs3(pts, kappa)
            vols = [abs(tet_volume(c)) for c in children]
            assert min(vols) > 0
            assert sum(vols) == pytest.approx(v, rel=1e-12)
            assert classes.count(VS3) == 1 and classes.count(S4) == 11


def straight_vess(scale=1.0):
    # VE edge perpendicular to the opposite face
    return scale * np.array([
        [0.0, 0.0, 1.0],  # A (V)
        [0.0, 0.0, 0.0],  # B (E)
        [1.0, 0.0, 0.0],  # C
        [0.0, 1.0, 0.0],  # D
    ])


class TestRefineVESS:
    def test_child_census(self):
        tets, classes, prism = refine_vess(straight_vess(), 0.25)
        # spec's stated tags were 1 VS3 + 4 S4 + prism; the corner child has
        # its new point on the open singular edge, so it is VESS (see ledger)
        assert classes.count(VESS) == 1
        assert classes.count(S4) == 4
        assert prism.shape == (6, 3)

    def test_volume_partition(self):
        rng = np.random.default_rng(23)
        for kappa in (0.125, 0.25, 0.5):
            for _ in range(10):
                # random VESS tet with AB perpendicular to BCD
                b = rng.normal(size=3)
                c = b + rng.normal(size=3)
                d = b + rng.normal(size=3)
                n = np.cross(c - b, d - b)
                if np.linalg.norm(n) < 1e-3:
                    continue
                a = b + n * rng.uniform(0.3, 1.5)
                pts = np.array([a, b, c, d])
                v = abs(tet_volume(pts))
                tets, classes, prism = refine_vess(pts, kappa)
                total = sum(abs(tet_volume(t)) for t in tets)
                total += prism_volume(prism)
                assert total == pytest.approx(v, rel=1e-11)

    def test_b_only_in_prism(self):
        pts = straight_vess()
        tets, classes, prism = refine_vess(pts, 0.25)
        b = pts[1]
        for t in tets:
            assert not np.any(np.all(np.abs(t - b) < 1e-14, axis=1))
        assert np.any(np.all(np.abs(prism - b) < 1e-14, axis=1))

    def test_corner_child_is_scaled_copy(self):
        pts = straight_vess()
        tets, classes, prism = refine_vess(pts, 0.25)
        corner = tets[0]
        expect = pts[0] + 0.25 * (pts - pts[0])
        assert np.allclose(corner, expect)


class TestRefinePrism:
    def unit_prism(self):
        pts = np.array([
            [0.0, 0, 0], [1, 0, 0], [0, 1, 0],
            [0.0, 0, 1], [1, 0, 1], [0, 1, 1],
        ])
        types = np.array([E, S, S, E, S, S], dtype=np.uint8)
        return pts, types

    def test_uniform_kappa_half(self):
        pts, types = self.unit_prism()
        kids = refine_prism(pts, types, 0.5)
        assert len(kids) == 8
        vols = [prism_volume(k) for k in kids]
        assert np.allclose(vols, vols[0])
        assert sum(vols) == pytest.approx(0.5, rel=1e-13)

    def test_graded_base_area(self):
        pts, types = self.unit_prism()
        kids = refine_prism(pts, types, 0.25)
        # the child keeping the EE edge has cross-section area (1/16) x parent
        areas = []
        for k in kids:
            tri = k[:3]
            areas.append(0.5 * abs(np.cross(tri[1] - tri[0], tri[2] - tri[0])[2]))
        has_e = [np.allclose(k[0][:2], 0.0) for k in kids]
        e_areas = [a for a, h in zip(areas, has_e) if h]
        assert e_areas and all(
            a == pytest.approx(0.5 / 16.0, rel=1e-12) for a in e_areas
        )
        assert sum(a for a in areas) == pytest.approx(2 * 0.5, rel=1e-12)

    def test_volume_partition(self):
        pts, types = self.unit_prism()
        for kappa in (0.125, 0.25, 0.5):
            kids = refine_prism(pts, types, kappa)
            assert sum(prism_volume(k) for k in kids) == pytest.approx(0.5, rel=1e-12)


@pytest.fixture(scope="module")
def fixtures3d():
    return {
        "cube3d": cube3d(),
        "prismwedge3d": prismwedge3d(),
        "fichera3d": fichera3d(),
    }


class TestInitialDecompositions:
    def test_all_fixtures_valid(self, fixtures3d):
        for name, bc in fixtures3d.items():
            d = bc.initial_decomposition()
            rep = check_conformity(d)
            assert rep.ok, f"{name}: {rep}"
            assert rep.volume_rel_error < 1e-12

    def test_broken_tet_types_rejected(self, fixtures3d):
        bc = fixtures3d["cube3d"]
        d = bc.initial_decomposition()
        # VV edge: connect two domain corners directly
        vids = np.flatnonzero(d.ptypes == V)[:2]
        sids = np.flatnonzero(d.ptypes == S)[:2]
        bad = [[vids[0], vids[1], sids[0], sids[1]]]
        tets = np.vstack([d.tets, bad])
        with pytest.raises(ValidationError):
            build_decomposition(bc.domain, d.points, tets, d.prisms, d.marks)

    def test_skewed_prism_rejected(self, fixtures3d):
        bc = fixtures3d["prismwedge3d"]
        d = bc.initial_decomposition()
        pts = d.points.copy()
        prism = d.prisms[0]
        pts[prism[3]] += np.array([0.07, 0.03, 0.0])  # skew one lateral edge
        with pytest.raises(ValidationError, match="prism"):
            build_decomposition(bc.domain, pts, d.tets, d.prisms, d.marks)


class TestRefineDecomposition:
    def test_census_recurrences(self, fixtures3d):
        g = GradingSpec(m=1, a=0.5, kappa=0.25)
        for name, bc in fixtures3d.items():
            d = bc.initial_decomposition()
            c0 = d.census()
            for _ in range(2):
                d1 = refine_decomposition(d, g)
                c1 = d1.census()
                assert c1["VS3"] == c0["VS3"], name
                assert c1["VESS"] == c0["VESS"], name
                assert c1["prisms"] == 8 * c0["prisms"] + c0["VESS"], name
                d, c0 = d1, c1

    def test_conformity_and_volume_each_level(self, fixtures3d):
        g = GradingSpec(m=1, a=0.5, kappa=0.25)
        for name, bc in fixtures3d.items():
            d = bc.initial_decomposition()
            for _ in range(2):
                d = refine_decomposition(d, g)
                rep = check_conformity(d)
                assert rep.ok, f"{name}: {rep}"
                assert rep.volume_rel_error < 1e-10

    def test_corner_grading_exact(self, fixtures3d):
        g = GradingSpec(m=1, a=0.5, kappa=0.25)
        bc = fixtures3d["cube3d"]
        d = bc.initial_decomposition()
        corner = np.zeros(3)
        def nearest(d):
            sel = ~np.all(np.abs(d.points - corner) < 1e-13, axis=1)
            return np.linalg.norm(d.points[sel] - corner, axis=1).min()
        d0 = nearest(d)
        for n in range(1, 4):
            d = refine_decomposition(d, g)
            assert nearest(d) == pytest.approx(0.25 ** n * d0, rel=1e-12)

    def test_rigid_motion_commutes(self):
        bc = prismwedge3d()
        g = GradingSpec(m=1, a=0.5, kappa=0.25)
        d = bc.initial_decomposition()
        d1 = refine_decomposition(d, g)

        # rotate the domain and the decomposition by 90 deg about z + shift
        rot = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
        shift = np.array([0.25, -1.5, 3.0])

        from polygrade.domain import Domain
        dom = bc.domain
        dom2 = Domain(
            dimension=3,
            vertices=dom.vertices @ rot.T + shift,
            boundary_facets=dom.boundary_facets,
            facet_flags=dom.facet_flags,
            singular_vertices=dom.singular_vertices,
            singular_edges=dom.singular_edges,
            corner_openings=dom.corner_openings,
        )
        d_rot = build_decomposition(
            dom2, d.points @ rot.T + shift, d.tets.copy(), d.prisms.copy(),
            marks=d.marks,
        )
        d2 = refine_decomposition(d_rot, g)
        got = np.sort(np.round(d2.points, 9).view([('', float)] * 3), axis=0)
        want = np.sort(
            np.round(d1.points @ rot.T + shift, 9).view([('', float)] * 3),
            axis=0,
        )
        assert np.array_equal(got, want)

    def test_anisotropy_of_edge_prisms(self, fixtures3d):
        # prisms keeping an EE edge: cross-section shrinks by kappa per level,
        # axial length by 1/2 per level
        g = GradingSpec(m=1, a=0.5, kappa=0.25)
        bc = fixtures3d["prismwedge3d"]
        d = bc.initial_decomposition()
        stats = []
        for _ in range(3):
            d = refine_decomposition(d, g)
            ee = (d.ptypes[d.prisms[:, 0]] == E) & (d.ptypes[d.prisms[:, 3]] == E)
            p = d.points[d.prisms[ee]]
            cross = np.linalg.norm(p[:, 1] - p[:, 0], axis=1).min()
            axial = np.linalg.norm(p[:, 3] - p[:, 0], axis=1)
            stats.append((cross, axial.min(), axial.max()))
        for (c1, alo1, ahi1), (c2, alo2, ahi2) in zip(stats, stats[1:]):
            assert c2 == pytest.approx(0.25 * c1, rel=1e-9)
            assert ahi2 == pytest.approx(0.5 * ahi1, rel=1e-9)


class TestTetrahedralize:
    def test_single_prism_three_tets(self):
        from polygrade.fixtures import BoxComplex
        bc = prismwedge3d()
        d = bc.initial_decomposition()
        mesh = tetrahedralize(d)
        n_from_prisms = 3 * len(d.prisms)
        assert len(mesh.cells) == len(d.tets) + 8 * len(d.octs) + n_from_prisms
        assert mesh.cell_volumes().min() > 0
        assert mesh.cell_volumes().sum() == pytest.approx(
            bc.domain.volume(), rel=1e-12
        )

    def test_no_prisms_passthrough(self, fixtures3d):
        bc = fixtures3d["cube3d"]
        d = bc.initial_decomposition()  # cube T'_0 has no prisms
        assert len(d.prisms) == 0
        mesh = tetrahedralize(d)
        assert len(mesh.cells) == len(d.tets)

    def test_mesh_conformity_two_levels(self, fixtures3d):
        g = GradingSpec(m=1, a=0.5, kappa=0.25)
        for name, bc in fixtures3d.items():
            d = bc.initial_decomposition()
            for _ in range(2):
                d = refine_decomposition(d, g)
            mesh = tetrahedralize(d)
            rep = check_conformity(mesh, bc.domain)
            assert rep.ok, f"{name}: {rep}"

    def test_broken_mesh_detected(self, fixtures3d):
        bc = fixtures3d["cube3d"]
        mesh = tetrahedralize(bc.initial_decomposition())
        # duplicate one interior vertex in half its cells: faces stop matching
        from polygrade.refine3d import _face_census
        uniq, counts = _face_census(mesh.cells)
        interior = uniq[counts == 2]
        vid = None
        for cand in np.unique(interior):
            if not np.any(np.all(np.isclose(mesh.points[cand], [0, 0, 0]), axis=0)):
                vid = int(cand)
                break
        touching = np.flatnonzero(np.any(mesh.cells == vid, axis=1))
        mesh.points = np.vstack([mesh.points, mesh.points[vid] + 1e-3])
        dup = len(mesh.points) - 1
        cells = mesh.cells.copy()
        half = touching[: len(touching) // 2]
        for r in half:
            cells[r][cells[r] == vid] = dup
        mesh.cells = cells
        rep = check_conformity(mesh, bc.domain)
        assert not rep.ok
        assert any("orphan" in v or "volume" in v for v in rep.violations)


class TestDihedralStability:
    def test_s4_min_dihedral_constant_across_levels(self, fixtures3d):
        # the S4 element family of the decomposition (and the octahedron
        # output cones) stay within finitely many similarity classes; only
        # prism pieces are anisotropic, by design
        from polygrade.refine3d import _dihedral_range
        g = GradingSpec(m=1, a=0.5, kappa=0.25)
        for name in ("cube3d", "prismwedge3d"):
            bc = fixtures3d[name]
            d = bc.initial_decomposition()
            mins = []
            for _ in range(4):
                d = refine_decomposition(d, g)
                lo = _dihedral_range(d.points, d.tets[d.tclass == S4])[0]
                mesh = tetrahedralize(d)
                cones = mesh.cells[len(d.tets): len(d.tets) + 8 * len(d.octs)]
                if len(cones):
                    lo = min(lo, _dihedral_range(mesh.points, cones)[0])
                mins.append(lo)
            assert mins[3] >= 0.9 * mins[0], (name, [math.degrees(x) for x in mins])
