import numpy as np
import pytest

from polygrade.domain import GradingSpec
from polygrade.fixtures import lshape2d, prismwedge3d
from polygrade.mesh_io import (
    decomposition_from_text,
    decomposition_to_text,
    mesh_to_plain,
    mesh_to_vtk,
    plain_to_simplicial,
)
from polygrade.fem import SimplicialMesh
from polygrade.refine2d import initial_mesh2
from polygrade.refine3d import check_conformity, refine_decomposition, tetrahedralize


@pytest.fixture(scope="module")
def wedge():
    return prismwedge3d()


class TestVTK:
    def test_2d_mesh_cell_types(self):
        mesh = initial_mesh2(lshape2d()).to_simplicial()
        text = mesh_to_vtk(mesh)
        assert "DATASET UNSTRUCTURED_GRID" in text
        types = text.split("CELL_TYPES")[1].split()[1:]
        assert set(types[: len(mesh.cells)]) == {"5"}

    def test_decomposition_has_tetra_and_wedge(self, wedge):
        d = wedge.initial_decomposition()
        text = mesh_to_vtk(d)
        types = text.split("CELL_TYPES")[1].split()
        n = int(types[0])
        kinds = set(types[1 : n + 1])
        assert kinds == {"10", "13"}  # tetra + wedge

    def test_deterministic(self, wedge):
        d = wedge.initial_decomposition()
        assert mesh_to_vtk(d) == mesh_to_vtk(wedge.initial_decomposition())

    def test_empty_mesh_valid_header(self):
        mesh = SimplicialMesh(
            points=np.zeros((0, 3)), cells=np.zeros((0, 4), dtype=int),
            boundary_facets=np.zeros((0, 3), dtype=int),
            dirichlet=np.zeros(0, dtype=bool),
        )
        text = mesh_to_vtk(mesh)
        assert "POINTS 0 double" in text
        assert "CELLS 0 0" in text


class TestPlainRoundTrip:
    def test_byte_identical(self, wedge):
        mesh = tetrahedralize(wedge.initial_decomposition())
        text = mesh_to_plain(mesh)
        mesh2 = plain_to_simplicial(text)
        assert mesh_to_plain(mesh2) == text

    def test_decomposition_round_trip(self, wedge):
        d = wedge.initial_decomposition()
        text = decomposition_to_text(d)
        d2 = decomposition_from_text(text, wedge.domain)
        assert decomposition_to_text(d2) == text
        assert check_conformity(d2).ok

    def test_round_trip_after_refinement(self, wedge):
        g = GradingSpec(m=1, a=0.5, kappa=0.25)
        d = refine_decomposition(wedge.initial_decomposition(), g)
        text = decomposition_to_text(d)
        d2 = decomposition_from_text(text, wedge.domain)
        assert d2.census() == d.census()
        assert check_conformity(d2).ok
