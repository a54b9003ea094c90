import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulshom.meshkit import (
    MIN_ANGLE_DEG,
    mesh_cell,
    mesh_epsilon_domain,
    read_mesh_text,
    unit_square_mesh,
    write_mesh_text,
    write_vtk,
)
from pulshom.microgeom import (
    ObstacleShape,
    breathing_disk_program,
    empty_program,
    obstacle_at,
    shuttle_program,
    static_program,
)

X = (0.5, 0.5)


def _geom(prog, s=0.0):
    return obstacle_at(prog, 0.0, X, s)


def _check_periodic_pairs(mesh):
    pairs = mesh.face_pairs()
    assert len(pairs)
    d = mesh.points[pairs[:, 0]] - mesh.points[pairs[:, 1]]
    # identified vertices differ by a lattice vector
    assert np.allclose(d, np.round(d), atol=1e-13)
    assert np.all(np.abs(np.round(d)).sum(axis=1) >= 1)


@pytest.mark.parametrize("s", [0.0, 0.1, 0.375, 0.6])
@pytest.mark.parametrize("frame", ["obstacle", "cell"])
def test_cell_mesh_quality_and_area(s, frame):
    g = _geom(shuttle_program(), s)
    m = mesh_cell(g, 1 / 32, frame=frame)
    assert m.min_angle() >= MIN_ANGLE_DEG
    assert np.all(m.areas() > 0)
    assert m.areas().sum() == pytest.approx(g.porosity, abs=1e-12)
    # a square with one hole, before periodic identification
    assert m.euler_characteristic() == 0
    _check_periodic_pairs(m)


def test_empty_cell_mesh():
    m = mesh_cell(_geom(empty_program()), 1 / 16)
    assert len(m.interface_edges) == 0
    assert m.areas().sum() == pytest.approx(1.0, abs=1e-14)
    assert m.euler_characteristic() == 1


def test_disk_mesh_has_symmetry_and_exact_polygon_area():
    g = _geom(static_program(ObstacleShape("disk", radius=0.2)))
    m = mesh_cell(g, 1 / 32)
    assert m.symmetry == "d4"
    assert m.areas().sum() == pytest.approx(g.porosity, abs=1e-12)


def test_interface_edges_trace_obstacle():
    g = _geom(shuttle_program(), 0.1)
    m = mesh_cell(g, 1 / 32)
    nrm, ln = m.interface_normals()
    assert ln.sum() == pytest.approx(2 * (0.1 + 0.2), rel=1e-12)
    mid = 0.5 * (m.points[m.interface_edges[:, 0]] + m.points[m.interface_edges[:, 1]])
    # normals point into the obstacle, i.e. towards its center
    assert np.all(np.einsum("ij,ij->i", nrm, g.center - mid) > 0)


def test_translation_gives_shifted_mesh():
    p = shuttle_program()
    a = mesh_cell(_geom(p, 0.05), 1 / 32)
    b = mesh_cell(_geom(p, 0.15), 1 / 32)
    shift = _geom(p, 0.15).center - _geom(p, 0.05).center
    assert np.array_equal(a.triangles, b.triangles)
    assert np.allclose(b.points - a.points, shift, atol=1e-14)


def test_mesh_size_validation():
    with pytest.raises(ValueError):
        mesh_cell(_geom(shuttle_program()), 0.0)
    with pytest.raises(ValueError):
        mesh_cell(_geom(shuttle_program()), 1 / 16, frame="bogus")


@settings(max_examples=10, deadline=None)
@given(st.floats(0.0, 1.0, exclude_max=True))
def test_random_slices_mesh_cleanly(s):
    g = _geom(shuttle_program(), s)
    m = mesh_cell(g, 1 / 16)
    assert m.min_angle() >= MIN_ANGLE_DEG
    assert m.areas().sum() == pytest.approx(g.porosity, abs=1e-12)


def test_breathing_disk_slices():
    p = breathing_disk_program()
    for s in (0.0, 0.25, 0.75):
        g = _geom(p, s)
        m = mesh_cell(g, 1 / 32)
        assert m.areas().sum() == pytest.approx(g.porosity, abs=1e-12)


def test_unit_square_mesh():
    m = unit_square_mesh(8)
    assert m.n_points == 81
    assert len(m.triangles) == 128
    assert m.areas().sum() == pytest.approx(1.0)
    assert np.all(m.areas() > 0)
    assert len(m.boundary_edges) == 32


def test_epsilon_mesh_conforms():
    m = mesh_epsilon_domain(shuttle_program(), 1 / 4, 1 / 8)
    g = _geom(shuttle_program())
    assert m.areas().sum() == pytest.approx(g.porosity, abs=1e-12)
    # shared faces were merged: only the outer square remains as outer boundary
    pa, pb = m.points[m.boundary_edges[:, 0]], m.points[m.boundary_edges[:, 1]]
    assert np.sum(np.linalg.norm(pb - pa, axis=1)) == pytest.approx(4.0)
    assert len(m.interface_edges) == 16 * len(mesh_cell(g, 1 / 8, frame="cell").interface_edges)
    assert set(map(tuple, np.unique(m.cell_index, axis=0))) == {(i, j) for i in range(4) for j in range(4)}


def test_mesh_text_round_trip(tmp_path):
    m = mesh_cell(_geom(shuttle_program()), 1 / 16)
    write_mesh_text(tmp_path / "m.txt", m)
    pts, tris = read_mesh_text(tmp_path / "m.txt")
    assert np.array_equal(pts, m.points)
    assert np.array_equal(tris, m.triangles)


def test_vtk_writer(tmp_path):
    m = unit_square_mesh(2)
    write_vtk(tmp_path / "m.vtk", m.points, m.triangles, {"u": np.arange(m.n_points, dtype=float)})
    text = (tmp_path / "m.vtk").read_text()
    assert "POINTS 9 double" in text
    assert "CELLS 8 32" in text
    assert "SCALARS u double 1" in text
    with pytest.raises(ValueError):
        write_vtk(tmp_path / "bad.vtk", m.points, m.triangles, {"u": np.zeros(3)})
