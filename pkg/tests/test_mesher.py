import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pbrfit import mesher
from pbrfit import procgen as pg
from pbrfit.errors import DataIOError, EmptyInputError
from pbrfit.volfield import TricolumnField


def _ball_grid(g, radius, center=(0.0, 0.0, 0.0)):
    lo, hi = np.full(3, -1.0), np.full(3, 1.0)
    grid = mesher.TetGrid(lo, hi, np.zeros((g, g, g)))
    p = grid.positions() - np.asarray(center)
    return mesher.TetGrid(lo, hi, radius - np.linalg.norm(p, axis=-1))


def test_tets_fill_cells():
    grid = mesher.TetGrid(np.zeros(3), np.ones(3), np.zeros((3, 3, 3)))
    tets = grid.tets()
    assert tets.shape == (6 * 8, 4)
    pos = grid.positions().reshape(-1, 3)
    v = pos[tets]
    vol = np.abs(np.einsum("ij,ij->i", v[:, 1] - v[:, 0],
                           np.cross(v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]))) / 6
    assert np.sum(vol) == pytest.approx(1.0)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.25, 0.7), st.floats(-0.15, 0.15))
def test_extracted_ball_is_closed(radius, shift):
    mesh = mesher.marching_tetrahedra(_ball_grid(28, radius, (shift, 0.0, -shift)), 0.0)
    assert mesh.is_watertight() and mesh.euler_characteristic() == 2
    assert mesh.signed_volume() == pytest.approx(4 / 3 * np.pi * radius ** 3, rel=0.08)
    r = np.linalg.norm(mesh.vertices - [shift, 0.0, -shift], axis=1)
    assert np.max(np.abs(r - radius)) < 2.0 / 27


def test_empty_and_full_grids_give_no_faces():
    for v in (0.0, 1.0):
        grid = mesher.TetGrid(-np.ones(3), np.ones(3), np.full((5, 5, 5), v))
        assert len(mesher.marching_tetrahedra(grid, 0.5).faces) == 0


def test_smoothing_preserves_constant_and_mean_range():
    grid = mesher.TetGrid(-np.ones(3), np.ones(3), np.full((6, 6, 6), 2.5))
    np.testing.assert_allclose(mesher.smooth_density(grid, 0.5, 4).values, 2.5)
    rnd = np.random.default_rng(0).uniform(0, 1, (6, 6, 6))
    sm = mesher.smooth_density(mesher.TetGrid(-np.ones(3), np.ones(3), rnd), 0.5, 3).values
    assert sm.min() >= rnd.min() and sm.max() <= rnd.max() and sm.std() < rnd.std()
    with pytest.raises(ValueError):
        mesher.smooth_density(grid, 1.5)


def test_largest_component_keeps_bigger_ball():
    a = _ball_grid(24, 0.45, (-0.4, 0, 0)).values
    b = _ball_grid(24, 0.2, (0.6, 0, 0)).values
    grid = mesher.TetGrid(-np.ones(3), np.ones(3), np.maximum(a, b))
    mesh = mesher.largest_component(mesher.marching_tetrahedra(grid, 0.0))
    assert mesh.is_watertight() and np.all(mesh.vertices[:, 0] < 0.2)


def test_mesh_field_bakes_materials():
    spec = pg.sphere_scene(0, radius=0.5, albedo=(0.9, 0.2, 0.1), metal=0.0, rough=0.4)
    mesh = mesher.mesh_field(pg.scene_to_field(spec), resolution=20)
    assert mesh.is_watertight()
    np.testing.assert_allclose(np.median(mesh.albedo, axis=0), [0.9, 0.2, 0.1], atol=0.02)
    assert np.median(mesh.rough) == pytest.approx(0.4, abs=0.02)


def test_mesh_field_on_empty_field():
    fld = TricolumnField.zeros(4, 9)
    fld = fld.with_params(dict(fld.param_arrays(), xy=fld.xy - 50.0))
    with pytest.raises(EmptyInputError):
        mesher.mesh_field(fld, resolution=8)


def test_ply_roundtrip(tmp_path):
    mesh = mesher.marching_tetrahedra(_ball_grid(10, 0.5), 0.0)
    mesh.albedo[:] = [0.25, 0.5, 0.75]
    mesher.write_ply(mesh, tmp_path / "m.ply")
    back = mesher.read_ply(tmp_path / "m.ply")
    np.testing.assert_array_equal(back.faces, mesh.faces)
    np.testing.assert_allclose(back.vertices, mesh.vertices, rtol=1e-6, atol=1e-7)
    np.testing.assert_allclose(back.albedo, mesh.albedo, rtol=1e-6)
    (tmp_path / "x.ply").write_bytes(b"not a mesh")
    with pytest.raises(DataIOError):
        mesher.read_ply(tmp_path / "x.ply")


def test_default_iso_is_half_opacity():
    cell = 0.07
    assert 1 - np.exp(-mesher.default_iso(cell) * cell) == pytest.approx(0.5)
