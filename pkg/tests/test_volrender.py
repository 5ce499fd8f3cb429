import numpy as np
import pytest

from helpers import angular_deg, directional_check, small_camera, sphere_points_normals

from pbrfit import autodiff as ad
from pbrfit import volrender as vr
from pbrfit.errors import ConfigError
from pbrfit.pbr import Cubemap, bake_lut, prefilter_environment
from pbrfit.volfield import (Channels, TricolumnField, VoxelGrid, inverse_softplus,
                             random_field)


class _Constant:
    """Homogeneous medium with fixed materials, exposing ``channels_at``."""

    bounds = (np.full(3, -1.0), np.full(3, 1.0))

    def __init__(self, sigma):
        self.sigma = sigma

    def channels_at(self, p):
        n = len(p)
        up = np.zeros((n, 3))
        up[:, 2] = 1.0
        return Channels(np.full((n, 1), self.sigma), np.full((n, 3), 0.5),
                           np.zeros((n, 1)), np.full((n, 1), 0.5), up)


def test_camera_validation_and_roundtrip():
    cam = vr.Camera.look_at((0, 0, -3), width=8, height=6)
    back = vr.Camera.from_dict(cam.to_dict())
    np.testing.assert_allclose(back.matrix34(), cam.matrix34())
    with pytest.raises(ConfigError):
        vr.Camera(np.eye(3) * 2, np.zeros(3), 10, 10, 4, 4, 8, 8)
    with pytest.raises(ConfigError):
        vr.Camera(np.eye(3), np.zeros(3), -1, 10, 4, 4, 8, 8)
    with pytest.raises(ConfigError):
        vr.Camera.look_at((0, 0, 0), (0, 0, 0))
    with pytest.raises(ConfigError):
        vr.MarchConfig(1)


def test_rays_unit_and_centered():
    cam = vr.Camera.look_at((0, 0, -3), width=9)
    o, d = vr.generate_rays(cam)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0)
    np.testing.assert_allclose(d[4 * 9 + 4], [0, 0, 1], atol=1e-12)
    # image rows go down in world y
    assert d[0, 1] > 0 > d[-1, 1]


def test_ray_box_misses_and_hits():
    t0, t1 = vr.ray_box(np.array([[0, 0, -3.0], [0, 5, -3.0]]),
                        np.array([[0, 0, 1.0], [0, 0, 1.0]]), (-np.ones(3), np.ones(3)))
    assert t0[0] == pytest.approx(2) and t1[0] == pytest.approx(4)
    assert t1[1] < t0[1]


def test_homogeneous_opacity_closed_form():
    sigma = 0.7
    cfg = vr.MarchConfig(64)
    out = vr.march_ray(_Constant(sigma), (0, 0, -3), (0, 0, 1), cfg)
    assert out["alpha"][0] == pytest.approx(1 - np.exp(-2 * sigma), rel=1e-12)
    # expected depth of an exponential profile truncated to [2, 4]
    span = 2.0
    want = 2.0 + 1 / sigma - span * np.exp(-sigma * span) / -np.expm1(-sigma * span)
    assert out["depth"][0] == pytest.approx(want, abs=2e-3)
    assert vr.march_ray(_Constant(sigma), (0, 5, -3), (0, 0, 1), cfg)["alpha"][0] == 0


def test_weights_sum_below_one():
    rng = np.random.default_rng(0)
    w = vr.ea_weights(rng.uniform(0, 50, (20, 16)), rng.uniform(0.01, 0.2, (20, 1)))
    assert np.all(w >= 0) and np.all(w.sum(axis=1) <= 1 + 1e-12)


def test_render_view_gradients():
    rng = np.random.default_rng(1)
    fld = random_field("tricolumn", 4, mixing="sum", rng=1, scale=0.5)
    xy = fld.xy.copy()
    xy[:4] += 1.0
    fld = fld.with_params(dict(fld.param_arrays(), xy=xy))
    cam = small_camera(4)
    ws = rng.standard_normal((4, 4, 3)), rng.standard_normal((4, 4, 1))

    def fn(p):
        b = vr.render_view(fld, cam, vr.MarchConfig(6), params=p)
        return ad.add(ad.sum(ad.mul(ws[0], b.albedo)), ad.sum(ad.mul(ws[1], b.depth)))

    assert directional_check(fn, fld.param_arrays(), rng) < 1e-6


def test_lattice_path_matches_pointwise():
    fld = random_field("tricolumn", 5, mixing="sum", rng=2)
    cam = small_camera(5)
    o, d = vr.generate_rays(cam)
    rs = vr.RaySamples(o, d, fld.bounds, vr.MarchConfig(8)).attach_lattice(fld.lattice_shape)
    a = vr.render_view(fld, cam, vr.MarchConfig(8))
    b = vr.render_view(fld, cam, samples=rs)
    for k in ("albedo", "depth", "mask", "normal"):
        np.testing.assert_allclose(getattr(b, k), getattr(a, k), atol=1e-12)


def test_empty_field_renders_black():
    fld = TricolumnField.zeros(4, 9)
    xy = fld.xy - 50.0
    fld = fld.with_params(dict(fld.param_arrays(), xy=xy))
    b = vr.render_view(fld, small_camera(4), vr.MarchConfig(8))
    assert np.max(b.mask) < 1e-10


def test_shading_and_composite():
    c = Cubemap.constant(8, [1.0, 1.0, 1.0])
    env = prefilter_environment(c, 2, 64)
    lut = bake_lut(16, 1024)
    fld = _Constant(30.0)
    cam = vr.Camera.look_at((0, 0, -3), width=6)
    b = vr.render_shaded(fld, cam, env, lut, c.faces, vr.MarchConfig(16))
    assert b.shaded.shape == (6, 6, 3) and np.all(b.shaded > 0)
    assert np.all((b.composite >= 0) & (b.composite <= 1))
    with pytest.raises(ConfigError):
        vr.composite_background(b.shaded, b.mask, cam, c.faces, order="screen")
    fwd = vr.forward_shade(fld, cam, env, lut, vr.MarchConfig(16))
    np.testing.assert_allclose(fwd, b.mask * b.shaded, rtol=1e-6)


def test_lattice_pseudo_normals_on_voxel_sphere():
    # near-binary density on a 48^3 lattice: sigma = 40 sigmoid(-sdf / (cell / 2))
    r, radius = 48, 0.6
    cell = 2.0 / r
    c = (np.arange(r) + 0.5) * cell - 1
    z, y, x = np.meshgrid(c, c, c, indexing="ij")
    sdf = np.sqrt(x * x + y * y + z * z) - radius
    raw = np.zeros((9, r, r, r))
    raw[0] = inverse_softplus(40.0 / (1.0 + np.exp(sdf / (0.5 * cell))))
    raw[6:9] = 1.0
    fld = TricolumnField.from_voxel(VoxelGrid(raw))
    cam = vr.Camera.look_at((0.5, 0.8, -2.8), fov_deg=40.0, width=24)
    b = vr.render_view(fld, cam, vr.MarchConfig(128))
    pn = vr.pseudo_normals(fld, cam, b.depth, b.mask)
    pts, hit = sphere_points_normals(cam, radius)
    fg = hit & (b.mask[..., 0] > 0.5)
    assert fg.sum() > 50
    assert float(np.mean(angular_deg(pn[fg], pts[fg]))) < 5.0
