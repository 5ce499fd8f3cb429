import numpy as np
import pytest

from helpers import directional_check

from pbrfit import autodiff as ad
from pbrfit.errors import DataIOError
from pbrfit.imageio import write_pfm
from pbrfit.pbr import (Cubemap, PrefilterOperator, SurfacePoint, bake_lut,
                        cubemap_to_equirect, equirect_to_cubemap, fresnel, fresnel_f0,
                        prefilter_environment, sample_cubemap, shade_reference_mc,
                        shade_splitsum, tonemap_srgb)
from pbrfit.pbr import brdf
from pbrfit.pbr.cubemap import (dir_to_face, face_uv_to_dir, from_strip, texel_directions,
                                texel_solid_angles, to_strip)
from pbrfit.pbr.lut import read_lut, write_lut
from pbrfit.pbr.shade import inverse_tonemap_srgb


def _unit(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_solid_angles_cover_sphere():
    for s in (1, 4, 16):
        assert np.sum(texel_solid_angles(s)) == pytest.approx(4 * np.pi, rel=1e-12)


def test_face_roundtrip():
    rng = np.random.default_rng(0)
    d = _unit(rng, 500)
    face, u, v = dir_to_face(d)[:3]
    back = face_uv_to_dir(face, u, v)
    back /= np.linalg.norm(back, axis=-1, keepdims=True)
    np.testing.assert_allclose(back, d, atol=1e-12)


def test_constant_cubemap_sampling():
    c = Cubemap.constant(8, [0.2, 0.5, 1.0])
    d = _unit(np.random.default_rng(1), 100)
    np.testing.assert_allclose(sample_cubemap(c, d), np.tile([0.2, 0.5, 1.0], (100, 1)))


def test_strip_and_equirect_roundtrip():
    rng = np.random.default_rng(2)
    faces = rng.uniform(0, 1, (6, 4, 4, 3))
    np.testing.assert_array_equal(from_strip(to_strip(faces)), faces)
    smooth = Cubemap.from_function(16, lambda d: 1.0 + 0.5 * d)
    eq = cubemap_to_equirect(smooth, 64, 32)
    back = equirect_to_cubemap(eq, 16, supersample=2)
    assert np.max(np.abs(back.faces - smooth.faces)) < 0.03


def test_fresnel_limits():
    f0 = fresnel_f0(np.array([[0.9, 0.5, 0.1]]), np.array([[1.0]]))
    np.testing.assert_allclose(f0, [[0.9, 0.5, 0.1]])
    np.testing.assert_allclose(fresnel_f0(np.ones((1, 3)), np.zeros((1, 1))), 0.04)
    # normal incidence returns F0, grazing rises toward max(1 - rho, F0)
    np.testing.assert_allclose(fresnel(np.full((1, 3), 0.04), np.array([[0.2]]),
                                       np.array([[1.0]])), 0.04)
    assert np.all(fresnel(np.full((1, 3), 0.04), np.array([[0.2]]), np.array([[0.0]])) > 0.7)


def test_ggx_normalized():
    # projected NDF integrates to one over the hemisphere
    n = 400_000
    rng = np.random.default_rng(3)
    cos = rng.uniform(0, 1, n)
    for a in (0.1, 0.5, 1.0):
        est = np.mean(brdf.ggx_d(cos, a) * cos) * 2 * np.pi
        assert est == pytest.approx(1.0, rel=0.05)


def test_lut_bounds_and_io(tmp_path):
    lut = bake_lut(16, 1024, seed=0)
    assert lut.table.shape == (16, 16, 2)
    s = lut.table.sum(axis=-1)
    assert np.all(lut.table >= 0) and np.all(s <= 1.0 + 1e-9)
    write_lut(lut, tmp_path / "lut.pfm")
    back = read_lut(tmp_path / "lut.pfm")
    np.testing.assert_allclose(back.table, lut.table, rtol=1e-6)
    write_pfm(tmp_path / "bad.pfm", np.zeros((4, 8, 3)))
    with pytest.raises(DataIOError):
        read_lut(tmp_path / "bad.pfm")


def test_prefilter_preserves_constant():
    c = Cubemap.constant(16, [0.3, 0.6, 0.9])
    env = prefilter_environment(c, 4, 256)
    d = _unit(np.random.default_rng(4), 50)
    for rough in (0.0, 0.3, 0.7, 1.0):
        np.testing.assert_allclose(env.sample_specular(d, np.full((50, 1), rough)),
                                   np.tile([0.3, 0.6, 0.9], (50, 1)), rtol=1e-6)
    np.testing.assert_allclose(env.sample_diffuse(d), np.tile([0.3, 0.6, 0.9], (50, 1)),
                               rtol=1e-3)


def test_prefilter_operator_matches_function():
    c = Cubemap.from_function(8, lambda d: np.exp(2 * d))
    a = prefilter_environment(c, 3, 128, seed=1)
    b = PrefilterOperator(8, 3, 128, seed=1)(c.faces)
    for x, y in zip(a.specular, b.specular):
        np.testing.assert_allclose(x, y)


def _surface(rng, p, min_cos=0.2):
    n = _unit(rng, p)
    v = _unit(rng, p)
    v = np.where(np.sum(v * n, axis=1, keepdims=True) < 0, -v, v)
    v = v + (min_cos + 0.05) * n
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return SurfacePoint(rng.uniform(0.1, 0.9, (p, 3)), rng.uniform(0, 1, p),
                        rng.uniform(0.1, 0.9, p), n, v)


def test_splitsum_close_to_mc_at_normal_views():
    rng = np.random.default_rng(5)
    c = Cubemap.from_function(16, lambda d: 0.5 + 0.4 * np.maximum(d, 0) + 0.1 * d ** 2)
    env = prefilter_environment(c, 5, 512)
    lut = bake_lut(32, 1024)
    sp = _surface(rng, 40, min_cos=0.5)
    ss = shade_splitsum(sp, env, lut)
    mc = shade_reference_mc(sp, c, 8192, seed=0)
    assert np.median(np.abs(ss - mc) / mc) < 0.03


def test_fresnel_term_option():
    rng = np.random.default_rng(6)
    c = Cubemap.constant(8, [1.0, 1.0, 1.0])
    env = prefilter_environment(c, 3, 128)
    lut = bake_lut(16, 1024)
    sp = _surface(rng, 10)
    sp.view = sp.normal.copy()          # normal incidence: F_r equals F0
    a = shade_splitsum(sp, env, lut)
    b = shade_splitsum(sp, env, lut, fresnel_term="base")
    np.testing.assert_allclose(a, b, rtol=1e-12)
    sp = _surface(rng, 10, min_cos=0.0)
    assert not np.allclose(shade_splitsum(sp, env, lut),
                           shade_splitsum(sp, env, lut, fresnel_term="base"))
    with pytest.raises(ValueError):
        shade_splitsum(sp, env, lut, fresnel_term="schlick")


def test_shading_rejects_non_unit_normals():
    rng = np.random.default_rng(7)
    sp = _surface(rng, 3)
    sp.normal = sp.normal * 1.5
    env = prefilter_environment(Cubemap.constant(8, [1, 1, 1]), 2, 64)
    with pytest.raises(ValueError):
        shade_splitsum(sp, env, bake_lut(16, 1024))


def test_splitsum_gradients():
    rng = np.random.default_rng(8)
    op = PrefilterOperator(8, 3, 64, seed=0)
    lut = bake_lut(16, 1024)
    sp0 = _surface(rng, 5)
    w = rng.standard_normal((5, 3))
    params = {"albedo": sp0.albedo, "rough": sp0.rough, "metal": sp0.metal,
              "faces": rng.uniform(0.1, 1.0, (6, 8, 8, 3))}

    def fn(q):
        sp = SurfacePoint(q["albedo"], q["metal"], q["rough"], sp0.normal, sp0.view)
        return ad.sum(ad.mul(w, shade_splitsum(sp, op(q["faces"]), lut)))

    assert directional_check(fn, params, rng) < 1e-5


def test_tonemap_roundtrip():
    x = np.linspace(0, 1, 101)
    y = tonemap_srgb(x)
    assert np.all(np.diff(y) > 0)
    np.testing.assert_allclose(inverse_tonemap_srgb(y), x, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(tonemap_srgb(np.array([-1.0, 7.0])), [0.0, 1.0], atol=1e-15)


def test_texel_directions_unit():
    d = texel_directions(4)
    np.testing.assert_allclose(np.linalg.norm(d, axis=-1), 1.0)
