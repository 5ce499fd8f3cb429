import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from helpers import directional_check

from pbrfit import objective as obj
from pbrfit.errors import ConfigError, ShapeError

finite = st.floats(-5, 5, allow_nan=False)


def test_huber_pieces():
    eps = obj.HUBER_EPS
    r = np.array([0.0, eps / 2, eps, 3 * eps, -3 * eps])
    want = [0.0, eps ** 2 / 8, eps ** 2 / 2, eps * 2.5 * eps, eps * 2.5 * eps]
    np.testing.assert_allclose(obj.huber(r), want, rtol=1e-14)


def test_masked_huber_ignores_background():
    rng = np.random.default_rng(0)
    gt = rng.uniform(0, 1, (6, 6, 3))
    pred = gt.copy()
    mask = np.zeros((6, 6, 1))
    mask[:3] = 1.0
    pred[3:] += 5.0
    assert float(obj.masked_huber(pred, gt, mask)) == 0.0
    with pytest.raises(ShapeError):
        obj.masked_huber(pred[:5], gt, mask)


def test_bce_values():
    m = np.ones((2, 2, 1))
    assert float(obj.mask_bce(m, np.full_like(m, 0.5))) == math.log(2)
    assert float(obj.mask_bce(m, m)) < 1e-5
    soft = np.full((2, 2, 1), 0.3)
    assert abs(float(obj.mask_bce(soft, soft))) < 1e-12
    # targets that exceed 1 by roundoff stay finite
    assert math.isfinite(float(obj.mask_bce(m + 1e-15, np.full_like(m, 0.7))))


def test_normal_cosine():
    n = np.zeros((3, 3, 3))
    n[..., 2] = 1.0
    assert float(obj.normal_cosine(n, n, np.ones((3, 3, 1)))) == 0.0
    assert float(obj.normal_cosine(n, -n, np.ones((3, 3, 1)))) == 2.0
    assert obj.normal_cosine(n, -n, np.zeros((3, 3, 1))) == 0.0


def test_tv_step_and_constant():
    assert float(obj.tv(np.full((4, 4, 3), 0.3))) == 0.0
    step = np.zeros((3, 4))
    step[:, 2:] = 1.0
    assert float(obj.tv(step)) == pytest.approx(3 / (3 * 3 + 2 * 4))
    with pytest.raises(ShapeError):
        obj.tv(np.zeros((1, 5)))


def test_total_loss_kinds():
    terms = {k: 1.0 for k in obj.TERMS}
    w = obj.LossWeights()
    assert float(obj.total_loss(terms, w)) == pytest.approx(sum(vars(w).values()))
    real = float(obj.total_loss(terms, w, kind="real"))
    assert real == pytest.approx(sum(getattr(w, k) for k in obj.REAL_TERMS))
    with pytest.raises(ConfigError):
        obj.total_loss({"Q": 1.0})
    with pytest.raises(ConfigError):
        obj.total_loss(terms, kind="video")
    with pytest.raises(ConfigError):
        obj.LossWeights(R=-1.0)
    with pytest.raises(ConfigError):
        obj.LossWeights.from_dict({"lpips": 1.0})


@pytest.mark.parametrize("name", ["huber", "bce", "depth", "normal", "tv", "env", "photo"])
def test_loss_gradients(name):
    rng = np.random.default_rng(len(name))
    gt = rng.uniform(0, 1, (5, 5, 3))
    mask = (rng.random((5, 5, 1)) > 0.4).astype(float)
    nb = rng.standard_normal((5, 5, 3))
    nb /= np.linalg.norm(nb, axis=-1, keepdims=True)
    fns = {
        "huber": (lambda q: obj.masked_huber(q["x"], gt, mask), rng.uniform(-1, 2, gt.shape)),
        "bce": (lambda q: obj.mask_bce(mask, q["x"]), rng.uniform(0.1, 0.9, mask.shape)),
        "depth": (lambda q: obj.depth_l1(gt[..., :1], q["x"], mask), rng.uniform(0, 1, mask.shape)),
        "normal": (lambda q: obj.normal_cosine(nb, q["x"], mask), rng.standard_normal(gt.shape)),
        "tv": (lambda q: obj.tv(q["x"]), rng.uniform(0, 1, gt.shape)),
        "env": (lambda q: obj.env_loss(gt, q["x"]), rng.uniform(0, 3, gt.shape)),
        "photo": (lambda q: obj.photometric(gt, q["x"], mask), rng.uniform(0, 1, gt.shape)),
    }
    fn, x = fns[name]
    assert directional_check(fn, {"x": x}, rng) < 1e-6


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (6, 6, 3), elements=st.floats(0.01, 1)),
       st.floats(0.05, 10), st.floats(-0.5, 0.5))
def test_psnr_affine_invariant(img, a, b):
    noisy = img + 0.01 * np.sin(np.arange(img.size)).reshape(img.shape)
    p1 = obj.metric_psnr(img, noisy)
    p2 = obj.metric_psnr(img, a * noisy + b)
    assert p1 == pytest.approx(p2, abs=1e-6)


def test_psnr_and_ssim_identical():
    img = np.random.default_rng(1).uniform(0, 1, (16, 16, 3))
    assert obj.metric_psnr(img, img) == obj.PSNR_CAP
    assert obj.metric_ssim(img, img) == pytest.approx(1.0)
    assert obj.metric_ssim(img, np.random.default_rng(2).uniform(0, 1, img.shape)) < 0.3


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 100))
def test_illum_metrics_invariances(s):
    rng = np.random.default_rng(3)
    gt = rng.uniform(0.1, 2.0, (8, 16, 3))
    pred = gt * rng.uniform(0.7, 1.3, gt.shape)
    base = obj.illum_metrics(gt, pred)
    scaled_pred = obj.illum_metrics(gt, s * pred)
    assert scaled_pred[0] == pytest.approx(base[0], abs=1e-9)   # angular
    assert scaled_pred[3] == pytest.approx(base[3], rel=1e-9)   # scale-invariant
    both = obj.illum_metrics(s * gt, s * pred)
    assert both[2] == pytest.approx(base[2], rel=1e-9)          # normalized


def test_illum_identical_is_zero():
    gt = np.random.default_rng(4).uniform(0.1, 2.0, (4, 8, 3))
    ang, rmse, norm, si = obj.illum_metrics(gt, gt)
    assert ang < 1e-6 and rmse == 0 and norm == 0 and si < 1e-12
