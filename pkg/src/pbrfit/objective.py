"""Training losses and evaluation metrics.

Losses take ndarrays or autodiff Vars and return scalars; all of them are
means over pixels (and channels) so weights do not depend on resolution.
Metrics are numpy only.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import xlogy

from . import autodiff as ad
from .errors import ConfigError, ShapeError

HUBER_EPS = 0.1
BCE_EPS = 1e-6
PSNR_CAP = 99.0
TERMS = ("R", "S", "M", "N", "TV", "d", "env")
REAL_TERMS = ("R", "M", "N", "TV", "d")


@dataclass
class LossWeights:
    """Weights of the photometric (R), material (S), mask (M), normal (N),
    total-variation (TV), depth (d) and environment (env) terms."""

    R: float = 1.0
    S: float = 1.0
    M: float = 1.0
    N: float = 0.1
    TV: float = 0.1
    d: float = 0.1
    env: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"loss weight {k} must be finite and >= 0, got {v}")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(TERMS)
        if unknown:
            raise ConfigError(f"unknown loss weight(s): {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})


def _same_shape(a, b, what):
    if ad.value(a).shape != ad.value(b).shape:
        raise ShapeError(f"{what}: shape {ad.value(a).shape} != {ad.value(b).shape}")


def huber(r, eps=HUBER_EPS):
    """Elementwise Huber: ``r^2 / 2`` inside ``|r| <= eps``, linear outside."""
    a = ad.abs(r)
    quad = ad.mul(0.5, ad.square(r))
    lin = ad.mul(eps, ad.sub(a, 0.5 * eps))
    return ad.where(ad.value(a) <= eps, quad, lin)


def masked_huber(pred, gt, mask, eps=HUBER_EPS):
    """Mean of ``huber(mask * (pred - gt))``."""
    if eps <= 0:
        raise ConfigError("Huber cutoff must be > 0")
    _same_shape(pred, gt, "masked_huber")
    return ad.mean(huber(ad.mul(mask, ad.sub(pred, gt)), eps))


def mask_bce(m, m_hat, eps=BCE_EPS):
    """Mean binary cross-entropy of the predicted opacity ``m_hat`` against
    target ``m``, minus the target's own entropy.

    ``m_hat`` is clamped to ``[eps, 1 - eps]``.  The entropy offset does not
    change gradients; it makes the loss vanish (up to the clamp) at
    ``m_hat == m`` for soft targets as well as binary ones.
    """
    _same_shape(m, m_hat, "mask_bce")
    p = ad.clip(m_hat, eps, 1.0 - eps)
    ll = ad.add(ad.mul(m, ad.log(p)), ad.mul(ad.sub(1.0, m), ad.log(ad.sub(1.0, p))))
    mv = np.clip(np.asarray(ad.value(m), dtype=float), 0.0, 1.0)  # opacity sums can exceed 1 by roundoff
    ent = -np.mean(xlogy(mv, mv) + xlogy(1.0 - mv, 1.0 - mv))
    return ad.sub(ad.neg(ad.mean(ll)), ent)


def photometric(img, img_hat, mask=None):
    """Mean squared error of (optionally masked) images."""
    _same_shape(img, img_hat, "photometric")
    diff = ad.sub(img, img_hat)
    if mask is not None:
        diff = ad.mul(mask, diff)
    return ad.mean(ad.square(diff))


def depth_l1(d, d_hat, mask):
    _same_shape(d, d_hat, "depth_l1")
    return ad.mean(ad.abs(ad.mul(mask, ad.sub(d, d_hat))))


def normal_cosine(n_bar, n_hat, mask):
    """Mask-weighted mean of ``1 - <n_bar, n_hat>`` (0 when the mask is empty)."""
    _same_shape(n_bar, n_hat, "normal_cosine")
    m = np.asarray(ad.value(mask), dtype=float)
    w = m[..., 0] if m.ndim == ad.value(n_hat).ndim else m
    total = float(np.sum(w))
    if total <= 0:
        return 0.0
    cos = ad.dot_last(n_bar, n_hat)
    return ad.mul(ad.sum(ad.mul(w, ad.sub(1.0, cos))), 1.0 / total)


def tv(img):
    """Anisotropic total variation of an ``(H, W)`` or ``(H, W, C)`` image:
    absolute forward differences along both axes, summed and divided by the
    number of difference terms (times channels)."""
    v = ad.value(img)
    if v.ndim == 2:
        img = ad.reshape(img, v.shape + (1,))
        v = v[..., None]
    h, w, c = v.shape
    if h < 2 or w < 2:
        raise ShapeError("tv needs an image of at least 2x2")
    dx = ad.abs(ad.sub(ad.getitem(img, (slice(None), slice(1, None))),
                       ad.getitem(img, (slice(None), slice(None, -1)))))
    dy = ad.abs(ad.sub(ad.getitem(img, slice(1, None)), ad.getitem(img, slice(None, -1))))
    count = c * (h * (w - 1) + (h - 1) * w)
    return ad.mul(ad.add(ad.sum(dx), ad.sum(dy)), 1.0 / count)


def env_loss(env, env_hat):
    """MSE between ``log1p``-compressed equirect radiance maps."""
    _same_shape(env, env_hat, "env_loss")
    return ad.mean(ad.square(ad.sub(ad.log(ad.add(1.0, env)), ad.log(ad.add(1.0, env_hat)))))


def total_loss(terms: dict, weights: LossWeights = None, kind="synthetic"):
    """Weighted sum of the available terms.  The real kind ignores the
    material (S) and environment terms; absent terms count as zero."""
    weights = weights or LossWeights()
    if kind not in ("synthetic", "real"):
        raise ConfigError(f"data kind must be synthetic or real, got {kind!r}")
    unknown = set(terms) - set(TERMS)
    if unknown:
        raise ConfigError(f"unknown loss term(s): {sorted(unknown)}")
    used = TERMS if kind == "synthetic" else REAL_TERMS
    out = 0.0
    for k in used:
        wk = getattr(weights, k)
        if wk < 0:
            raise ConfigError(f"negative weight for {k}")
        if k in terms and terms[k] is not None and wk != 0:
            out = ad.add(out, ad.mul(wk, terms[k]))
    return out


# -- metrics -------------------------------------------------------------------

def _check_pair(a, b, what):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape {a.shape} != {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    return a, b


def affine_fit(ref, pred):
    """Per-channel least-squares ``a * pred + b`` matched to ``ref``."""
    ref, pred = _check_pair(ref, pred, "affine_fit")
    out = np.empty_like(pred)
    for c in range(pred.shape[-1]):
        x, y = pred[..., c].ravel(), ref[..., c].ravel()
        xm, ym = x.mean(), y.mean()
        var = np.sum((x - xm) ** 2)
        a = np.sum((x - xm) * (y - ym)) / var if var > 0 else 0.0
        out[..., c] = (a * (pred[..., c] - xm) + ym)
    return out


def metric_psnr(img, img_hat, fit=True):
    """PSNR (peak 1) after a per-channel affine fit of ``img_hat``; capped."""
    ref, pred = _check_pair(img, img_hat, "psnr")
    if fit:
        pred = affine_fit(ref, pred)
    mse = float(np.mean((ref - pred) ** 2))
    if mse <= 10 ** (-PSNR_CAP / 10):
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def metric_ssim(img, img_hat, fit=True, sigma=1.5, k1=0.01, k2=0.03):
    """Mean SSIM with an 11x11 Gaussian window, after the same affine fit."""
    ref, pred = _check_pair(img, img_hat, "ssim")
    if fit:
        pred = affine_fit(ref, pred)
    c1, c2 = k1 ** 2, k2 ** 2
    vals = []
    for c in range(ref.shape[-1]):
        x, y = ref[..., c], pred[..., c]
        f = lambda z: gaussian_filter(z, sigma, truncate=5.0 / sigma, mode="reflect")  # noqa: E731
        mx, my = f(x), f(y)
        sxx = f(x * x) - mx * mx
        syy = f(y * y) - my * my
        sxy = f(x * y) - mx * my
        s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        vals.append(s.mean())
    return float(np.mean(vals))


def _rmse(a, b):
    return float(np.sqrt(np.mean((a - b) ** 2)))


def illum_metrics(gt, pred):
    """(angular error in degrees, RMSE, normalized RMSE, scale-invariant RMSE)
    of two linear equirect maps."""
    gt, pred = _check_pair(gt, pred, "illum_metrics")
    a = gt.reshape(-1, gt.shape[-1])
    b = pred.reshape(-1, pred.shape[-1])
    na, nb = np.linalg.norm(a, axis=-1), np.linalg.norm(b, axis=-1)
    ok = (na > 0) & (nb > 0)
    if np.any(ok):
        cos = np.sum(a[ok] * b[ok], axis=-1) / (na[ok] * nb[ok])
        ang = float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))).mean())
    else:
        ang = 0.0
    rmse = _rmse(gt, pred)
    mg, mp = gt.mean(), pred.mean()
    norm = _rmse(gt / mg if mg > 0 else gt, pred / mp if mp > 0 else pred)
    pp = float(np.sum(pred * pred))
    alpha = float(np.sum(gt * pred)) / pp if pp > 0 else 0.0
    si = _rmse(gt, alpha * pred)
    return ang, rmse, norm, si
