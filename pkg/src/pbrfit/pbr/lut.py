"""Split-sum BRDF integration table (F1, F2) over (cos theta, roughness)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from . import brdf


@dataclass
class SplitSumLUT:
    """``table[i, j] = (F1, F2)`` at ``cos = (i + .5) / T``, ``rho = (j + .5) / T``."""

    table: np.ndarray

    @property
    def resolution(self) -> int:
        return self.table.shape[0]

    def lookup(self, cos_theta, rough):
        """Bilinear (clamp-to-edge) lookup, differentiable in both coords.

        Returns ``(F1, F2)`` shaped like the inputs.
        """
        t = self.resolution
        x = ad.clip(ad.mul(cos_theta, t) - 0.5, 0.0, t - 1.0)
        y = ad.clip(ad.mul(rough, t) - 0.5, 0.0, t - 1.0)
        i0 = np.minimum(np.floor(ad.value(x)).astype(np.int64), t - 2)
        j0 = np.minimum(np.floor(ad.value(y)).astype(np.int64), t - 2)
        fx, fy = x - i0, y - j0
        rows = self.table.reshape(t * t, 2)
        base = i0 * t + j0
        w00 = (1.0 - fx) * (1.0 - fy)
        w01 = (1.0 - fx) * fy
        w10 = fx * (1.0 - fy)
        w11 = fx * fy
        out = []
        for k in (0, 1):
            col = rows[:, k]
            out.append(w00 * col[base] + w01 * col[base + 1]
                       + w10 * col[base + t] + w11 * col[base + t + 1])
        return out[0], out[1]


def integrate_brdf(cos_v, rough, xi):
    """Split-sum integrals for arrays of ``cos_v``, ``rough`` with sample set
    ``xi (..., N, 2)``; returns (F1, F2)."""
    cos_v = np.asarray(cos_v, dtype=float)[..., None]
    alpha = brdf.alpha_of(rough)[..., None]
    v = np.stack([np.sqrt(np.maximum(0.0, 1.0 - cos_v ** 2)),
                  np.zeros_like(cos_v), cos_v], axis=-1)
    h = brdf.ggx_half_vectors(xi, alpha)
    v_dot_h = np.sum(v * h, axis=-1)
    l_z = 2.0 * v_dot_h * h[..., 2] - v[..., 2]
    n_dot_h = h[..., 2]
    ok = l_z > 0
    n_dot_l = np.where(ok, l_z, 0.0)
    g = brdf.smith_g(cos_v, n_dot_l, alpha)
    g_vis = np.where(ok, g * np.maximum(v_dot_h, 0.0) / np.maximum(n_dot_h * cos_v, 1e-12), 0.0)
    fc = (1.0 - np.clip(v_dot_h, 0.0, 1.0)) ** 5
    return np.mean(g_vis * (1.0 - fc), axis=-1), np.mean(g_vis * fc, axis=-1)


def bake_lut(resolution=64, samples=1024, seed=0) -> SplitSumLUT:
    """Integrate F1, F2 with GGX importance sampling (Hammersley points,
    one seeded Cranley-Patterson rotation per table row)."""
    if resolution < 16:
        raise ValueError("LUT resolution must be >= 16")
    if samples < 1024:
        raise ValueError("LUT bake needs >= 1024 samples")
    t = resolution
    base = brdf.hammersley(samples)
    rng = np.random.default_rng(seed)
    table = np.empty((t, t, 2))
    centers = (np.arange(t) + 0.5) / t
    for i in range(t):
        shift = rng.random(2)
        xi = np.mod(base + shift, 1.0)
        f1, f2 = integrate_brdf(np.full(t, centers[i]), centers, xi[None])
        table[i, :, 0] = f1
        table[i, :, 1] = f2
    return SplitSumLUT(table)


def write_lut(lut: SplitSumLUT, path):
    """Cache a LUT as an RGB PFM holding (F1, F2, 0)."""
    from ..imageio import write_pfm

    t = lut.table
    write_pfm(path, np.concatenate([t, np.zeros(t.shape[:2] + (1,))], axis=-1))


def read_lut(path) -> SplitSumLUT:
    from ..errors import DataIOError
    from ..imageio import read_pfm

    img = read_pfm(path)
    if img.ndim != 3 or img.shape[0] != img.shape[1] or img.shape[0] < 2:
        raise DataIOError(f"{path}: LUT must be a square RGB PFM")
    return SplitSumLUT(img[..., :2].astype(np.float64))
