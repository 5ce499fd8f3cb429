"""Split-sum image-based shading, its Monte-Carlo reference, and tone mapping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from . import brdf
from .cubemap import Cubemap, sample_faces
from .lut import SplitSumLUT
from .prefilter import PrefilteredEnvironment

UNIT_TOL = 1e-3


@dataclass
class SurfacePoint:
    """Shading inputs for ``N`` points; ``view`` points from the surface to
    the camera.  Scalars per point are stored as ``(N, 1)``."""

    albedo: object
    metal: object
    rough: object
    normal: object
    view: object

    def __post_init__(self):
        def col(x, width):
            if ad.is_var(x):
                return x
            x = np.asarray(x, dtype=float)
            x = np.atleast_1d(x)
            if width == 1 and x.ndim == 1:
                x = x[:, None]
            return np.atleast_2d(x)

        self.albedo = col(self.albedo, 3)
        self.metal = col(self.metal, 1)
        self.rough = col(self.rough, 1)
        self.normal = col(self.normal, 3)
        self.view = col(self.view, 3)

    def __len__(self):
        return ad.value(self.normal).shape[0]


def _check_unit(name, x):
    norms = np.linalg.norm(ad.value(x), axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise ValueError(f"{name} must be unit length (max deviation "
                         f"{np.max(np.abs(norms - 1.0)):.2e})")


SPECULAR_FRESNEL = ("roughness", "base")


def shade_splitsum(sp: SurfacePoint, env: PrefilteredEnvironment, lut: SplitSumLUT,
                   check=True, fresnel_term="roughness"):
    """Outgoing radiance ``k_d a L_d(n) + (F F1 + F2) L_s(reflect, rho)``.

    ``F`` is the roughness-aware Fresnel ``F_r`` by default; ``fresnel_term=
    "base"`` uses ``F0`` instead, the form the LUT integrals are derived for,
    which is exact in the mirror limit.  ``L_d`` already contains the ``1/pi``
    of the diffuse lobe.  Differentiable w.r.t. every SurfacePoint field and
    the environment arrays.
    """
    if fresnel_term not in SPECULAR_FRESNEL:
        raise ValueError(f"fresnel_term must be one of {SPECULAR_FRESNEL}")
    if check:
        _check_unit("normal", sp.normal)
        _check_unit("view direction", sp.view)
    n, v = sp.normal, sp.view
    cos_v = ad.clip(ad.dot_last(n, v, keepdims=True), 0.0, 1.0)
    f0 = brdf.fresnel_f0(sp.albedo, sp.metal)
    fr = brdf.fresnel(f0, sp.rough, cos_v)
    kd = brdf.diffuse_weight(sp.metal, fr)
    r = brdf.specular_dominant_dir(n, brdf.reflect(v, n), sp.rough)
    diffuse = ad.mul(ad.mul(kd, sp.albedo), env.sample_diffuse(n))
    f1, f2 = lut.lookup(cos_v, sp.rough)
    fs = fr if fresnel_term == "roughness" else f0
    spec = ad.mul(ad.add(ad.mul(fs, f1), f2), env.sample_specular(r, sp.rough))
    return ad.add(diffuse, spec)


def shade_reference_mc(sp: SurfacePoint, c, samples=4096, seed=0, lobes="both",
                       chunk_elems=1 << 19):
    """Monte-Carlo estimate of the reflectance integral under cubemap ``c``.

    Half the samples are cosine-distributed, half follow the GGX lobe; each
    sample is weighted by the mixture density (balance heuristic), so the
    estimator is unbiased.  ``lobes`` selects "both", "diffuse" or
    "specular".  The diffuse lobe uses the same constant ``k_d`` as the
    split-sum shader.
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    faces = c.faces if isinstance(c, Cubemap) else np.asarray(c)
    rng = np.random.default_rng(seed)
    a = ad.value(sp.albedo)
    m = ad.value(sp.metal)
    rho = ad.value(sp.rough)
    n_all = ad.value(sp.normal)
    v_all = ad.value(sp.view)
    if lobes == "both":
        n_cos = samples // 2
    elif lobes == "diffuse":
        n_cos = samples
    elif lobes == "specular":
        n_cos = 0
    else:
        raise ValueError(f"unknown lobe selection {lobes!r}")
    n_ggx = samples - n_cos
    out = np.zeros((len(n_all), 3))
    step = max(1, chunk_elems // samples)
    for s in range(0, len(n_all), step):
        sl = slice(s, s + step)
        n, v = n_all[sl], v_all[sl]
        p = len(n)
        alpha = brdf.alpha_of(rho[sl])[:, :, None] * np.ones((1, 1, 1))  # (p,1,1)
        cos_v = np.clip(np.sum(n * v, axis=-1), 1e-4, 1.0)[:, None]       # (p,1)
        f0 = brdf.fresnel_f0(a[sl], m[sl])
        kd = brdf.diffuse_weight(m[sl], brdf.fresnel(f0, rho[sl], cos_v))
        dirs = []
        if n_cos:
            dirs.append(brdf.to_world(brdf.cosine_directions(rng.random((p, n_cos, 2))), n))
        if n_ggx:
            h_loc = brdf.ggx_half_vectors(rng.random((p, n_ggx, 2)), alpha[:, :, 0])
            h = brdf.to_world(h_loc, n)
            vh = np.sum(h * v[:, None, :], axis=-1, keepdims=True)
            dirs.append(2.0 * vh * h - v[:, None, :])
        wi = np.concatenate(dirs, axis=1)                                 # (p,N,3)
        n_dot_l = np.sum(wi * n[:, None, :], axis=-1)
        ok = n_dot_l > 1e-8
        hv = wi + v[:, None, :]
        hv /= np.maximum(np.linalg.norm(hv, axis=-1, keepdims=True), 1e-12)
        n_dot_h = np.clip(np.sum(hv * n[:, None, :], axis=-1), 0.0, 1.0)
        v_dot_h = np.clip(np.sum(hv * v[:, None, :], axis=-1), 1e-8, 1.0)
        al = alpha[:, :, 0]
        d = brdf.ggx_d(n_dot_h, al)
        pdf = (n_cos / samples) * np.maximum(n_dot_l, 0.0) / np.pi
        pdf = pdf + (n_ggx / samples) * d * n_dot_h / (4.0 * v_dot_h)
        f_cos = np.zeros((p, samples, 3))
        if lobes in ("both", "diffuse"):
            f_cos += (kd * a[sl])[:, None, :] / np.pi * n_dot_l[..., None]
        if lobes in ("both", "specular"):
            g = brdf.smith_g(cos_v, np.maximum(n_dot_l, 0.0), al)
            fres = brdf.schlick_fresnel(f0[:, None, :], v_dot_h[..., None])
            f_cos += (d * g / (4.0 * cos_v))[..., None] * fres
        radiance = sample_faces(faces, wi.reshape(-1, 3)).reshape(p, samples, -1)
        contrib = np.where(ok[..., None], f_cos * radiance / np.maximum(pdf, 1e-300)[..., None], 0.0)
        out[sl] = contrib.mean(axis=1)
    return out


SRGB_KNEE = 0.0031308


def tonemap_srgb(x):
    """Clamp to [0, 1] and apply the sRGB transfer curve (differentiable a.e.)."""
    xc = ad.clip(x, 0.0, 1.0)
    lin = ad.mul(xc, 12.92)
    safe = ad.maximum(xc, SRGB_KNEE)
    gam = ad.sub(ad.mul(ad.power(safe, 1.0 / 2.4), 1.055), 0.055)
    return ad.where(ad.value(xc) <= SRGB_KNEE, lin, gam)


def inverse_tonemap_srgb(y):
    y = np.clip(np.asarray(y, dtype=float), 0.0, 1.0)
    return np.where(y <= 0.04045, y / 12.92, ((y + 0.055) / 1.055) ** 2.4)
