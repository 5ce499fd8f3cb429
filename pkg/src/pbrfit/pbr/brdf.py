"""Disney-style microfacet pieces: Fresnel, GGX distribution, Smith shadowing,
and the sampling helpers shared by the LUT bake, the prefilter and the
Monte-Carlo reference shader.

Roughness ``rho`` maps to the GGX width ``alpha = rho**2``; the Smith term
uses the Schlick form with ``k = alpha / 2``.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad

DIELECTRIC_F0 = 0.04
MIN_ALPHA = 1e-3


def fresnel_f0(albedo, metal):
    """Normal-incidence reflectance: ``(1 - m) * 0.04 + m * a``."""
    return ad.add(ad.mul(ad.sub(1.0, metal), DIELECTRIC_F0), ad.mul(metal, albedo))


def fresnel(f0, rough, cos_theta):
    """Roughness-aware Schlick Fresnel ``F0 + (1 - rho - F0)(1 - cos)^5``,
    clamped to [0, 1]."""
    c = ad.clip(cos_theta, 0.0, 1.0)
    fc = ad.power(ad.sub(1.0, c), 5)
    fr = ad.add(f0, ad.mul(ad.sub(ad.sub(1.0, rough), f0), fc))
    return ad.clip(fr, 0.0, 1.0)


def diffuse_weight(metal, fr):
    """``k_d = (1 - m)(1 - F_r)``."""
    return ad.mul(ad.sub(1.0, metal), ad.sub(1.0, fr))


def schlick_fresnel(f0, v_dot_h):
    return f0 + (1.0 - f0) * (1.0 - np.clip(v_dot_h, 0.0, 1.0)) ** 5


def alpha_of(rough):
    return np.maximum(np.asarray(rough, dtype=float) ** 2, MIN_ALPHA)


def ggx_d(n_dot_h, alpha):
    a2 = alpha * alpha
    t = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0
    return a2 / (np.pi * t * t)


def smith_g1(n_dot_x, alpha):
    k = alpha / 2.0
    return n_dot_x / (n_dot_x * (1.0 - k) + k)


def smith_g(n_dot_v, n_dot_l, alpha):
    return smith_g1(n_dot_v, alpha) * smith_g1(n_dot_l, alpha)


def radical_inverse(bits):
    bits = np.asarray(bits, dtype=np.uint64) & np.uint64(0xFFFFFFFF)
    bits = ((bits << np.uint64(16)) | (bits >> np.uint64(16))) & np.uint64(0xFFFFFFFF)
    bits = ((bits & np.uint64(0x55555555)) << np.uint64(1)) | ((bits & np.uint64(0xAAAAAAAA)) >> np.uint64(1))
    bits = ((bits & np.uint64(0x33333333)) << np.uint64(2)) | ((bits & np.uint64(0xCCCCCCCC)) >> np.uint64(2))
    bits = ((bits & np.uint64(0x0F0F0F0F)) << np.uint64(4)) | ((bits & np.uint64(0xF0F0F0F0)) >> np.uint64(4))
    bits = ((bits & np.uint64(0x00FF00FF)) << np.uint64(8)) | ((bits & np.uint64(0xFF00FF00)) >> np.uint64(8))
    return bits.astype(np.float64) * 2.3283064365386963e-10


def hammersley(n):
    """``(n, 2)`` Hammersley point set on the unit square."""
    i = np.arange(n)
    return np.stack([(i + 0.5) / n, radical_inverse(i)], axis=-1)


def ggx_half_vectors(xi, alpha):
    """Tangent-space GGX half vectors from uniform ``xi (..., 2)``."""
    alpha = np.asarray(alpha)
    phi = 2.0 * np.pi * xi[..., 0]
    e = xi[..., 1]
    cos_t = np.sqrt((1.0 - e) / (1.0 + (alpha * alpha - 1.0) * e))
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    return np.stack([np.cos(phi) * sin_t, np.sin(phi) * sin_t, cos_t], axis=-1)


def cosine_directions(xi):
    """Tangent-space cosine-weighted hemisphere directions."""
    r = np.sqrt(xi[..., 0])
    phi = 2.0 * np.pi * xi[..., 1]
    return np.stack([r * np.cos(phi), r * np.sin(phi),
                     np.sqrt(np.maximum(0.0, 1.0 - xi[..., 0]))], axis=-1)


def tangent_frame(n):
    """Orthonormal ``(t, b)`` completing unit normals ``n (..., 3)``."""
    n = np.asarray(n, dtype=float)
    sign = np.where(n[..., 2] >= 0, 1.0, -1.0)
    a = -1.0 / (sign + n[..., 2])
    b = n[..., 0] * n[..., 1] * a
    t = np.stack([1.0 + sign * n[..., 0] ** 2 * a, sign * b, -sign * n[..., 0]], axis=-1)
    bt = np.stack([b, sign + n[..., 1] ** 2 * a, -n[..., 1]], axis=-1)
    return t, bt


def to_world(local, n):
    """Rotate tangent-space vectors ``(..., K, 3)`` into the frame of
    ``n (..., 3)``."""
    t, b = tangent_frame(n)
    return (local[..., 0:1] * t[..., None, :] + local[..., 1:2] * b[..., None, :]
            + local[..., 2:3] * np.asarray(n)[..., None, :])


def reflect(w_o, n):
    """Mirror ``w_o`` (pointing away from the surface) about ``n``."""
    return ad.sub(ad.mul(ad.mul(2.0, ad.dot_last(w_o, n, keepdims=True)), n), w_o)


def specular_dominant_dir(n, r, rough):
    """Bend the mirror direction toward the normal as the lobe widens
    (off-specular peak of rough GGX lobes)."""
    alpha = ad.mul(rough, rough)
    t = ad.mul(ad.sub(1.0, alpha), ad.add(ad.sqrt(ad.sub(1.0, alpha) + 1e-12), alpha))
    return ad.normalize(ad.add(ad.mul(ad.sub(1.0, t), n), ad.mul(t, r)))
