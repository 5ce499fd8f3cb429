"""Shared test utilities: finite-difference gradient checks and small scenes."""

import numpy as np

from pbrfit import autodiff as ad
from pbrfit import volrender as vr

LUM = np.array([0.2126, 0.7152, 0.0722])


def directional_check(fn, params, rng, h=1e-6):
    """Relative error between the tape's directional derivative of the
    scalar ``fn(params)`` along a random direction and a central difference.

    ``params`` maps names to float64 arrays; ``fn`` must accept either
    arrays or autodiff leaves under the same names.
    """
    leaves = {k: ad.Var(np.array(v, dtype=float)) for k, v in params.items()}
    out = fn(leaves)
    ad.backward(out)
    u = {k: rng.standard_normal(np.shape(v)) for k, v in params.items()}
    analytic = sum(float(np.sum(x.grad * u[k])) for k, x in leaves.items() if x.grad is not None)
    plus = float(ad.value(fn({k: v + h * u[k] for k, v in params.items()})))
    minus = float(ad.value(fn({k: v - h * u[k] for k, v in params.items()})))
    numeric = (plus - minus) / (2 * h)
    return abs(analytic - numeric) / (max(abs(analytic), abs(numeric)) + 1e-8)


def weighted_sum(rng, *shapes):
    """Random linear functionals for turning tensors into a scalar."""
    return [rng.standard_normal(s) for s in shapes]


def small_camera(res=6, eye=(0.3, 0.4, -2.5)):
    return vr.Camera.look_at(eye, fov_deg=45.0, width=res)


def sphere_points_normals(cam, radius):
    """Analytic first hits of the camera rays on a centred sphere."""
    o, d = vr.generate_rays(cam)
    b = np.sum(o * d, axis=1)
    c = np.sum(o * o, axis=1) - radius ** 2
    disc = b * b - c
    hit = disc > 0
    t = -b - np.sqrt(np.maximum(disc, 0.0))
    p = o + t[:, None] * d
    return p.reshape(cam.height, cam.width, 3), hit.reshape(cam.height, cam.width)


def angular_deg(a, b):
    cos = np.sum(a * b, axis=-1) / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
