"""Emission-absorption rendering of material fields.

A view is rendered in two stages.  Marching accumulates density-weighted
albedo, metalness, roughness and normals along every pixel ray (the
G-buffers), together with expected depth and opacity.  Shading then runs
once per pixel on the accumulated buffers (deferred shading) and the result
is composited over the environment seen along the ray.

Camera frame: x right, y up, z forward (the world uses the same
handedness).  Pixel ``(row i, col j)`` looks along
``((j + .5 - cx) / fx, -(i + .5 - cy) / fy, 1)`` in camera coordinates.
Buffers are ``(H, W, C)`` images; ``mask``, ``depth``, ``metal`` and
``rough`` keep a trailing axis of one.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError
from .imageio import write_pfm, write_png
from .pbr.cubemap import Cubemap, sample_faces
from .pbr.shade import SurfacePoint, shade_splitsum, tonemap_srgb
from .volfield import Interpolator, decode_channels, spatial_gradient_sigma

DEPTH_EPS = 1e-6
COMPOSITE_ORDERS = ("linear", "tonemap-first")


# -- cameras -------------------------------------------------------------------

@dataclass
class Camera:
    """Pinhole camera with a world-from-camera pose."""

    rotation: np.ndarray
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        r = self.rotation
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(self.translation))):
            raise ConfigError("camera pose must be finite")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6) or np.linalg.det(r) <= 0:
            raise ConfigError("camera rotation must be orthonormal with det = +1")
        intr = np.array([self.fx, self.fy, self.cx, self.cy], dtype=float)
        if not np.all(np.isfinite(intr)) or self.fx <= 0 or self.fy <= 0:
            raise ConfigError(f"degenerate intrinsics fx={self.fx}, fy={self.fy}")
        if int(self.width) < 1 or int(self.height) < 1:
            raise ConfigError(f"bad image size {self.width}x{self.height}")
        self.width, self.height = int(self.width), int(self.height)

    @classmethod
    def look_at(cls, eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0),
                fov_deg=40.0, width=64, height=None):
        """Camera at ``eye`` looking at ``target`` with vertical field of
        view ``fov_deg`` and the principal point at the image centre."""
        height = width if height is None else height
        eye = np.asarray(eye, dtype=float)
        z = np.asarray(target, dtype=float) - eye
        if np.linalg.norm(z) == 0:
            raise ConfigError("eye and target coincide")
        z /= np.linalg.norm(z)
        x = np.cross(np.asarray(up, dtype=float), z)
        if np.linalg.norm(x) < 1e-9:
            # looking along the up vector; pick any perpendicular
            x = np.cross([1.0, 0.0, 0.0] if abs(z[0]) < 0.9 else [0.0, 0.0, 1.0], z)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        f = 0.5 * height / np.tan(np.radians(fov_deg) / 2)
        return cls(np.stack([x, y, z], axis=1), eye, f, f, width / 2, height / 2,
                   width, height)

    @property
    def center(self):
        return self.translation

    def matrix34(self):
        return np.hstack([self.rotation, self.translation[:, None]])

    def to_dict(self):
        return {"world_from_camera": self.matrix34().tolist(),
                "fx": float(self.fx), "fy": float(self.fy),
                "cx": float(self.cx), "cy": float(self.cy),
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        try:
            m = np.asarray(d["world_from_camera"], dtype=float)
            return cls(m[:, :3], m[:, 3], d["fx"], d["fy"], d["cx"], d["cy"],
                       d["width"], d["height"])
        except (KeyError, IndexError, TypeError) as e:
            raise ConfigError(f"malformed camera record: {e}") from e


def generate_rays(cam: Camera):
    """Per-pixel ``(origins, directions)``, each ``(H*W, 3)`` in row-major
    pixel order; directions are unit length in the world frame."""
    j, i = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
    d = np.stack([(j.ravel() + 0.5 - cam.cx) / cam.fx,
                  -(i.ravel() + 0.5 - cam.cy) / cam.fy,
                  np.ones(i.size)], axis=-1)
    d = d @ cam.rotation.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(cam.translation, d.shape).copy()
    return o, d


def ray_box(origins, dirs, bounds):
    """Slab intersection; returns entry and exit distances (exit < entry
    where the ray misses)."""
    lo, hi = np.asarray(bounds[0], dtype=float), np.asarray(bounds[1], dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        a = (lo - origins) * inv
        b = (hi - origins) * inv
    par = dirs == 0
    inside = (origins >= lo) & (origins <= hi)
    a = np.where(par, np.where(inside, -np.inf, np.inf), a)
    b = np.where(par, np.inf, b)          # outside and parallel: both +inf -> miss
    t0 = np.max(np.minimum(a, b), axis=-1)
    t1 = np.min(np.maximum(a, b), axis=-1)
    return t0, t1


# -- marching ------------------------------------------------------------------

@dataclass
class MarchConfig:
    """``n_samples`` uniform samples between the entry and exit of the field
    bounds, clipped to ``[near, far]``; ``jitter`` draws one stratified
    offset per sample from ``seed``."""

    n_samples: int = 64
    near: float = 0.0
    far: float = 100.0
    jitter: bool = False
    seed: int = 0

    def __post_init__(self):
        if int(self.n_samples) < 2:
            raise ConfigError(f"n_samples must be >= 2, got {self.n_samples}")
        if not self.near < self.far:
            raise ConfigError(f"near ({self.near}) must be < far ({self.far})")
        self.n_samples = int(self.n_samples)


class RaySamples:
    """Sample layout of a ray bundle: only rays meeting the bounds are kept.

    ``t`` is ``(R, N)``, ``delta`` ``(R, 1)`` and ``points`` ``(R*N, 3)`` for
    the ``R`` hit rays; ``index`` lists their positions in the bundle.
    """

    def __init__(self, origins, dirs, bounds, cfg: MarchConfig, dtype=np.float64):
        origins = np.atleast_2d(np.asarray(origins, dtype=float))
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        t0, t1 = ray_box(origins, dirs, bounds)
        t0 = np.maximum(t0, cfg.near)
        t1 = np.minimum(t1, cfg.far)
        hit = t1 > t0
        self.index = np.flatnonzero(hit)
        self.n_rays = len(origins)
        self.dirs = dirs
        n = cfg.n_samples
        span = (t1 - t0)[hit]
        delta = span / n
        if cfg.jitter:
            rng = np.random.default_rng(cfg.seed)
            u = np.arange(n) + rng.random((len(span), n))
        else:
            u = np.broadcast_to(np.arange(n) + 0.5, (len(span), n))
        t = t0[hit, None] + u * delta[:, None]
        pts = origins[hit, None, :] + t[..., None] * dirs[hit, None, :]
        lo, hi = np.asarray(bounds[0]), np.asarray(bounds[1])
        self.points = np.clip(pts.reshape(-1, 3), lo, hi)
        self.t = t.astype(dtype)
        self.delta = delta[:, None].astype(dtype)
        self.n_samples = n
        self.bounds = bounds
        self.gather = np.full(self.n_rays, len(self.index))
        self.gather[self.index] = np.arange(len(self.index))
        self.interp = None

    @property
    def n_hit(self):
        return len(self.index)

    def attach_lattice(self, shape, dtype=np.float64):
        """Precompute the interpolation operator for a lattice field."""
        if self.n_hit:
            self.interp = Interpolator(self.points, shape, self.bounds).astype(dtype)
        return self

    def scatter(self, x, width):
        """Place per-hit-ray rows back into the full bundle (zeros on misses)."""
        pad = np.zeros((1, width), dtype=ad.value(x).dtype)
        return ad.take_rows(ad.concatenate([x, pad], axis=0), self.gather)


def field_channels(fld, points, params=None, interp=None):
    """Activated channels of ``fld`` at ``points``.

    Analytic fields expose ``channels_at``; parametric fields are decoded
    through the cached interpolator when one is given.
    """
    if hasattr(fld, "channels_at"):
        return fld.channels_at(points)
    if interp is not None and hasattr(fld, "decode_lattice"):
        raw = fld.decode_lattice(interp, params)
    else:
        raw = fld.decode(points, params)
    return decode_channels(raw)


def ea_weights(sigma, delta):
    """``w_k = alpha_k prod_{j<k}(1 - alpha_j)`` with ``alpha = 1 - exp(-sigma delta)``,
    for ``sigma (R, N)`` and ``delta (R, 1)``."""
    tau = ad.mul(sigma, delta)
    before = ad.sub(ad.cumsum(tau, axis=-1), tau)
    return ad.mul(ad.exp(ad.neg(before)), ad.sub(1.0, ad.exp(ad.neg(tau))))


def _march(fld, rs: RaySamples, params=None):
    """Accumulated buffers for the hit rays of ``rs`` (rows per hit ray)."""
    r, n = rs.n_hit, rs.n_samples
    ch = field_channels(fld, rs.points, params, rs.interp)
    w = ea_weights(ad.reshape(ch.sigma, (r, n)), rs.delta)
    w3 = ad.reshape(w, (r, n, 1))

    def acc(x, c):
        return ad.sum(ad.mul(w3, ad.reshape(x, (r, n, c))), axis=1)

    alpha = ad.sum(w, axis=1, keepdims=True)
    depth = ad.div(ad.sum(ad.mul(w, rs.t), axis=1, keepdims=True),
                   ad.maximum(alpha, DEPTH_EPS))
    return {"albedo": acc(ch.albedo, 3), "metal": acc(ch.metal, 1),
            "rough": acc(ch.rough, 1), "normal": acc(ch.normal, 3),
            "depth": depth, "alpha": alpha, "weights": w, "channels": ch}


def march_ray(fld, origin, direction, cfg: MarchConfig = None, params=None):
    """Accumulate one ray; returns a dict of channel sums, depth and alpha
    (all zero when the ray misses the bounds)."""
    cfg = cfg or MarchConfig()
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    rs = RaySamples(np.asarray(origin, dtype=float)[None], d[None], fld.bounds, cfg)
    if rs.n_hit == 0:
        z = {k: np.zeros(c) for k, c in
             (("albedo", 3), ("metal", 1), ("rough", 1), ("normal", 3))}
        return dict(z, depth=np.zeros(1), alpha=np.zeros(1))
    out = _march(fld, rs, params)
    return {k: out[k][0] for k in ("albedo", "metal", "rough", "normal", "depth", "alpha")}


# -- buffers ---------------------------------------------------------------------

BUFFER_NAMES = ("shaded", "albedo", "metal", "rough", "normal", "depth", "mask", "composite")


@dataclass
class RenderBuffers:
    """Per-view images, ``(H, W, C)`` ndarrays or autodiff Vars.

    Material buffers are opacity-weighted sums along the ray; ``normal`` is
    renormalized after accumulation (zero where nothing was hit).
    """

    albedo: object
    metal: object
    rough: object
    normal: object
    depth: object
    mask: object
    shaded: object = None
    composite: object = None
    extras: dict = dc_field(default_factory=dict)

    @property
    def shape(self):
        return ad.value(self.mask).shape[:2]

    def numpy(self):
        """Detached copy with plain arrays."""
        vals = {k: (None if getattr(self, k) is None else np.array(ad.value(getattr(self, k))))
                for k in BUFFER_NAMES}
        return RenderBuffers(**vals)


def render_view(fld, cam: Camera, cfg: MarchConfig = None, params=None,
                samples: RaySamples = None) -> RenderBuffers:
    """G-buffers of ``fld`` seen from ``cam``.  ``params`` substitutes the
    field parameters (e.g. autodiff leaves); ``samples`` reuses a
    precomputed ray layout for this camera."""
    cfg = cfg or MarchConfig()
    if samples is None:
        o, d = generate_rays(cam)
        samples = RaySamples(o, d, fld.bounds, cfg)
    h, w = cam.height, cam.width
    if samples.n_hit == 0:
        z = lambda c: np.zeros((h, w, c))  # noqa: E731
        return RenderBuffers(z(3), z(1), z(1), z(3), z(1), z(1))
    out = _march(fld, samples, params)

    def img(x, c):
        return ad.reshape(samples.scatter(x, c), (h, w, c))

    return RenderBuffers(
        albedo=img(out["albedo"], 3), metal=img(out["metal"], 1),
        rough=img(out["rough"], 1), normal=img(ad.normalize(out["normal"]), 3),
        depth=img(out["depth"], 1), mask=img(out["alpha"], 1))


def pseudo_normals(fld, cam: Camera, depth, mask, threshold=0.5):
    """Unit outward normals ``-grad sigma / |grad sigma|`` at the expected
    surface point of each foreground pixel; zero vectors elsewhere."""
    depth = np.asarray(ad.value(depth), dtype=float).reshape(-1)
    mask = np.asarray(ad.value(mask), dtype=float).reshape(-1)
    o, d = generate_rays(cam)
    out = np.zeros_like(d)
    fg = np.flatnonzero(mask > threshold)
    if len(fg):
        lo, hi = np.asarray(fld.bounds[0], float), np.asarray(fld.bounds[1], float)
        pad = 1e-6 * (hi - lo)
        p = np.clip(o[fg] + depth[fg, None] * d[fg], lo + pad, hi - pad)
        if hasattr(fld, "density_gradient"):
            g = fld.density_gradient(p)
        else:
            g = spatial_gradient_sigma(fld, p)
        norm = np.linalg.norm(g, axis=-1, keepdims=True)
        out[fg] = np.where(norm > 0, -g / np.maximum(norm, 1e-300), 0.0)
    return out.reshape(cam.height, cam.width, 3)


def _unpremultiply(x, alpha, eps):
    return ad.clip(ad.div(x, ad.maximum(alpha, eps)), 0.0, 1.0)


def shade_buffers(bufs: RenderBuffers, env, lut, cam: Camera, eps=DEPTH_EPS):
    """Deferred split-sum shading of accumulated G-buffers.

    Materials are un-premultiplied by the opacity before shading so partly
    transparent pixels shade like their surface; the view direction is the
    reversed pixel ray.  Pixels with opacity below ``eps`` get zero radiance.
    """
    h, w = bufs.shape
    p = h * w
    _, d = generate_rays(cam)
    alpha = ad.reshape(bufs.mask, (p, 1))
    fg = np.flatnonzero(ad.value(alpha)[:, 0] > eps)
    if len(fg) == 0:
        return np.zeros((h, w, 3))

    def rows(x, c):
        return ad.take_rows(ad.reshape(x, (p, c)), fg)

    a_fg = rows(bufs.mask, 1)
    sp = SurfacePoint(albedo=_unpremultiply(rows(bufs.albedo, 3), a_fg, eps),
                      metal=_unpremultiply(rows(bufs.metal, 1), a_fg, eps),
                      rough=_unpremultiply(rows(bufs.rough, 1), a_fg, eps),
                      normal=ad.normalize(rows(bufs.normal, 3)), view=-d[fg])
    rad = shade_splitsum(sp, env, lut, check=False)
    gather = np.full(p, len(fg))
    gather[fg] = np.arange(len(fg))
    pad = np.zeros((1, 3), dtype=ad.value(rad).dtype)
    full = ad.take_rows(ad.concatenate([rad, pad], axis=0), gather)
    return ad.reshape(full, (h, w, 3))


def forward_shade(fld, cam: Camera, env, lut, cfg: MarchConfig = None):
    """Shade every ray sample and accumulate the radiance (the per-sample
    alternative to deferred shading).  Returns premultiplied radiance."""
    cfg = cfg or MarchConfig()
    o, d = generate_rays(cam)
    rs = RaySamples(o, d, fld.bounds, cfg)
    out = np.zeros((rs.n_rays, 3))
    if rs.n_hit:
        m = _march(fld, rs)
        ch, w = m["channels"], ad.value(m["weights"])
        view = -np.repeat(d[rs.index], rs.n_samples, axis=0)
        sp = SurfacePoint(ad.value(ch.albedo), ad.value(ch.metal), ad.value(ch.rough),
                          ad.value(ch.normal), view)
        rad = shade_splitsum(sp, env, lut, check=False).reshape(rs.n_hit, rs.n_samples, 3)
        out[rs.index] = np.sum(w[..., None] * rad, axis=1)
    return out.reshape(cam.height, cam.width, 3)


def background(cam: Camera, faces):
    """Environment radiance seen along every pixel ray, ``(H, W, 3)``."""
    if isinstance(faces, Cubemap):
        faces = faces.faces
    _, d = generate_rays(cam)
    return ad.reshape(sample_faces(faces, d), (cam.height, cam.width, 3))


def composite_background(shaded, mask, cam: Camera, faces, order="linear"):
    """Blend the shaded foreground over the environment and tone-map.

    ``linear`` tone-maps ``M I + (1 - M) bg``; ``tonemap-first`` blends the
    separately tone-mapped foreground and background.
    """
    if order not in COMPOSITE_ORDERS:
        raise ConfigError(f"composite order must be one of {COMPOSITE_ORDERS}")
    bg = background(cam, faces)
    inv = ad.sub(1.0, mask)
    if order == "linear":
        return tonemap_srgb(ad.add(ad.mul(mask, shaded), ad.mul(inv, bg)))
    return ad.add(ad.mul(mask, tonemap_srgb(shaded)), ad.mul(inv, tonemap_srgb(bg)))


def render_shaded(fld, cam: Camera, env, lut, faces, cfg: MarchConfig = None,
                  params=None, samples=None, order="linear") -> RenderBuffers:
    """G-buffers plus deferred shading and background composite."""
    bufs = render_view(fld, cam, cfg, params, samples)
    bufs.shaded = shade_buffers(bufs, env, lut, cam)
    bufs.composite = composite_background(bufs.shaded, bufs.mask, cam, faces, order)
    return bufs


def write_buffers(bufs: RenderBuffers, directory, view):
    """Write ``<view>_<buffer>.{pfm|png}``: float channels as PFM, the
    mask and the tone-mapped composite as PNG.  Returns the written paths."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for name in BUFFER_NAMES:
        x = getattr(bufs, name)
        if x is None:
            continue
        x = np.asarray(ad.value(x))
        png = name in ("mask", "composite")
        path = os.path.join(directory, f"{view}_{name}.{'png' if png else 'pfm'}")
        (write_png if png else write_pfm)(path, x)
        paths.append(path)
    return paths
