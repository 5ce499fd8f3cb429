"""Cubemaps: face convention, differentiable bilinear lookup, equirect I/O.

Faces are stored as one array ``faces[f, row, col, rgb]`` with ``f`` in the
order +X, -X, +Y, -Y, +Z, -Z.  With ``u = (col + 0.5) / S``,
``v = (row + 0.5) / S``, ``sc = 2u - 1`` and ``tc = 2v - 1`` a texel looks
along (before normalization)::

    +X  ( 1,  -tc, -sc)        -X  (-1,  -tc,  sc)
    +Y  ( sc,  1,   tc)        -Y  ( sc, -1,  -tc)
    +Z  ( sc, -tc,  1 )        -Z  (-sc, -tc, -1 )

so row 0 of every side face is the top (+y) edge.

Equirectangular images span polar angle theta in [0, pi] from +y down the
rows and longitude phi in [-pi, pi) across the columns, with
``dir = (sin(theta) sin(phi), cos(theta), sin(theta) cos(phi))``; the centre
column looks along +z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..errors import NonFiniteError, ShapeError

FACE_NAMES = ("px", "nx", "py", "ny", "pz", "nz")

# per face: (major axis, major sign, sc axis, sc sign, tc axis, tc sign)
_FACE_TABLE = np.array([
    (0, +1, 2, -1, 1, -1),
    (0, -1, 2, +1, 1, -1),
    (1, +1, 0, +1, 2, +1),
    (1, -1, 0, +1, 2, -1),
    (2, +1, 0, +1, 1, -1),
    (2, -1, 0, -1, 1, -1),
])


@dataclass
class Cubemap:
    """Six square HDR faces of linear radiance, ``(6, S, S, 3)``."""

    faces: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.faces)
        if f.ndim != 4 or f.shape[0] != 6 or f.shape[1] != f.shape[2]:
            raise ShapeError(f"cubemap faces must be (6, S, S, C), got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise NonFiniteError("cubemap texels must be finite")
        if np.any(f < 0):
            raise ValueError("cubemap texels must be non-negative")
        self.faces = f

    @property
    def size(self) -> int:
        return self.faces.shape[1]

    @classmethod
    def constant(cls, size, rgb):
        return cls(np.broadcast_to(np.asarray(rgb, dtype=float), (6, size, size, 3)).copy())

    @classmethod
    def from_function(cls, size, fn, supersample=1):
        """Evaluate ``fn(dirs (N, 3)) -> (N, 3)`` over texel directions."""
        dirs = texel_directions(size, supersample)
        vals = fn(dirs.reshape(-1, 3)).reshape(dirs.shape[:-1] + (3,))
        if supersample > 1:
            vals = vals.mean(axis=-2)
        return cls(np.maximum(vals, 0.0))


def face_uv_to_dir(face, u, v):
    """Unnormalized direction for face index arrays and ``u, v`` in [0, 1]."""
    sc = 2.0 * np.asarray(u) - 1.0
    tc = 2.0 * np.asarray(v) - 1.0
    face = np.asarray(face)
    out = np.zeros(np.broadcast(face, sc, tc).shape + (3,))
    t = _FACE_TABLE[face]
    onehot = np.eye(3)
    out += onehot[t[..., 0]] * t[..., 1][..., None]
    out += onehot[t[..., 2]] * (t[..., 3] * sc)[..., None]
    out += onehot[t[..., 4]] * (t[..., 5] * tc)[..., None]
    return out


def texel_directions(size, supersample=1):
    """Unit directions of texel centres, ``(6, S, S, 3)``; with supersampling
    ``(6, S, S, k*k, 3)`` sub-texel directions."""
    k = supersample
    off = (np.arange(k) + 0.5) / k
    jj, ii = np.meshgrid(np.arange(size), np.arange(size))
    u = (jj[..., None, None] + off[None, None, None, :]) / size
    v = (ii[..., None, None] + off[None, None, :, None]) / size
    u = np.broadcast_to(u, (size, size, k, k)).reshape(size, size, k * k)
    v = np.broadcast_to(v, (size, size, k, k)).reshape(size, size, k * k)
    faces = np.arange(6)[:, None, None, None]
    d = face_uv_to_dir(faces, u[None], v[None])
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d[..., 0, :] if k == 1 else d


def texel_solid_angles(size):
    """Exact solid angle of every texel, ``(6, S, S)``; sums to 4*pi."""
    edges = np.linspace(-1.0, 1.0, size + 1)

    def area(x, y):
        return np.arctan2(x * y, np.sqrt(x * x + y * y + 1.0))

    x0, x1 = edges[:-1][None, :], edges[1:][None, :]
    y0, y1 = edges[:-1][:, None], edges[1:][:, None]
    face = area(x0, y0) - area(x0, y1) - area(x1, y0) + area(x1, y1)
    return np.broadcast_to(np.abs(face), (6, size, size)).copy()


def dir_to_face(dirs):
    """Face index, ``u``, ``v`` for (unnormalized) directions ``(N, 3)``."""
    d = np.asarray(dirs, dtype=float)
    a = np.abs(d)
    major = np.argmax(a, axis=-1)
    sign = np.take_along_axis(d, major[..., None], axis=-1)[..., 0] >= 0
    face = 2 * major + (~sign)
    t = _FACE_TABLE[face]
    ma = np.take_along_axis(a, major[..., None], axis=-1)[..., 0]
    sc = t[..., 3] * np.take_along_axis(d, t[..., 2:3], axis=-1)[..., 0] / ma
    tc = t[..., 5] * np.take_along_axis(d, t[..., 4:5], axis=-1)[..., 0] / ma
    return face, 0.5 * (sc + 1.0), 0.5 * (tc + 1.0)


def _face_coords(dirs):
    """Differentiable (u, v) plus constant face ids for Var or array dirs."""
    dv = ad.value(dirs)
    if not np.all(np.isfinite(dv)):
        raise NonFiniteError("non-finite lookup direction")
    if np.any(np.max(np.abs(dv), axis=-1) == 0):
        raise ValueError("zero-length lookup direction")
    face, u, v = dir_to_face(dv)
    if not ad.is_var(dirs):
        return face, u, v
    t = _FACE_TABLE[face]
    eye = np.eye(3, dtype=dv.dtype)
    ma = ad.dot_last(dirs, eye[t[:, 0]] * t[:, 1:2])
    sc = ad.dot_last(dirs, eye[t[:, 2]] * t[:, 3:4])
    tc = ad.dot_last(dirs, eye[t[:, 4]] * t[:, 5:6])
    u = (ad.div(sc, ma) + 1.0) * 0.5
    v = (ad.div(tc, ma) + 1.0) * 0.5
    return face, u, v


def _bilinear_face_taps(face, u, v, size):
    """Flat texel indices (N, 4) and differentiable weights (N, 4)."""
    s = size
    x = ad.clip(u * s - 0.5, 0.0, s - 1.0)
    y = ad.clip(v * s - 0.5, 0.0, s - 1.0)
    x0 = np.minimum(np.floor(ad.value(x)).astype(np.int64), s - 2)
    y0 = np.minimum(np.floor(ad.value(y)).astype(np.int64), s - 2)
    fx = x - x0
    fy = y - y0
    base = (face * s + y0) * s + x0
    idx = np.stack([base, base + 1, base + s, base + s + 1], axis=-1)
    gx, gy = 1.0 - fx, 1.0 - fy
    w = ad.stack([gx * gy, fx * gy, gx * fy, fx * fy], axis=-1)
    return idx, w


def sample_faces(faces, dirs):
    """Bilinear cubemap lookup, differentiable w.r.t. faces and directions.

    ``faces``: ``(6, S, S, C)`` array or Var; ``dirs``: ``(N, 3)``.
    Bilinear taps clamp at face edges.
    """
    if isinstance(faces, Cubemap):
        faces = faces.faces
    fshape = ad.value(faces).shape
    size, ch = fshape[1], fshape[3]
    face, u, v = _face_coords(dirs)
    if size == 1:
        rows = ad.reshape(faces, (6, ch))
        return ad.take_rows(rows, face)
    idx, w = _bilinear_face_taps(face, u, v, size)
    rows = ad.reshape(faces, (6 * size * size, ch))
    taps = ad.take_rows(rows, idx)                    # (N, 4, C)
    return ad.sum(ad.mul(taps, ad.reshape(w, w.shape + (1,))), axis=1)


def sample_cubemap(c: Cubemap, w) -> np.ndarray:
    """Radiance arriving from direction(s) ``w`` (need not be normalized)."""
    d = np.asarray(w, dtype=float)
    single = d.ndim == 1
    d = np.atleast_2d(d)
    if np.any(np.linalg.norm(d, axis=-1) == 0):
        raise ValueError("cannot look up a zero direction")
    out = sample_faces(c.faces, d)
    return out[0] if single else out


def bilinear_operator(size, dirs):
    """Sparse ``(N, 6*S*S)`` matrix of bilinear lookup weights."""
    import scipy.sparse as sp

    face, u, v = dir_to_face(dirs)
    if size == 1:
        n = len(face)
        return sp.csr_matrix((np.ones(n), (np.arange(n), face)), shape=(n, 6))
    idx, w = _bilinear_face_taps(face, u, v, size)
    n = len(face)
    rows = np.repeat(np.arange(n), 4)
    return sp.csr_matrix((np.asarray(w).ravel(), (rows, idx.ravel())),
                         shape=(n, 6 * size * size))


def downsample_operator(size, factor):
    """Sparse box-filter operator mapping ``6*S*S`` texels to ``6*(S/f)^2``."""
    import scipy.sparse as sp

    if size % factor:
        raise ShapeError(f"face size {size} not divisible by {factor}")
    small = size // factor
    f, i, j = np.meshgrid(np.arange(6), np.arange(size), np.arange(size), indexing="ij")
    src = (f * size + i) * size + j
    dst = (f * small + i // factor) * small + j // factor
    vals = np.full(src.size, 1.0 / factor ** 2)
    return sp.csr_matrix((vals, (dst.ravel(), src.ravel())),
                         shape=(6 * small * small, 6 * size * size))


def downsample(faces, factor):
    s = faces.shape[1]
    return faces.reshape(6, s // factor, factor, s // factor, factor, -1).mean(axis=(2, 4))


def equirect_directions(width, height, supersample=1):
    """Unit directions of equirect pixels: ``(H, W, 3)`` or
    ``(H, W, k*k, 3)`` when supersampled."""
    k = supersample
    off = (np.arange(k) + 0.5) / k
    ii = (np.arange(height)[:, None, None, None] + off[None, None, :, None]) / height
    jj = (np.arange(width)[None, :, None, None] + off[None, None, None, :]) / width
    theta = np.pi * np.broadcast_to(ii, (height, width, k, k)).reshape(height, width, k * k)
    phi = 2 * np.pi * np.broadcast_to(jj, (height, width, k, k)).reshape(height, width, k * k) - np.pi
    d = np.stack([np.sin(theta) * np.sin(phi), np.cos(theta),
                  np.sin(theta) * np.cos(phi)], axis=-1)
    return d[..., 0, :] if k == 1 else d


def dir_to_equirect(dirs):
    """(row, col) continuous pixel coordinates in units of the image size."""
    d = np.asarray(dirs, dtype=float)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    theta = np.arccos(np.clip(d[..., 1], -1.0, 1.0))
    phi = np.arctan2(d[..., 0], d[..., 2])
    return theta / np.pi, (phi + np.pi) / (2 * np.pi)


def cubemap_to_equirect(c, width, height, supersample=1):
    """Project a cubemap into a ``height x width`` latitude-longitude image.

    ``c`` may be a :class:`Cubemap`, a faces array or a faces Var; the result
    is differentiable w.r.t. the faces.
    """
    if width != 2 * height:
        raise ShapeError(f"equirect aspect must be 2:1, got {width}x{height}")
    faces = c.faces if isinstance(c, Cubemap) else c
    d = equirect_directions(width, height, supersample)
    vals = sample_faces(faces, d.reshape(-1, 3))
    ch = ad.value(vals).shape[-1]
    if supersample > 1:
        vals = ad.mean(ad.reshape(vals, (height, width, supersample ** 2, ch)), axis=2)
        return vals
    return ad.reshape(vals, (height, width, ch))


def sample_equirect(img, dirs):
    """Bilinear lookup in an equirect image, wrapping in longitude."""
    h, w = img.shape[:2]
    r, c = dir_to_equirect(dirs)
    y = np.clip(r * h - 0.5, 0, h - 1)
    x = c * w - 0.5
    y0 = np.minimum(np.floor(y).astype(int), h - 2)
    x0 = np.floor(x).astype(int)
    fy = (y - y0)[..., None]
    fx = (x - x0)[..., None]
    x0m, x1m = x0 % w, (x0 + 1) % w
    top = img[y0, x0m] * (1 - fx) + img[y0, x1m] * fx
    bot = img[y0 + 1, x0m] * (1 - fx) + img[y0 + 1, x1m] * fx
    return top * (1 - fy) + bot * fy


def equirect_to_cubemap(img, size, supersample=1) -> Cubemap:
    if img.shape[1] != 2 * img.shape[0]:
        raise ShapeError("equirect aspect must be 2:1")
    return Cubemap.from_function(size, lambda d: sample_equirect(img, d), supersample)


def to_strip(faces):
    """Faces -> single ``(6S, S, C)`` vertical strip in face order."""
    return np.concatenate(list(faces), axis=0)


def from_strip(strip):
    s = strip.shape[1]
    if strip.shape[0] != 6 * s:
        raise ShapeError("cubemap strip must be 6S x S")
    return strip.reshape(6, s, s, -1)
