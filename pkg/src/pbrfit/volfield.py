"""Volumetric feature fields over an axis-aligned box.

Three interchangeable parameterizations share one sampling core:

* :class:`VoxelGrid` -- dense ``C x D x H x W`` grid, trilinear sampling.
* :class:`TriplaneField` -- three ``K x R x R`` planes, bilinear sampling of
  each 2D projection, mixed by a :class:`MixingHead`.
* :class:`TricolumnField` -- three ``(C*R) x R x R`` planes whose feature
  axis unfolds into the third spatial axis, so every plane is a full
  ``C x R x R x R`` grid sampled trilinearly.

Axis conventions (x right, y up, z forward), cell-centred samples::

    voxel grid        values[c, iz, iy, ix]
    xy plane          plane[k, iy, ix]    folded axis z: k = c*R + iz
    yz plane          plane[k, iz, iy]    folded axis x: k = c*R + ix
    zx plane          plane[k, ix, iz]    folded axis y: k = c*R + iy

Sampling clamps to the outermost cell centres (clamp-to-edge).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .errors import NonFiniteError, OutOfBoundsError, ShapeError

DEFAULT_BOUNDS = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))

# channel layout of decoded fields
SIGMA = slice(0, 1)
ALBEDO = slice(1, 4)
METAL = slice(4, 5)
ROUGH = slice(5, 6)
NORMAL = slice(6, 9)
N_CHANNELS = 9


@dataclass(frozen=True)
class FieldChannels:
    """Mapping from channel names to ranges of the decoded raw vector."""

    sigma: slice = SIGMA
    albedo: slice = ALBEDO
    metal: slice = METAL
    rough: slice = ROUGH
    normal: slice = NORMAL
    width: int = N_CHANNELS

    def __post_init__(self):
        used = np.zeros(self.width, dtype=int)
        for s in (self.sigma, self.albedo, self.metal, self.rough, self.normal):
            used[s] += 1
        if not np.all(used == 1):
            raise ShapeError("channel ranges must be disjoint and cover the layout")


@dataclass
class Channels:
    sigma: object
    albedo: object
    metal: object
    rough: object
    normal: object


def decode_channels(raw, layout: FieldChannels = FieldChannels()) -> Channels:
    """Activate raw field outputs: softplus density, sigmoid materials,
    unit normals (``+z`` where the raw normal vanishes)."""
    if raw.shape[-1] != layout.width:
        raise ShapeError(f"raw width {raw.shape[-1]} != layout width {layout.width}")
    sigma = ad.softplus(raw[..., layout.sigma])
    albedo = ad.sigmoid(raw[..., layout.albedo])
    metal = ad.sigmoid(raw[..., layout.metal])
    rough = ad.sigmoid(raw[..., layout.rough])
    n_raw = raw[..., layout.normal]
    nv = ad.value(n_raw)
    tiny = np.sum(nv * nv, axis=-1, keepdims=True) <= 1e-24
    if np.any(tiny):
        up = np.zeros_like(nv)
        up[..., 2] = 1.0
        n_raw = ad.where(np.broadcast_to(tiny, nv.shape), up, n_raw)
    normal = ad.normalize(n_raw)
    return Channels(sigma, albedo, metal, rough, normal)


def inverse_softplus(y):
    y = np.asarray(y, dtype=float)
    return np.where(y > 20, y, np.log(np.expm1(np.maximum(y, 1e-300))))


def logit(p):
    p = np.clip(np.asarray(p, dtype=float), 1e-12, 1 - 1e-12)
    return np.log(p) - np.log1p(-p)


# -- interpolation core ------------------------------------------------------

def check_points(points, bounds=DEFAULT_BOUNDS, strict=False):
    """Validate an ``(N, 3)`` point array against ``bounds``."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if p.shape[-1] != 3:
        raise ShapeError("points must have a trailing axis of 3")
    if not np.all(np.isfinite(p)):
        raise NonFiniteError("non-finite sample point")
    lo, hi = np.asarray(bounds[0]), np.asarray(bounds[1])
    if strict:
        bad = np.any((p <= lo) | (p >= hi), axis=-1)
    else:
        bad = np.any((p < lo) | (p > hi), axis=-1)
    if np.any(bad):
        raise OutOfBoundsError(f"{int(bad.sum())} point(s) outside field bounds")
    return p


def _axis_coords(x, n, lo, hi):
    """Continuous cell-centred index along one axis, clamped, plus the
    derivative of the index w.r.t. the world coordinate (0 where clamped)."""
    c = (x - lo) / (hi - lo) * n - 0.5
    inside = (c >= 0) & (c <= n - 1)
    c = np.clip(c, 0, n - 1)
    i0 = np.minimum(np.floor(c).astype(np.int64), n - 2)
    f = c - i0
    dc = np.where(inside, n / (hi - lo), 0.0)
    return i0, f, dc


def trilinear(points, dhw, bounds=DEFAULT_BOUNDS, with_grad=False):
    """Corner indices and weights of trilinear interpolation.

    Returns ``idx`` (N, 8) flat indices into a ``D*H*W`` grid, ``w`` (N, 8)
    weights summing to one and, if requested, ``dw`` (N, 8, 3) weight
    derivatives w.r.t. the world point.
    """
    d, h, w_ = dhw
    lo, hi = bounds
    ix, fx, dx = _axis_coords(points[:, 0], w_, lo[0], hi[0])
    iy, fy, dy = _axis_coords(points[:, 1], h, lo[1], hi[1])
    iz, fz, dz = _axis_coords(points[:, 2], d, lo[2], hi[2])
    idx = np.empty((len(points), 8), dtype=np.int64)
    wts = np.empty((len(points), 8), dtype=points.dtype)
    dw = np.empty((len(points), 8, 3), dtype=points.dtype) if with_grad else None
    k = 0
    for bz in (0, 1):
        wz = fz if bz else 1 - fz
        sz = 1.0 if bz else -1.0
        for by in (0, 1):
            wy = fy if by else 1 - fy
            sy = 1.0 if by else -1.0
            for bx in (0, 1):
                wx = fx if bx else 1 - fx
                sx = 1.0 if bx else -1.0
                idx[:, k] = ((iz + bz) * h + (iy + by)) * w_ + (ix + bx)
                wts[:, k] = wx * wy * wz
                if with_grad:
                    dw[:, k, 0] = sx * dx * wy * wz
                    dw[:, k, 1] = sy * dy * wx * wz
                    dw[:, k, 2] = sz * dz * wx * wy
                k += 1
    return idx, wts, dw


def bilinear(u, v, shape, lo_u, hi_u, lo_v, hi_v, with_grad=False):
    """Bilinear weights on a ``rows x cols`` plane; ``u`` indexes columns,
    ``v`` rows.  Returns idx (N, 4), w (N, 4), and (du, dv) derivatives."""
    rows, cols = shape
    iu, fu, du = _axis_coords(u, cols, lo_u, hi_u)
    iv, fv, dv = _axis_coords(v, rows, lo_v, hi_v)
    idx = np.empty((len(u), 4), dtype=np.int64)
    wts = np.empty((len(u), 4), dtype=np.result_type(u, np.float32))
    grads = np.empty((len(u), 4, 2), dtype=wts.dtype) if with_grad else None
    k = 0
    for bv in (0, 1):
        wv = fv if bv else 1 - fv
        sv = 1.0 if bv else -1.0
        for bu in (0, 1):
            wu = fu if bu else 1 - fu
            su = 1.0 if bu else -1.0
            idx[:, k] = (iv + bv) * cols + (iu + bu)
            wts[:, k] = wu * wv
            if with_grad:
                grads[:, k, 0] = su * du * wv
                grads[:, k, 1] = sv * dv * wu
            k += 1
    return idx, wts, grads


def interp_matrix(idx, w, n_cells):
    """Sparse ``(N, n_cells)`` interpolation operator from corner weights."""
    n, k = idx.shape
    rows = np.repeat(np.arange(n), k)
    return sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(n, n_cells))


class Interpolator:
    """Cached sparse interpolation operator for a fixed point set.

    Rendering with a fixed camera set and unjittered samples evaluates the
    field at the same points every step; the operator (and its transpose for
    the backward pass) is built once.
    """

    def __init__(self, points, dhw, bounds=DEFAULT_BOUNDS):
        idx, w, _ = trilinear(np.asarray(points, dtype=float), dhw, bounds)
        n_cells = int(np.prod(dhw))
        self.matrix = interp_matrix(idx, w, n_cells)
        self.matrix_t = self.matrix.T.tocsr()
        self.n_points = len(points)

    def astype(self, dtype):
        self.matrix = self.matrix.astype(dtype)
        self.matrix_t = self.matrix_t.astype(dtype)
        return self

    def __call__(self, rows):
        """rows: (n_cells, C) ndarray or Var -> (N, C)."""
        return ad.sparse_dot(self.matrix, rows, mt=self.matrix_t)


def _grid_rows(grid):
    """C x D x H x W  ->  (D*H*W, C) row layout used by the gather ops."""
    c = grid.shape[0]
    return ad.transpose(ad.reshape(grid, (c, -1)))


def _sample_grid(grid, points, bounds):
    idx, w, _ = trilinear(points, grid.shape[1:], bounds)
    rows = _grid_rows(grid)
    g = ad.take_rows(rows, idx)                       # (N, 8, C)
    return ad.sum(ad.mul(g, w[:, :, None]), axis=1)


def _grid_jacobian(grid, points, bounds):
    """Value and spatial Jacobian (N, C, 3) of trilinear sampling (numpy)."""
    gv = ad.value(grid)
    idx, w, dw = trilinear(points, gv.shape[1:], bounds, with_grad=True)
    rows = gv.reshape(gv.shape[0], -1).T
    g = rows[idx]                                     # (N, 8, C)
    val = np.einsum("nk,nkc->nc", w, g)
    jac = np.einsum("nkd,nkc->ncd", dw, g)
    return val, jac


# -- mixing ------------------------------------------------------------------

MIX_MODES = ("sum", "affine", "mlp")


@dataclass
class MixingHead:
    """Point-wise mixing after summation of the per-plane features.

    ``sum`` passes the summed features through; ``affine`` applies
    ``s @ w + b``; ``mlp`` applies ``relu(s @ w1 + b1) @ w2 + b2``.
    """

    mode: str = "sum"
    params: dict = field(default_factory=dict)
    in_dim: int = N_CHANNELS
    out_dim: int = N_CHANNELS

    def __post_init__(self):
        if self.mode not in MIX_MODES:
            raise ShapeError(f"unknown mixing mode {self.mode!r}")
        if self.mode == "sum" and self.in_dim != self.out_dim:
            raise ShapeError("sum mixing needs equal input and output widths")

    @property
    def hidden(self) -> int:
        return self.params["w1"].shape[1] if self.mode == "mlp" else 0

    @classmethod
    def identity(cls, width=N_CHANNELS):
        return cls("sum", {}, width, width)

    @classmethod
    def affine(cls, in_dim, out_dim=N_CHANNELS, rng=None, scale=None):
        rng = np.random.default_rng(rng)
        scale = 1.0 / math.sqrt(in_dim) if scale is None else scale
        return cls("affine", {"w": rng.normal(0, scale, (in_dim, out_dim)),
                              "b": np.zeros(out_dim)}, in_dim, out_dim)

    @classmethod
    def mlp(cls, in_dim, out_dim=N_CHANNELS, hidden=32, rng=None):
        rng = np.random.default_rng(rng)
        return cls("mlp", {
            "w1": rng.normal(0, math.sqrt(2.0 / in_dim), (in_dim, hidden)),
            "b1": np.zeros(hidden),
            "w2": rng.normal(0, math.sqrt(1.0 / hidden), (hidden, out_dim)),
            "b2": np.zeros(out_dim),
        }, in_dim, out_dim)

    @classmethod
    def identity_mlp(cls, in_dim, out_dim=N_CHANNELS, hidden=32):
        """An MLP that reproduces the first ``out_dim`` inputs exactly,
        via ``x = relu(x) - relu(-x)``."""
        if hidden < 2 * out_dim or in_dim < out_dim:
            raise ShapeError("identity MLP needs hidden >= 2*out and in >= out")
        w1 = np.zeros((in_dim, hidden))
        w2 = np.zeros((hidden, out_dim))
        for i in range(out_dim):
            w1[i, 2 * i], w1[i, 2 * i + 1] = 1.0, -1.0
            w2[2 * i, i], w2[2 * i + 1, i] = 1.0, -1.0
        return cls("mlp", {"w1": w1, "b1": np.zeros(hidden), "w2": w2,
                           "b2": np.zeros(out_dim)}, in_dim, out_dim)

    def __call__(self, s, params=None):
        p = self.params if params is None else params
        if self.mode == "sum":
            return s
        if self.mode == "affine":
            return ad.add(ad.matmul(s, p["w"]), p["b"])
        h = ad.relu(ad.add(ad.matmul(s, p["w1"]), p["b1"]))
        return ad.add(ad.matmul(h, p["w2"]), p["b2"])

    def jacobian(self, s):
        """d out / d s, shape (N, out, in), numpy only."""
        n = len(s)
        if self.mode == "sum":
            return np.broadcast_to(np.eye(self.in_dim), (n, self.in_dim, self.in_dim))
        if self.mode == "affine":
            return np.broadcast_to(self.params["w"].T, (n, self.out_dim, self.in_dim))
        p = self.params
        act = (s @ p["w1"] + p["b1"]) > 0             # (N, h)
        return np.einsum("ho,nh,ih->noi", p["w2"], act, p["w1"])


# -- field kinds -------------------------------------------------------------

class _Field:
    kind: str
    bounds = DEFAULT_BOUNDS

    def param_arrays(self) -> dict:
        raise NotImplementedError

    def with_params(self, params: dict):
        raise NotImplementedError

    def decode(self, points, params=None):
        raise NotImplementedError

    def decode_with_jacobian(self, points):
        raise NotImplementedError

    @property
    def out_dim(self) -> int:
        raise NotImplementedError

    def astype(self, dtype):
        return self.with_params({k: v.astype(dtype) for k, v in self.param_arrays().items()})


def _mix_params(params):
    return {k[4:]: v for k, v in params.items() if k.startswith("mix.")}


@dataclass
class VoxelGrid(_Field):
    values: np.ndarray
    bounds: tuple = DEFAULT_BOUNDS
    kind = "voxel"

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 4 or min(self.values.shape[1:]) < 2:
            raise ShapeError("voxel grid must be C x D x H x W with D, H, W >= 2")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteError("voxel values must be finite")

    @property
    def out_dim(self):
        return self.values.shape[0]

    def param_arrays(self):
        return {"values": self.values}

    def with_params(self, params):
        return replace(self, values=params["values"])

    def decode(self, points, params=None):
        grid = self.values if params is None else params["values"]
        return _sample_grid(grid, np.asarray(points, dtype=float), self.bounds)

    def decode_with_jacobian(self, points):
        return _grid_jacobian(self.values, points, self.bounds)

    @property
    def lattice_shape(self):
        return self.values.shape[1:]

    def decode_lattice(self, interp, params=None):
        """Decode at the points baked into ``interp`` (an Interpolator on
        this field's lattice)."""
        grid = self.values if params is None else params["values"]
        return interp(_grid_rows(grid))


@dataclass
class TriplaneField(_Field):
    xy: np.ndarray
    yz: np.ndarray
    zx: np.ndarray
    mixing: MixingHead
    bounds: tuple = DEFAULT_BOUNDS
    kind = "triplane"

    def __post_init__(self):
        k = {self.xy.shape[0], self.yz.shape[0], self.zx.shape[0]}
        if len(k) != 1:
            raise ShapeError("triplane planes must share a channel count")
        if k.pop() != self.mixing.in_dim:
            raise ShapeError("plane channels do not match mixing input width")

    @property
    def out_dim(self):
        return self.mixing.out_dim

    @property
    def resolution(self):
        return self.xy.shape[1]

    def param_arrays(self):
        out = {"xy": self.xy, "yz": self.yz, "zx": self.zx}
        out.update({"mix." + k: v for k, v in self.mixing.params.items()})
        return out

    def with_params(self, params):
        mix = replace(self.mixing, params=_mix_params(params))
        return replace(self, xy=params["xy"], yz=params["yz"], zx=params["zx"], mixing=mix)

    # (plane name, (column axis, row axis))
    _AXES = (("xy", (0, 1)), ("yz", (1, 2)), ("zx", (2, 0)))

    def _plane_weights(self, name, axes, points, with_grad=False):
        plane = getattr(self, name)
        lo, hi = self.bounds
        a, b = axes
        return bilinear(points[:, a], points[:, b], plane.shape[1:],
                        lo[a], hi[a], lo[b], hi[b], with_grad)

    def summed(self, points, params=None):
        p = self.param_arrays() if params is None else params
        total = 0
        for name, axes in self._AXES:
            idx, w, _ = self._plane_weights(name, axes, points)
            plane = p[name]
            rows = ad.transpose(ad.reshape(plane, (plane.shape[0], -1)))
            g = ad.take_rows(rows, idx)
            total = ad.add(total, ad.sum(ad.mul(g, w[:, :, None]), axis=1))
        return total

    def decode(self, points, params=None):
        points = np.asarray(points, dtype=float)
        p = self.param_arrays() if params is None else params
        return self.mixing(self.summed(points, p), _mix_params(p) or None)

    def decode_with_jacobian(self, points):
        s = 0
        jac = 0
        for name, (a, b) in self._AXES:
            plane = getattr(self, name)
            idx, w, dw = self._plane_weights(name, (a, b), points, with_grad=True)
            rows = plane.reshape(plane.shape[0], -1).T
            g = rows[idx]
            s = s + np.einsum("nk,nkc->nc", w, g)
            j = np.zeros((len(points), plane.shape[0], 3))
            j[:, :, a] = np.einsum("nk,nkc->nc", dw[:, :, 0], g)
            j[:, :, b] = np.einsum("nk,nkc->nc", dw[:, :, 1], g)
            jac = jac + j
        mj = self.mixing.jacobian(s)
        return self.mixing(s), np.einsum("noi,nid->nod", mj, jac)


@dataclass
class TricolumnField(_Field):
    xy: np.ndarray
    yz: np.ndarray
    zx: np.ndarray
    mixing: MixingHead
    bounds: tuple = DEFAULT_BOUNDS
    kind = "tricolumn"

    def __post_init__(self):
        r = self.xy.shape[1]
        for plane in (self.xy, self.yz, self.zx):
            if plane.ndim != 3 or plane.shape[1:] != (r, r):
                raise ShapeError("tricolumn planes must be (C*R) x R x R")
            if plane.shape[0] % r:
                raise ShapeError(
                    f"plane feature length {plane.shape[0]} not divisible by R={r}")
        if len({self.xy.shape[0], self.yz.shape[0], self.zx.shape[0]}) != 1:
            raise ShapeError("tricolumn planes must share a feature length")
        if self.channels != self.mixing.in_dim:
            raise ShapeError("cell channels do not match mixing input width")

    @property
    def resolution(self):
        return self.xy.shape[1]

    @property
    def channels(self):
        return self.xy.shape[0] // self.xy.shape[1]

    @property
    def out_dim(self):
        return self.mixing.out_dim

    @classmethod
    def zeros(cls, resolution, channels, mixing=None):
        r, c = resolution, channels
        z = np.zeros((c * r, r, r))
        return cls(z, z.copy(), z.copy(), mixing or MixingHead.identity(c))

    @classmethod
    def from_voxel(cls, grid: VoxelGrid, mixing=None):
        """Encode a cubic voxel grid in the xy plane; the other planes are zero."""
        c, d, h, w = grid.values.shape
        if not d == h == w:
            raise ShapeError("tricolumn encoding needs a cubic grid")
        xy = grid.values.reshape(c * d, h, w).copy()
        return cls(xy, np.zeros_like(xy), np.zeros_like(xy),
                   mixing or MixingHead.identity(c), grid.bounds)

    def param_arrays(self):
        out = {"xy": self.xy, "yz": self.yz, "zx": self.zx}
        out.update({"mix." + k: v for k, v in self.mixing.params.items()})
        return out

    def with_params(self, params):
        mix = replace(self.mixing, params=_mix_params(params))
        return replace(self, xy=params["xy"], yz=params["yz"], zx=params["zx"], mixing=mix)

    def plane_grids(self, params=None):
        """The three planes unfolded to C x R x R x R grids, each in its own
        native axis order (see module docstring)."""
        p = self.param_arrays() if params is None else params
        r, c = self.resolution, self.channels
        return tuple(ad.reshape(p[n], (c, r, r, r)) for n in ("xy", "yz", "zx"))

    def folded_grid(self, params=None):
        """Sum of the three unfolded planes in canonical ``[c, z, y, x]`` order.

        Trilinear sampling is linear in the grid values and all three planes
        share one lattice, so sampling this grid equals summing the three
        per-plane samples.
        """
        gxy, gyz, gzx = self.plane_grids(params)
        return ad.add(ad.add(gxy, ad.transpose(gyz, (0, 2, 3, 1))),
                      ad.transpose(gzx, (0, 3, 1, 2)))

    def summed(self, points, params=None):
        """Per-plane trilinear samples summed (the unfused path)."""
        gxy, gyz, gzx = self.plane_grids(params)
        pts = np.asarray(points, dtype=float)
        s = _sample_grid(gxy, pts, self.bounds)
        # yz grid axes (c, x, z, y): sample at (x<-y, y<-z, z<-x)
        lo, hi = np.asarray(self.bounds[0]), np.asarray(self.bounds[1])
        perm_yz = [1, 2, 0]
        s = ad.add(s, _sample_grid(gyz, pts[:, perm_yz],
                                   (lo[perm_yz], hi[perm_yz])))
        # zx grid axes (c, y, x, z): sample at (x<-z, y<-x, z<-y)
        perm_zx = [2, 0, 1]
        s = ad.add(s, _sample_grid(gzx, pts[:, perm_zx],
                                   (lo[perm_zx], hi[perm_zx])))
        return s

    def decode(self, points, params=None, fused=True):
        points = np.asarray(points, dtype=float)
        p = self.param_arrays() if params is None else params
        if fused:
            s = _sample_grid(self.folded_grid(p), points, self.bounds)
        else:
            s = self.summed(points, p)
        return self.mixing(s, _mix_params(p) or None)

    @property
    def lattice_shape(self):
        r = self.resolution
        return (r, r, r)

    def decode_lattice(self, interp, params=None):
        p = self.param_arrays() if params is None else params
        s = interp(_grid_rows(self.folded_grid(p)))
        return self.mixing(s, _mix_params(p) or None)

    def decode_with_jacobian(self, points):
        s, jac = _grid_jacobian(self.folded_grid(), points, self.bounds)
        mj = self.mixing.jacobian(s)
        return self.mixing(s), np.einsum("noi,nid->nod", mj, jac)


# -- spec-level operations -----------------------------------------------------

def sample_voxel(grid: VoxelGrid, p) -> np.ndarray:
    """Trilinearly interpolate ``grid`` at point(s) ``p`` (clamp-to-edge)."""
    pts = check_points(p, grid.bounds)
    out = grid.decode(pts)
    return out[0] if np.ndim(p) == 1 else out


def decode_triplane(f: TriplaneField, p) -> np.ndarray:
    pts = check_points(p, f.bounds)
    out = f.decode(pts)
    return out[0] if np.ndim(p) == 1 else out


def decode_tricolumn(f: TricolumnField, p) -> np.ndarray:
    """Sample each unfolded plane in 3D, sum, then mix."""
    pts = check_points(p, f.bounds)
    out = f.decode(pts, fused=False)
    return out[0] if np.ndim(p) == 1 else out


def token_count(kind: str, resolution: int, channels: int = 1):
    """(number of tokens, token length) for a field of the given kind."""
    r = resolution
    if kind == "voxel":
        return r ** 3, channels
    if kind == "triplane":
        return 3 * r * r, channels
    if kind == "tricolumn":
        return 3 * r * r, channels * r
    raise ValueError(f"unknown field kind {kind!r}")


def spatial_gradient_sigma(fld, p, layout: FieldChannels = FieldChannels()):
    """Analytic gradient of the activated density at strictly-interior points."""
    pts = check_points(p, fld.bounds, strict=True)
    raw, jac = fld.decode_with_jacobian(pts)
    raw = ad.value(raw)
    dsig = ad.sigmoid(raw[:, layout.sigma])           # softplus'
    g = dsig * jac[:, layout.sigma, :][:, 0, :]
    return g[0] if np.ndim(p) == 1 else g


def vjp_decode(fld, p, cotangent) -> dict:
    """Gradients of ``<cotangent, decode(p)>`` w.r.t. every field parameter."""
    pts = check_points(p, fld.bounds)
    cot = np.asarray(cotangent, dtype=float)
    if cot.ndim == 1:
        cot = cot[None]
    if cot.shape != (len(pts), fld.out_dim):
        raise ShapeError(f"cotangent shape {cot.shape} != {(len(pts), fld.out_dim)}")
    leaves = {k: ad.Var(v) for k, v in fld.param_arrays().items()}
    out = fld.decode(pts, leaves)
    ad.backward(out, cot.astype(ad.value(out).dtype))
    return {k: (v.grad if v.grad is not None else np.zeros_like(v.value))
            for k, v in leaves.items()}


def random_field(kind, resolution, channels=N_CHANNELS, out_dim=N_CHANNELS,
                 mixing="mlp", hidden=32, rng=None, scale=1.0):
    """A field with normally distributed parameters (tests and fitting init)."""
    rng = np.random.default_rng(rng)
    r = resolution
    if mixing == "sum":
        mix = MixingHead.identity(channels)
    elif mixing == "affine":
        mix = MixingHead.affine(channels, out_dim, rng)
    else:
        mix = MixingHead.mlp(channels, out_dim, hidden, rng)
    if kind == "voxel":
        return VoxelGrid(rng.normal(0, scale, (out_dim, r, r, r)))
    if kind == "triplane":
        planes = [rng.normal(0, scale, (channels, r, r)) for _ in range(3)]
        return TriplaneField(*planes, mix)
    planes = [rng.normal(0, scale, (channels * r, r, r)) for _ in range(3)]
    return TricolumnField(*planes, mix)
