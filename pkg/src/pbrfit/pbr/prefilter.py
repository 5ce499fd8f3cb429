"""Pre-integrated environment lighting for split-sum shading.

The prefilter is a fixed linear map from source texels to every mip level and
to the irradiance map, so it is stored as sparse matrices: applying it to a
differentiable cubemap costs two sparse products per level, and linearity
holds exactly.

Specular mip ``j`` (of ``M``) is the source convolved with the GGX lobe at
roughness ``j / M`` under the usual ``n = v = r`` assumption, computed at
resolution ``max(S >> j, min(S, 8))`` from a box-downsampled source.  Mip 0
is the source itself.  The diffuse map holds ``(1/pi) * int L cos`` by exact
solid-angle quadrature, with weights normalized so a constant map is
reproduced exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .. import autodiff as ad
from . import brdf
from .cubemap import (Cubemap, bilinear_operator, downsample_operator,
                      sample_faces, texel_directions, texel_solid_angles)


@dataclass
class PrefilteredEnvironment:
    """Specular mip chain (list of ``(6, S_j, S_j, 3)``) plus irradiance map.

    Entries may be ndarrays or autodiff Vars.
    """

    specular: list
    diffuse: object

    @property
    def levels(self) -> int:
        return len(self.specular) - 1

    def sample_diffuse(self, n):
        return sample_faces(self.diffuse, n)

    def sample_specular(self, r, rough):
        """Trilinear lookup: bilinear within mips, linear between the two mips
        bracketing ``rough * M``."""
        m = self.levels
        lvl = ad.mul(ad.clip(rough, 0.0, 1.0), float(m))
        out = 0
        for j, faces in enumerate(self.specular):
            hat = ad.relu(ad.sub(1.0, ad.abs(ad.sub(lvl, float(j)))))
            used = np.ravel(ad.value(hat)) > 0
            if not np.any(used):
                continue
            out = ad.add(out, ad.mul(hat, sample_faces(faces, r)))
        return out


def _mip_size(size, j):
    return max(size >> j, min(size, 8))


def _ggx_convolution(size, alpha, samples, rng, chunk=256):
    """Sparse ``(6S^2, 6S^2)`` GGX-lobe filter on a size-S cubemap."""
    n_dirs = texel_directions(size).reshape(-1, 3)
    base = brdf.hammersley(samples)
    mats = []
    for start in range(0, len(n_dirs), chunk):
        nd = n_dirs[start:start + chunk]
        rot = rng.random((len(nd), 1))
        xi = base[None].copy().repeat(len(nd), axis=0)
        xi[..., 0] = np.mod(xi[..., 0] + rot, 1.0)
        h_local = brdf.ggx_half_vectors(xi, alpha)
        h = brdf.to_world(h_local, nd)                          # (c, N, 3)
        n_dot_h = h_local[..., 2]
        l_dir = 2.0 * n_dot_h[..., None] * h - nd[:, None, :]
        w = np.maximum(np.sum(l_dir * nd[:, None, :], axis=-1), 0.0)
        w = w / np.maximum(w.sum(axis=1, keepdims=True), 1e-300)
        keep = w > 0
        rows = np.broadcast_to(np.arange(len(nd))[:, None], w.shape)[keep]
        lookup = bilinear_operator(size, l_dir[keep])
        lookup = sp.diags(w[keep]) @ lookup
        agg = sp.csr_matrix((np.ones(len(rows)), (rows, np.arange(len(rows)))),
                            shape=(len(nd), len(rows)))
        mats.append((agg @ lookup).tocsr())
    return sp.vstack(mats).tocsr()


def _irradiance(size_out, size_src):
    dirs_out = texel_directions(size_out).reshape(-1, 3)
    dirs_src = texel_directions(size_src).reshape(-1, 3)
    omega = texel_solid_angles(size_src).reshape(-1)
    w = np.maximum(dirs_out @ dirs_src.T, 0.0) * omega[None]
    w /= w.sum(axis=1, keepdims=True)
    return w


class PrefilterOperator:
    """Linear prefilter for cubemaps of one face size, built once."""

    def __init__(self, size, levels=5, samples=1024, seed=0, diffuse_size=8,
                 diffuse_source_size=16):
        if levels < 1:
            raise ValueError("need at least one roughness level")
        if samples < 64:
            raise ValueError("prefilter needs >= 64 samples per texel")
        self.size, self.levels, self.samples = size, levels, samples
        self.mats = [None]
        for j in range(1, levels + 1):
            rng = np.random.default_rng([seed, j])
            sj = _mip_size(size, j)
            conv = _ggx_convolution(sj, brdf.alpha_of(j / levels), samples, rng)
            if sj != size:
                conv = (conv @ downsample_operator(size, size // sj)).tocsr()
            conv.sum_duplicates()
            self.mats.append(conv)
        ds = min(size, diffuse_size)
        dsrc = min(size, diffuse_source_size)
        self.diffuse_mat = _irradiance(ds, dsrc)
        self.diffuse_down = None
        if dsrc != size:
            self.diffuse_down = downsample_operator(size, size // dsrc)
            self.diffuse_down_t = self.diffuse_down.T.tocsr()
        self.diffuse_size = ds
        self.mats_t = [None] + [m.T.tocsr() for m in self.mats[1:]]

    def astype(self, dtype):
        self.mats = [None] + [m.astype(dtype) for m in self.mats[1:]]
        self.mats_t = [None] + [m.astype(dtype) for m in self.mats_t[1:]]
        self.diffuse_mat = self.diffuse_mat.astype(dtype)
        if self.diffuse_down is not None:
            self.diffuse_down = self.diffuse_down.astype(dtype)
            self.diffuse_down_t = self.diffuse_down_t.astype(dtype)
        return self

    def __call__(self, faces) -> PrefilteredEnvironment:
        if isinstance(faces, Cubemap):
            faces = faces.faces
        s = self.size
        rows = ad.reshape(faces, (6 * s * s, 3))
        spec = [faces]
        for j in range(1, self.levels + 1):
            sj = _mip_size(s, j)
            mip = ad.sparse_dot(self.mats[j], rows, mt=self.mats_t[j])
            spec.append(ad.reshape(mip, (6, sj, sj, 3)))
        d = self.diffuse_size
        src = rows
        if self.diffuse_down is not None:
            src = ad.sparse_dot(self.diffuse_down, rows, mt=self.diffuse_down_t)
        diff = ad.matmul(self.diffuse_mat, src)
        return PrefilteredEnvironment(spec, ad.reshape(diff, (6, d, d, 3)))


def prefilter_environment(c: Cubemap, levels=5, samples=1024, seed=0) -> PrefilteredEnvironment:
    """Build the specular mip chain and irradiance map for cubemap ``c``."""
    op = PrefilterOperator(c.size, levels, samples, seed)
    return op(c.faces)
