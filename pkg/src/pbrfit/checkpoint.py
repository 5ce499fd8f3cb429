"""TWNF field checkpoints.

Little-endian layout::

    b"TWNF"  u32 version  u8 kind  u32 R  u32 C  u8 mix  u32 in  u32 hidden  u32 out
    float32 payload

``kind`` is 0 voxel, 1 triplane, 2 tricolumn; ``mix`` is 0 sum, 1 affine,
2 mlp.  The payload holds the grid (voxel: ``out x R^3``) or the xy, yz, zx
planes, followed by the mixing parameters (affine: w, b; mlp: w1, b1, w2,
b2).  Grids are cubic and span the default bounds.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataIOError, ShapeError
from .volfield import MixingHead, TricolumnField, TriplaneField, VoxelGrid

MAGIC = b"TWNF"
VERSION = 1
_HEADER = struct.Struct("<4sIBIIBIII")
_KINDS = ("voxel", "triplane", "tricolumn")
_MIX = ("sum", "affine", "mlp")
_MIX_KEYS = {"sum": (), "affine": ("w", "b"), "mlp": ("w1", "b1", "w2", "b2")}


def _mix_shapes(mode, i, h, o):
    if mode == "affine":
        return [(i, o), (o,)]
    if mode == "mlp":
        return [(i, h), (h,), (h, o), (o,)]
    return []


def save_field(path, fld):
    kind = fld.kind
    if kind == "voxel":
        c, d, h, w = fld.values.shape
        if not d == h == w:
            raise ShapeError("checkpoints store cubic grids only")
        r, ch, mix = d, c, MixingHead.identity(c)
        arrays = [fld.values]
    else:
        r, mix = fld.resolution, fld.mixing
        ch = fld.channels if kind == "tricolumn" else fld.xy.shape[0]
        arrays = [fld.xy, fld.yz, fld.zx]
        want = (ch * r if kind == "tricolumn" else ch, r, r)
        if any(a.shape != want for a in arrays):
            raise ShapeError("checkpoints store cubic grids only")
    arrays += [mix.params[k] for k in _MIX_KEYS[mix.mode]]
    hdr = _HEADER.pack(MAGIC, VERSION, _KINDS.index(kind), r, ch, _MIX.index(mix.mode),
                       mix.in_dim, mix.hidden, mix.out_dim)
    try:
        with open(path, "wb") as f:
            f.write(hdr)
            for a in arrays:
                f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    except OSError as e:
        raise DataIOError(f"cannot write checkpoint {path}: {e}") from e


def load_field(path):
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DataIOError(f"cannot read checkpoint {path}: {e}") from e
    if len(raw) < _HEADER.size:
        raise DataIOError(f"{path}: truncated header")
    magic, ver, kind, r, c, mix, i, h, o = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataIOError(f"{path}: not a TWNF checkpoint")
    if ver != VERSION or kind >= len(_KINDS) or mix >= len(_MIX):
        raise DataIOError(f"{path}: unsupported version/kind/mixing ({ver}, {kind}, {mix})")
    kind, mode = _KINDS[kind], _MIX[mix]
    if kind == "voxel":
        shapes = [(c, r, r, r)]
    elif kind == "triplane":
        shapes = [(c, r, r)] * 3
    else:
        shapes = [(c * r, r, r)] * 3
    shapes += _mix_shapes(mode, i, h, o)
    need = sum(int(np.prod(s)) for s in shapes) * 4
    if len(raw) - _HEADER.size != need:
        raise DataIOError(f"{path}: payload is {len(raw) - _HEADER.size} bytes, expected {need}")
    arrays, off = [], _HEADER.size
    for s in shapes:
        n = int(np.prod(s))
        arrays.append(np.frombuffer(raw, "<f4", n, off).reshape(s).astype(np.float64))
        off += 4 * n
    if kind == "voxel":
        return VoxelGrid(arrays[0])
    head = MixingHead(mode, dict(zip(_MIX_KEYS[mode], arrays[3:])), i, o)
    cls = TriplaneField if kind == "triplane" else TricolumnField
    return cls(arrays[0], arrays[1], arrays[2], head)
