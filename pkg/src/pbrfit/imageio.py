"""PFM (float) and PNG (8-bit sRGB) image files."""

from __future__ import annotations

import os

import numpy as np

from .errors import DataIOError


def write_pfm(path, img):
    """Write ``(H, W)``, ``(H, W, 1)`` or ``(H, W, 3)`` float data as
    little-endian PFM (rows stored bottom-up)."""
    a = np.asarray(img, dtype=np.float32)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    if a.ndim == 2:
        tag = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM needs 1 or 3 channels, got shape {a.shape}")
    h, w = a.shape[:2]
    data = np.ascontiguousarray(a[::-1]).astype("<f4")
    try:
        with open(path, "wb") as f:
            f.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
            f.write(data.tobytes())
    except OSError as e:
        raise DataIOError(f"cannot write {path}: {e}") from e


def read_pfm(path):
    try:
        with open(path, "rb") as f:
            tag = f.readline().strip()
            dims = f.readline().split()
            scale = float(f.readline().strip())
            raw = f.read()
    except OSError as e:
        raise DataIOError(f"cannot read {path}: {e}") from e
    if tag not in (b"PF", b"Pf") or len(dims) != 2:
        raise DataIOError(f"{path}: not a PFM file")
    w, h = int(dims[0]), int(dims[1])
    ch = 3 if tag == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    if len(raw) != w * h * ch * 4:
        raise DataIOError(f"{path}: truncated PFM payload")
    a = np.frombuffer(raw, dtype=dtype).reshape(h, w, ch)[::-1].astype(np.float32)
    return a if ch == 3 else a[..., 0]


def write_png(path, img):
    """Write display-referred values in [0, 1] as 8-bit PNG."""
    from PIL import Image

    a = np.clip(np.asarray(img, dtype=float), 0.0, 1.0)
    a = np.round(a * 255.0).astype(np.uint8)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    try:
        Image.fromarray(a).save(path, format="PNG", optimize=False)
    except OSError as e:
        raise DataIOError(f"cannot write {path}: {e}") from e


def read_png(path):
    from PIL import Image

    if not os.path.exists(path):
        raise DataIOError(f"missing file {path}")
    try:
        with Image.open(path) as im:
            return np.asarray(im, dtype=np.float64) / 255.0
    except OSError as e:
        raise DataIOError(f"cannot read {path}: {e}") from e
