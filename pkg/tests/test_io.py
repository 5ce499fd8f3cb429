import numpy as np
import pytest

from pbrfit.checkpoint import load_field, save_field
from pbrfit.errors import DataIOError, ShapeError
from pbrfit.imageio import read_pfm, read_png, write_pfm, write_png
from pbrfit.volfield import TriplaneField, random_field


@pytest.mark.parametrize("shape", [(5, 7), (5, 7, 3), (5, 7, 1)])
def test_pfm_roundtrip(tmp_path, shape):
    img = np.random.default_rng(0).normal(0, 10, shape).astype(np.float32)
    write_pfm(tmp_path / "a.pfm", img)
    back = read_pfm(tmp_path / "a.pfm")
    np.testing.assert_array_equal(back.reshape(img.shape), img)


def test_pfm_errors(tmp_path):
    with pytest.raises(ValueError):
        write_pfm(tmp_path / "a.pfm", np.zeros((2, 2, 2)))
    (tmp_path / "b.pfm").write_bytes(b"P5\n2 2\n-1\n")
    with pytest.raises(DataIOError):
        read_pfm(tmp_path / "b.pfm")
    (tmp_path / "c.pfm").write_bytes(b"PF\n2 2\n-1\n\x00\x00")
    with pytest.raises(DataIOError):
        read_pfm(tmp_path / "c.pfm")
    with pytest.raises(DataIOError):
        read_pfm(tmp_path / "missing.pfm")


def test_png_roundtrip(tmp_path):
    img = np.random.default_rng(1).uniform(0, 1, (6, 4, 3))
    write_png(tmp_path / "a.png", img)
    assert np.max(np.abs(read_png(tmp_path / "a.png") - img)) <= 0.5 / 255 + 1e-12
    with pytest.raises(DataIOError):
        read_png(tmp_path / "none.png")


@pytest.mark.parametrize("mix", ["sum", "affine", "mlp"])
def test_checkpoint_roundtrip(tmp_path, mix):
    fld = random_field("tricolumn", 5, channels=9 if mix == "sum" else 6, mixing=mix,
                       hidden=8, rng=2)
    save_field(tmp_path / "f.twnf", fld)
    back = load_field(tmp_path / "f.twnf")
    p = np.random.default_rng(2).uniform(-1, 1, (30, 3))
    # the payload is float32
    np.testing.assert_allclose(back.decode(p), fld.decode(p), rtol=1e-5, atol=1e-5)
    save_field(tmp_path / "g.twnf", back)
    assert (tmp_path / "g.twnf").read_bytes() == (tmp_path / "f.twnf").read_bytes()


def test_checkpoint_errors(tmp_path):
    (tmp_path / "bad.twnf").write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(DataIOError):
        load_field(tmp_path / "bad.twnf")
    good = random_field("tricolumn", 3, mixing="sum", rng=0)
    save_field(tmp_path / "ok.twnf", good)
    data = (tmp_path / "ok.twnf").read_bytes()
    (tmp_path / "short.twnf").write_bytes(data[:-8])
    with pytest.raises(DataIOError):
        load_field(tmp_path / "short.twnf")
    rng = np.random.default_rng(0)
    odd = TriplaneField(*[rng.normal(size=(9, 3, 4)) for _ in range(3)], good.mixing)
    with pytest.raises(ShapeError):
        save_field(tmp_path / "odd.twnf", odd)


def test_triplane_and_voxel_checkpoints(tmp_path):
    for kind in ("triplane", "voxel"):
        fld = random_field(kind, 4, channels=6, mixing="affine", rng=3)
        save_field(tmp_path / f"{kind}.twnf", fld)
        back = load_field(tmp_path / f"{kind}.twnf")
        p = np.random.default_rng(3).uniform(-1, 1, (10, 3))
        np.testing.assert_allclose(back.decode(p), fld.decode(p), rtol=1e-5, atol=1e-5)
