import json
import subprocess
import sys

import numpy as np
import pytest

from pbrfit import cli
from pbrfit.errors import DataIOError
from pbrfit.imageio import read_pfm, write_pfm
from pbrfit.mesher import read_ply

TINY_GEN = ["gen", "--scenes", "1", "--views", "3", "--res", "12", "--shape", "sphere",
            "--mc-samples", "32", "--march-samples", "32", "--env-size", "8",
            "--env-width", "16", "--seed", "4"]
TINY_FIT = ["--iters", "4", "--lr", "0.01", "--views", "2", "--resolution", "8",
            "--samples", "12", "--env-size", "8"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(TINY_GEN + ["--out", str(root / "ds")]) == 0
    return root


@pytest.fixture(scope="module")
def fitted(dataset):
    out = dataset / "fit"
    assert cli.main(["fit", "--scene", str(dataset / "ds"), *TINY_FIT, "--out", str(out)]) == 0
    return out


def test_gen_layout_and_determinism(dataset, tmp_path):
    scene = dataset / "ds" / "scene_0000"
    names = {p.name for p in scene.iterdir()}
    assert {"spec.json", "cameras.json", "env.pfm", "view_0_mask.png",
            "view_2_composite.png", "view_1_albedo.pfm"} <= names
    assert cli.main(TINY_GEN + ["--out", str(tmp_path / "again")]) == 0
    again = tmp_path / "again" / "scene_0000"
    for name in names:
        assert (scene / name).read_bytes() == (again / name).read_bytes(), name


def test_fit_outputs(fitted):
    rep = json.loads((fitted / "report.json").read_text())
    assert rep["steps"] == 4 and len(rep["views"]) == 2
    assert rep["config"]["lr"] == 0.01
    assert read_pfm(fitted / "env_cube.pfm").shape == (48, 8, 3)
    lines = (fitted / "loss_curve.csv").read_text().splitlines()
    assert len(lines) == 5


def test_config_file_and_flag_precedence(dataset, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"iters": 2, "lr": 0.5, "env_size": 8, "resolution": 8,
                               "samples": 12, "views": 1}))
    out = tmp_path / "fit"
    code = cli.main(["fit", "--scene", str(dataset / "ds" / "scene_0000"), "--config", str(cfg),
                     "--lr", "0.02", "--out", str(out)])
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["steps"] == 2 and rep["config"]["lr"] == 0.02


def test_mesh_and_metrics(fitted, dataset, tmp_path):
    ckpt = str(fitted / "field.twnf")
    code = cli.main(["mesh", "--checkpoint", ckpt, "--grid", "12", "--out",
                     str(tmp_path / "m.ply")])
    if code == 0:
        assert len(read_ply(tmp_path / "m.ply").faces) > 0
    else:
        assert code == 4          # a barely fitted field may have no surface
    code = cli.main(["metrics", "--scene", str(dataset / "ds" / "scene_0000"), "--fit",
                     str(fitted), "--views", "0,2", "--samples", "12", "--env-size", "8",
                     "--levels", "2", "--prefilter-samples", "64", "--lut-res", "16",
                     "--out", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "metrics.json").read_text())
    assert {"psnr", "ssim", "albedo_huber", "angular_deg", "rmse", "norm_rmse",
            "si_rmse", "views"} <= set(rep)
    assert [v["view"] for v in rep["views"]] == [0, 2]


def test_render_lut_prefilter(fitted, dataset, tmp_path):
    assert cli.main(["lut-bake", "--res", "16", "--out", str(tmp_path / "lut.pfm")]) == 0
    assert read_pfm(tmp_path / "lut.pfm").shape == (16, 16, 3)
    assert cli.main(["prefilter", "--env", str(fitted / "env_cube.pfm"), "--levels", "2",
                     "--samples", "64", "--out", str(tmp_path / "pre")]) == 0
    assert (tmp_path / "pre" / "specular_2.pfm").exists()
    assert (tmp_path / "pre" / "irradiance.pfm").exists()
    # equirect input is converted to a cubemap
    assert cli.main(["render", "--checkpoint", str(fitted / "field.twnf"),
                     "--camera", str(dataset / "ds" / "scene_0000" / "cameras.json"),
                     "--env", str(dataset / "ds" / "scene_0000" / "env.pfm"),
                     "--samples", "12", "--env-size", "8", "--levels", "2",
                     "--prefilter-samples", "64", "--lut", str(tmp_path / "lut.pfm"),
                     "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "view_2_composite.png").exists()


def test_exit_codes(dataset, tmp_path, capsys):
    # configuration
    assert cli.main(["fit", "--scene", str(dataset / "ds"), "--iters", "0"]) == 2
    assert cli.main(["fit", "--scene", str(dataset / "ds"), "--weights", '{"Q": 1}']) == 2
    assert cli.main(["lut-bake", "--res", "4", "--out", str(tmp_path / "l.pfm")]) == 2
    with pytest.raises(SystemExit) as e:
        cli.main(["fit", "--kind", "video", "--scene", "x"])
    assert e.value.code == 2
    # I/O
    assert cli.main(["fit", "--scene", str(tmp_path / "missing")]) == 3
    assert cli.main(["mesh", "--checkpoint", str(tmp_path / "none.twnf")]) == 3
    # empty input
    from pbrfit.checkpoint import save_field
    from pbrfit.volfield import TricolumnField
    fld = TricolumnField.zeros(4, 9)
    save_field(tmp_path / "empty.twnf", fld.with_params(dict(fld.param_arrays(), xy=fld.xy - 50)))
    assert cli.main(["mesh", "--checkpoint", str(tmp_path / "empty.twnf"), "--grid", "8",
                     "--out", str(tmp_path / "e.ply")]) == 4
    err = capsys.readouterr().err
    assert "empty field" in err and err.count("empty field") == 1


def test_equirect_env_loading(tmp_path):
    eq = np.ones((8, 16, 3), dtype=np.float32) * 0.5
    write_pfm(tmp_path / "eq.pfm", eq)
    cube = cli.load_environment(str(tmp_path / "eq.pfm"), 4)
    assert cube.size == 4
    np.testing.assert_allclose(cube.faces, 0.5, rtol=1e-6)
    write_pfm(tmp_path / "odd.pfm", np.ones((5, 7, 3), dtype=np.float32))
    with pytest.raises(DataIOError):
        cli.load_environment(str(tmp_path / "odd.pfm"), 4)
    assert cli.main(["prefilter", "--env", str(tmp_path / "odd.pfm"),
                     "--out", str(tmp_path / "p")]) == 3


def test_substreams_are_distinct_and_stable():
    a = cli.substream(7, "gen", 0)
    assert a == cli.substream(7, "gen", 0)
    assert len({a, cli.substream(7, "gen", 1), cli.substream(8, "gen", 0),
                cli.substream(7, "lut")}) == 4


def test_help_and_module_entry():
    r = subprocess.run([sys.executable, "-m", "pbrfit", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0
    for name in ("gen", "render", "fit", "mesh", "metrics", "lut-bake", "prefilter"):
        assert name in r.stdout
    r = subprocess.run([sys.executable, "-m", "pbrfit", "mesh", "--help"], capture_output=True,
                       text=True)
    assert "--grid" in r.stdout and "--threads" in r.stdout and "--float" in r.stdout
    assert subprocess.run([sys.executable, "-m", "pbrfit"], capture_output=True).returncode == 2
