"""Command-line interface: ``pbrfit <command> [flags]``.

Commands: gen, render, fit, mesh, metrics, lut-bake, prefilter.

Every flag may also come from ``--config <json>`` (keys are flag names with
or without dashes); explicit flags win over the file, the file wins over
built-in defaults.  ``--threads`` (fallback: ``TWN_THREADS``) caps the BLAS
thread pools.  Randomness derives from ``--seed`` through named sub-streams
(:func:`substream`).

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 empty or degenerate
input, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
import zlib
from dataclasses import dataclass

import numpy as np

from . import __version__
from .errors import (ConfigError, DataIOError, EmptyInputError, NumericError,
                     OutOfBoundsError, ShapeError)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_EMPTY, EXIT_NUMERIC = 0, 2, 3, 4, 5
FLOAT_MODES = ("strict-64", "fast-32")
THREADS_ENV = "TWN_THREADS"

log = logging.getLogger("pbrfit")


@dataclass
class GlobalConfig:
    seed: int = 0
    float_mode: str = "strict-64"
    threads: int = None
    out: str = None


def substream(seed, *names) -> int:
    """Deterministic 32-bit seed for the sub-stream ``names`` of ``seed``."""
    key = [int(seed) & 0xFFFFFFFF] + [zlib.crc32(str(n).encode()) for n in names]
    return int(np.random.SeedSequence(key).generate_state(1)[0])


# -- flag plumbing ---------------------------------------------------------------

class _Flags:
    """Registers flags with a ``None`` parser default so explicit values,
    config-file values and built-in defaults can be told apart."""

    def __init__(self, parser):
        self.parser = parser
        self.defaults = {}
        self.types = {}
        self.required = set()

    def add(self, flag, default, help, type=str, choices=None, required=False, unit=None):
        dest = flag.lstrip("-").replace("-", "_")
        note = "required" if required else f"default: {default}"
        if unit:
            note = f"{unit}; {note}"
        self.parser.add_argument(flag, dest=dest, type=type, choices=choices, default=None,
                                 help=f"{help} ({note})")
        self.defaults[dest] = default
        self.types[dest] = type
        if required:
            self.required.add(dest)


def _global_flags(f: _Flags, out_default, out_help):
    f.add("--seed", 0, "master random seed", type=int)
    f.add("--threads", None, f"BLAS/OpenMP thread cap (falls back to ${THREADS_ENV})", type=int)
    f.add("--float", "strict-64", "arithmetic mode", choices=FLOAT_MODES)
    f.add("--out", out_default, out_help)
    f.parser.add_argument("--config", default=None,
                          help="JSON file of flag values, overridden by explicit flags")


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as e:
        raise DataIOError(f"cannot read config {path}: {e}") from e
    except ValueError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return {k.lstrip("-").replace("-", "_"): v for k, v in cfg.items()}


def resolve(args, flags: _Flags) -> dict:
    """Merge explicit flags over ``--config`` over defaults."""
    cfg = _load_config(getattr(args, "config", None))
    unknown = set(cfg) - set(flags.defaults)
    if unknown:
        raise ConfigError(f"unknown config key(s) for {args.command}: {sorted(unknown)}")
    out = {}
    for dest, default in flags.defaults.items():
        v = getattr(args, dest)
        if v is None and dest in cfg:
            v = cfg[dest]
            typ = flags.types[dest]
            if v is not None and typ is not str:
                try:
                    v = typ(v)
                except (TypeError, ValueError) as e:
                    raise ConfigError(f"config value for --{dest.replace('_', '-')}: {e}") from e
        if v is None:
            if dest in flags.required:
                raise ConfigError(f"--{dest.replace('_', '-')} is required")
            v = default
        out[dest] = v
    if out.get("float") not in FLOAT_MODES:
        raise ConfigError(f"--float must be one of {FLOAT_MODES}")
    return out


def _check(cond, flag, msg):
    if not cond:
        raise ConfigError(f"{flag} {msg}")


def _threads(opts):
    n = opts.get("threads")
    if n is None and os.environ.get(THREADS_ENV):
        try:
            n = int(os.environ[THREADS_ENV])
        except ValueError as e:
            raise ConfigError(f"{THREADS_ENV} must be an integer") from e
    if n is None:
        return None
    _check(n >= 1, "--threads", "must be >= 1")
    return n


def _globals(opts) -> GlobalConfig:
    return GlobalConfig(opts["seed"], opts["float"], _threads(opts), opts["out"])


# -- shared loaders ------------------------------------------------------------------

def load_environment(path, size=64):
    """Read an environment PFM: a ``6S x S`` cubemap strip is used as is, a
    2:1 equirect map is resampled to faces of ``size``."""
    from .imageio import read_pfm
    from .pbr.cubemap import Cubemap, equirect_to_cubemap, from_strip

    img = read_pfm(path)
    if img.ndim != 3:
        raise DataIOError(f"{path}: environment must be an RGB PFM")
    img = np.maximum(img.astype(np.float64), 0.0)
    if not np.all(np.isfinite(img)):
        raise DataIOError(f"{path}: environment has non-finite texels")
    h, w = img.shape[:2]
    if h == 6 * w:
        return Cubemap(from_strip(img))
    if w == 2 * h:
        return equirect_to_cubemap(img, size, supersample=2)
    raise DataIOError(f"{path}: expected a 6SxS cubemap strip or a 2:1 equirect map, got {w}x{h}")


def _load_lut(path, res, seed):
    from .pbr.lut import bake_lut, read_lut

    return read_lut(path) if path else bake_lut(res, 1024, seed=seed)


def _load_scene(path):
    from .procgen import read_dataset, read_scene

    if os.path.isfile(os.path.join(path, "spec.json")):
        return read_scene(path)
    return read_dataset(path)[0]


def _parse_weights(text):
    from .objective import LossWeights

    if text is None:
        return LossWeights()
    if isinstance(text, dict):
        return LossWeights.from_dict(text)
    if os.path.isfile(text):
        try:
            with open(text) as fh:
                return LossWeights.from_dict(json.load(fh))
        except OSError as e:
            raise DataIOError(f"cannot read weights {text}: {e}") from e
        except ValueError as e:
            raise ConfigError(f"weights file {text}: {e}") from e
    try:
        d = json.loads(text)
    except ValueError as e:
        raise ConfigError(f"--weights is neither a file nor JSON: {e}") from e
    if not isinstance(d, dict):
        raise ConfigError("--weights must be a JSON object")
    return LossWeights.from_dict(d)


def _parse_views(text, n):
    if text in (None, "", "all"):
        return list(range(n))
    try:
        ids = [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError as e:
        raise ConfigError(f"--views must be 'all' or comma-separated indices: {e}") from e
    bad = [i for i in ids if not 0 <= i < n]
    _check(not bad and ids, "--views", f"indices must lie in [0, {n}), got {text}")
    return ids


def _makedirs(d):
    try:
        os.makedirs(d, exist_ok=True)
    except OSError as e:
        raise DataIOError(f"cannot create {d}: {e}") from e


def _write_json(obj, path):
    try:
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=1, sort_keys=True)
            fh.write("\n")
    except OSError as e:
        raise DataIOError(f"cannot write {path}: {e}") from e


# -- commands --------------------------------------------------------------------

def cmd_gen(o, g: GlobalConfig):
    from . import procgen as pg
    from . import volrender as vr

    for k in ("scenes", "views", "res", "mc_samples", "env_size", "env_width", "march_samples"):
        _check(o[k] >= 1, "--" + k.replace("_", "-"), f"must be >= 1, got {o[k]}")
    _check(o["march_samples"] >= 2, "--march-samples", "must be >= 2")
    _check(o["env_width"] % 2 == 0, "--env-width", "must be even")
    samples = []
    for i in range(o["scenes"]):
        seed = substream(g.seed, "gen", i)
        if o["shape"] == "sphere":
            spec = pg.sphere_scene(seed, n_views=o["views"], res=o["res"])
        else:
            spec = pg.sample_scene(seed, n_views=o["views"], res=o["res"])
        log.info("scene %d: %d primitive(s), env %s", i, len(spec.primitives), spec.env.kind)
        samples.append(pg.render_ground_truth(
            spec, cfg=vr.MarchConfig(o["march_samples"]), mc_samples=o["mc_samples"],
            env_size=o["env_size"], env_width=o["env_width"]))
    _makedirs(g.out)
    for d in pg.write_dataset(samples, g.out):
        print(d)
    return EXIT_OK


def cmd_render(o, g: GlobalConfig):
    from . import procgen as pg
    from . import volrender as vr
    from .checkpoint import load_field
    from .pbr.prefilter import prefilter_environment

    _check(o["samples"] >= 2, "--samples", "must be >= 2")
    _check(o["env_size"] >= 2, "--env-size", "must be >= 2")
    fld = load_field(o["checkpoint"])
    cams = pg.read_cameras(o["camera"])
    if not cams:
        raise EmptyInputError(f"{o['camera']}: no cameras")
    cube = load_environment(o["env"], o["env_size"])
    env = prefilter_environment(cube, o["levels"], o["prefilter_samples"],
                                seed=substream(g.seed, "prefilter"))
    lut = _load_lut(o["lut"], o["lut_res"], substream(g.seed, "lut"))
    cfg = vr.MarchConfig(o["samples"])
    _makedirs(g.out)
    for k, cam in enumerate(cams):
        b = vr.render_shaded(fld, cam, env, lut, cube.faces, cfg, order=o["composite_order"])
        vr.write_buffers(b.numpy(), g.out, f"view_{k}")
    print(g.out)
    return EXIT_OK


def cmd_fit(o, g: GlobalConfig):
    from . import fitter as ft
    from .checkpoint import save_field
    from .imageio import write_pfm
    from .pbr.cubemap import cubemap_to_equirect, to_strip

    _check(o["views"] >= 1, "--views", "must be >= 1")
    sample = _load_scene(o["scene"])
    cfg = ft.FitConfig(
        lr=o["lr"], iterations=o["iters"], views=o["views"], kind=o["kind"],
        weights=_parse_weights(o["weights"]), seed=g.seed, resolution=o["resolution"],
        n_samples=o["samples"], env_size=o["env_size"], field_gain=o["field_gain"],
        env_gain=o["env_gain"], composite_order=o["composite_order"], precision=g.float_mode)
    res = ft.fit_scene(sample, cfg, log=log.info)
    _makedirs(g.out)
    save_field(os.path.join(g.out, "field.twnf"), res.field)
    if sample.env is not None:
        h, w = np.asarray(sample.env).shape[:2]
    else:
        h, w = 64, 128
    write_pfm(os.path.join(g.out, "env.pfm"), cubemap_to_equirect(res.cubemap, w, h, supersample=2))
    write_pfm(os.path.join(g.out, "env_cube.pfm"), to_strip(res.cubemap.faces))
    _write_json(res.report, os.path.join(g.out, "report.json"))
    ft.write_loss_curve(res.state.history, os.path.join(g.out, "loss_curve.csv"))
    log.info("fit finished in %.1f s", res.seconds)
    print(g.out)
    return EXIT_OK


def cmd_mesh(o, g: GlobalConfig):
    from . import mesher
    from . import volrender as vr
    from .checkpoint import load_field

    _check(o["grid"] >= 2, "--grid", "must be >= 2")
    _check(0 < o["smooth_lambda"] <= 1, "--smooth-lambda", "must lie in (0, 1]")
    _check(o["smooth_iters"] >= 0, "--smooth-iters", "must be >= 0")
    _check(o["offset"] >= 0, "--offset", "must be >= 0 (lattice cells)")
    if o["iso"] is not None:
        _check(o["iso"] > 0, "--iso", "must be > 0")
    fld = load_field(o["checkpoint"])
    mesh = mesher.mesh_field(fld, o["grid"], o["iso"], o["smooth_lambda"],
                             o["smooth_iters"], o["offset"], cfg=vr.MarchConfig(o["samples"]))
    if not len(mesh.faces):
        raise EmptyInputError("empty field: no surface at the iso-level")
    parent = os.path.dirname(os.path.abspath(g.out))
    _makedirs(parent)
    mesher.write_ply(mesh, g.out)
    log.info("mesh: %d vertices, %d faces", len(mesh.vertices), len(mesh.faces))
    print(g.out)
    return EXIT_OK


def cmd_metrics(o, g: GlobalConfig):
    from . import fitter as ft
    from .checkpoint import load_field

    sample = _load_scene(o["scene"])
    ckpt, env_path = o["checkpoint"], o["env"]
    if o["fit"]:
        ckpt = ckpt or os.path.join(o["fit"], "field.twnf")
        env_path = env_path or os.path.join(o["fit"], "env_cube.pfm")
    if not ckpt or not env_path:
        raise ConfigError("metrics needs --fit DIR or both --checkpoint and --env")
    fld = load_field(ckpt)
    cube = load_environment(env_path, o["env_size"])
    ids = _parse_views(o["views"], len(sample.spec.cameras))
    cfg = ft.FitConfig(seed=g.seed, n_samples=o["samples"], prefilter_levels=o["levels"],
                       prefilter_samples=o["prefilter_samples"], lut_size=o["lut_res"],
                       composite_order=o["composite_order"])
    rep = ft.evaluate_holdout(fld, cube, sample, ids, cfg)
    out = g.out
    if os.path.isdir(out):
        out = os.path.join(out, "metrics.json")
    _write_json(rep, out)
    print(out)
    return EXIT_OK


def cmd_lut_bake(o, g: GlobalConfig):
    from .pbr.lut import bake_lut, write_lut

    _check(o["res"] >= 16, "--res", "must be >= 16")
    _check(o["samples"] >= 1024, "--samples", "must be >= 1024")
    write_lut(bake_lut(o["res"], o["samples"], seed=substream(g.seed, "lut")), g.out)
    print(g.out)
    return EXIT_OK


def cmd_prefilter(o, g: GlobalConfig):
    from .imageio import write_pfm
    from .pbr.cubemap import to_strip
    from .pbr.prefilter import prefilter_environment

    _check(o["levels"] >= 1, "--levels", "must be >= 1")
    _check(o["samples"] >= 1, "--samples", "must be >= 1")
    cube = load_environment(o["env"], o["size"])
    env = prefilter_environment(cube, o["levels"], o["samples"], seed=substream(g.seed, "prefilter"))
    _makedirs(g.out)
    for j, faces in enumerate(env.specular):
        write_pfm(os.path.join(g.out, f"specular_{j}.pfm"), to_strip(np.asarray(faces)))
    write_pfm(os.path.join(g.out, "irradiance.pfm"), to_strip(np.asarray(env.diffuse)))
    print(g.out)
    return EXIT_OK


# -- parser -------------------------------------------------------------------------

def build_parser():
    from .volrender import COMPOSITE_ORDERS

    top = argparse.ArgumentParser(
        prog="pbrfit", description="Differentiable PBR inverse rendering on factored volume fields.",
        epilog="Exit codes: 0 ok, 2 config, 3 I/O, 4 empty/degenerate input, 5 numeric failure.")
    top.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = top.add_subparsers(dest="command", metavar="command")
    registry = {}

    def command(name, fn, help, out_default, out_help):
        p = sub.add_parser(name, help=help, description=help)
        f = _Flags(p)
        _global_flags(f, out_default, out_help)
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        registry[name] = (fn, f)
        return f

    f = command("gen", cmd_gen, "generate a procedural dataset", "dataset", "output dataset directory")
    f.add("--scenes", 1, "number of scenes", type=int)
    f.add("--views", 8, "views per scene", type=int)
    f.add("--res", 128, "image width and height", type=int, unit="pixels")
    f.add("--shape", "random", "scene family", choices=("random", "sphere"))
    f.add("--mc-samples", 4096, "Monte-Carlo shading samples per pixel", type=int)
    f.add("--march-samples", 128, "ray-march samples per ray", type=int)
    f.add("--env-size", 64, "cubemap face size", type=int, unit="texels")
    f.add("--env-width", 128, "equirect env.pfm width", type=int, unit="texels")

    f = command("render", cmd_render, "render G-buffers, shading and composites of a checkpoint",
                "render", "output directory")
    f.add("--checkpoint", None, "TWNF field checkpoint", required=True)
    f.add("--camera", None, "cameras.json", required=True)
    f.add("--env", None, "environment PFM (cubemap strip or equirect)", required=True)
    f.add("--samples", 64, "ray-march samples per ray", type=int)
    f.add("--env-size", 64, "cubemap face size for equirect input", type=int, unit="texels")
    f.add("--levels", 5, "specular mip levels above the base", type=int)
    f.add("--prefilter-samples", 1024, "GGX samples per texel", type=int)
    f.add("--lut", None, "cached split-sum LUT PFM (baked when absent)")
    f.add("--lut-res", 64, "LUT resolution when baking", type=int)
    f.add("--composite-order", "linear", "background compositing order", choices=COMPOSITE_ORDERS)

    f = command("fit", cmd_fit, "fit a field and environment to one scene", "fit",
                "output directory")
    f.add("--scene", None, "scene directory (or dataset directory: first scene)", required=True)
    f.add("--views", 4, "number of training views", type=int)
    f.add("--iters", 2000, "Adam iterations", type=int)
    f.add("--lr", 1e-4, "Adam learning rate", type=float)
    f.add("--kind", "synthetic", "supervision kind", choices=("synthetic", "real"))
    f.add("--weights", None, "loss weights as JSON text or file, keys R S M N TV d env")
    f.add("--resolution", 32, "tricolumn lattice resolution", type=int, unit="cells")
    f.add("--samples", 32, "ray-march samples per ray", type=int)
    f.add("--env-size", 16, "fitted cubemap face size", type=int, unit="texels")
    f.add("--field-gain", 100.0, "field parameter gain", type=float)
    f.add("--env-gain", 100.0, "environment parameter gain", type=float)
    f.add("--composite-order", "linear", "background compositing order", choices=COMPOSITE_ORDERS)

    f = command("mesh", cmd_mesh, "extract a PBR vertex-attributed mesh", "mesh.ply",
                "output PLY path")
    f.add("--checkpoint", None, "TWNF field checkpoint", required=True)
    f.add("--grid", 32, "tetrahedral lattice resolution G", type=int, unit="vertices per axis")
    f.add("--iso", None, "density iso-value (ln 2 / cell when absent)", type=float,
          unit="1/length")
    f.add("--smooth-lambda", 0.5, "edge smoothing step", type=float)
    f.add("--smooth-iters", 3, "smoothing iterations", type=int)
    f.add("--offset", 2.0, "bake start offset along the normal", type=float, unit="lattice cells")
    f.add("--samples", 64, "ray-march samples for baking", type=int)

    f = command("metrics", cmd_metrics, "score a fitted model against a scene", "metrics.json",
                "output JSON path (or directory)")
    f.add("--scene", None, "ground-truth scene directory", required=True)
    f.add("--fit", None, "fit output directory (field.twnf, env_cube.pfm)")
    f.add("--checkpoint", None, "TWNF checkpoint (overrides --fit)")
    f.add("--env", None, "fitted environment PFM (overrides --fit)")
    f.add("--views", "all", "view indices, comma-separated or 'all'")
    f.add("--samples", 32, "ray-march samples per ray", type=int)
    f.add("--env-size", 16, "cubemap face size for equirect input", type=int, unit="texels")
    f.add("--levels", 4, "specular mip levels", type=int)
    f.add("--prefilter-samples", 256, "GGX samples per texel", type=int)
    f.add("--lut-res", 32, "LUT resolution", type=int)
    f.add("--composite-order", "linear", "background compositing order", choices=COMPOSITE_ORDERS)

    f = command("lut-bake", cmd_lut_bake, "bake the split-sum F1/F2 table", "lut.pfm",
                "output PFM path")
    f.add("--res", 64, "table resolution T", type=int)
    f.add("--samples", 1024, "GGX samples per entry", type=int)

    f = command("prefilter", cmd_prefilter, "prefilter an environment map", "prefiltered",
                "output directory")
    f.add("--env", None, "environment PFM (cubemap strip or equirect)", required=True)
    f.add("--size", 64, "cubemap face size for equirect input", type=int, unit="texels")
    f.add("--levels", 5, "specular mip levels above the base", type=int)
    f.add("--samples", 1024, "GGX samples per texel", type=int)
    return top, registry


def main(argv=None) -> int:
    parser, registry = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    fn, flags = registry[args.command]
    try:
        opts = resolve(args, flags)
        g = _globals(opts)
        limits = contextlib.nullcontext()
        if g.threads is not None:
            from threadpoolctl import threadpool_limits
            limits = threadpool_limits(limits=g.threads)
        with limits:
            return fn(opts, g)
    except NumericError as e:
        code, msg = EXIT_NUMERIC, e
    except EmptyInputError as e:
        code, msg = EXIT_EMPTY, e
    except DataIOError as e:
        code, msg = EXIT_IO, e
    except (ConfigError, ShapeError, OutOfBoundsError) as e:
        code, msg = EXIT_CONFIG, e
    except OSError as e:
        code, msg = EXIT_IO, e
    print(f"pbrfit {args.command}: error: {msg}", file=sys.stderr)
    return code


def entry():
    sys.exit(main())
