"""Per-scene inverse rendering: fit a tricolumn material field and an
environment cubemap to posed images with Adam.

Optimized variables ``theta`` map to model parameters through fixed gains,
``field = field_gain * theta`` and ``cubemap = softplus(env_gain * theta)``.
A gain multiplies the effective learning rate of its group, which lets the
small default Adam step move voxel densities by the tens of units an opaque
surface needs.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import objective as obj
from . import volrender as vr
from .errors import ConfigError, EmptyInputError, NonFiniteError
from .pbr.cubemap import Cubemap, cubemap_to_equirect, downsample
from .pbr.lut import bake_lut
from .pbr.prefilter import PrefilterOperator
from .pbr.shade import tonemap_srgb
from .volfield import (MixingHead, TricolumnField, inverse_softplus, logit)

INIT_SIGMA = 0.05
INIT_ALBEDO = 0.5
INIT_METAL = 0.1
INIT_ROUGH = 0.7
INIT_ENV = 0.5
PRECISIONS = {"strict-64": np.float64, "fast-32": np.float32}


@dataclass
class FitConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 2000
    views: int = 4
    kind: str = "synthetic"
    weights: obj.LossWeights = field(default_factory=obj.LossWeights)
    seed: int = 0
    resolution: int = 32
    features: int = 9
    mixing: str = "sum"
    hidden: int = 32
    n_samples: int = 32
    env_size: int = 16
    prefilter_levels: int = 4
    prefilter_samples: int = 256
    lut_size: int = 32
    field_gain: float = 100.0
    env_gain: float = 100.0
    mix_gain: float = 1.0
    composite_order: str = "linear"
    precision: str = "strict-64"

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = obj.LossWeights.from_dict(self.weights)
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if int(self.iterations) < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.kind not in ("synthetic", "real"):
            raise ConfigError(f"kind must be synthetic or real, got {self.kind!r}")
        if self.features < 9:
            raise ConfigError("need at least 9 features per cell")
        if self.mixing == "sum" and self.features != 9:
            raise ConfigError("sum mixing needs exactly 9 features")
        if self.resolution < 2 or self.env_size < 2 or self.n_samples < 2:
            raise ConfigError("resolution, env_size and n_samples must be >= 2")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")
        if min(self.field_gain, self.env_gain, self.mix_gain) <= 0:
            raise ConfigError("parameter gains must be > 0")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def to_dict(self):
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d


@dataclass
class FitState:
    params: dict
    m: dict
    v: dict
    step: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def fresh(cls, params):
        z = {k: np.zeros_like(v) for k, v in params.items()}
        return cls(dict(params), z, {k: a.copy() for k, a in z.items()}, 0, [])


def adam_step(state: FitState, grads: dict, cfg: FitConfig) -> FitState:
    """One bias-corrected Adam update; returns a new state."""
    for k, g in grads.items():
        if k not in state.params or np.shape(g) != state.params[k].shape:
            raise ConfigError(f"gradient for {k!r} does not match the parameters")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {k!r} at step {state.step}")
    t = state.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    p, m, v = {}, {}, {}
    for k, x in state.params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(x)
        m[k] = b1 * state.m[k] + (1 - b1) * g
        v[k] = b2 * state.v[k] + (1 - b2) * g * g
        mh = m[k] / (1 - b1 ** t)
        vh = v[k] / (1 - b2 ** t)
        p[k] = x - cfg.lr * mh / (np.sqrt(vh) + cfg.eps)
    return FitState(p, m, v, t, list(state.history))


# -- parameterization ---------------------------------------------------------------

def _mixing_init(cfg: FitConfig):
    if cfg.mixing == "sum":
        return MixingHead.identity(9)
    if cfg.mixing == "affine":
        w = np.zeros((cfg.features, 9))
        w[:9, :9] = np.eye(9)
        return MixingHead("affine", {"w": w, "b": np.zeros(9)}, cfg.features, 9)
    return MixingHead.identity_mlp(cfg.features, 9, max(cfg.hidden, 18))


def _gain(cfg, key):
    if key == "env":
        return cfg.env_gain
    return cfg.mix_gain if key.startswith("mix.") else cfg.field_gain


def initial_field(cfg: FitConfig, rng=None) -> TricolumnField:
    """Thin uniform fog with mid-range materials; small random normals."""
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    r, c = cfg.resolution, cfg.features
    raw = np.zeros((c, r, r, r))
    raw[0] = inverse_softplus(INIT_SIGMA)
    raw[1:4] = logit(INIT_ALBEDO)
    raw[4] = logit(INIT_METAL)
    raw[5] = logit(INIT_ROUGH)
    raw[6:9] = rng.normal(0.0, 0.1, (3, r, r, r))
    plane = raw.reshape(c * r, r, r) / 3.0
    # the xy plane holds [c, z, y, x]; the others are the same lattice seen
    # in their own axis order
    g = raw / 3.0
    yz = np.transpose(g, (0, 3, 1, 2)).reshape(c * r, r, r)
    zx = np.transpose(g, (0, 2, 3, 1)).reshape(c * r, r, r)
    return TricolumnField(plane, yz, zx, _mixing_init(cfg))


def params_to_theta(fld: TricolumnField, faces, cfg: FitConfig) -> dict:
    theta = {k: np.array(v, dtype=float) / _gain(cfg, k) for k, v in fld.param_arrays().items()}
    theta["env"] = inverse_softplus(np.maximum(faces, 1e-6)) / cfg.env_gain
    return theta


def theta_to_model(theta, template: TricolumnField, cfg: FitConfig):
    """Numpy field and cubemap for optimized variables ``theta``."""
    p = {k: v * _gain(cfg, k) for k, v in theta.items() if k != "env"}
    faces = np.logaddexp(0.0, theta["env"] * cfg.env_gain)
    return template.with_params(p), Cubemap(faces)


def _resample_faces(faces, size):
    s = faces.shape[1]
    if s == size:
        return np.array(faces, dtype=float)
    if s % size:
        raise ConfigError(f"cannot resample cubemap {s} -> {size}")
    return np.asarray(downsample(faces, s // size))


# -- the fit ------------------------------------------------------------------------

def select_views(n_total, k):
    """``k`` view indices spread evenly over ``n_total``."""
    if k < 1 or n_total < 1:
        raise EmptyInputError("no views to fit")
    k = min(k, n_total)
    return sorted({int(i) for i in np.floor(np.arange(k) * n_total / k)})


class _View:
    def __init__(self, cam, gt, cfg: FitConfig, bounds):
        self.cam = cam
        o, d = vr.generate_rays(cam)
        self.samples = vr.RaySamples(o, d, bounds, vr.MarchConfig(cfg.n_samples), cfg.dtype)
        self.samples.attach_lattice((cfg.resolution,) * 3, cfg.dtype)
        as3 = lambda x: np.asarray(x, dtype=float)  # noqa: E731
        self.gt = {k: as3(v) for k, v in gt.items()}
        self.mask = self.gt["mask"]
        if "shaded" in self.gt:
            self.target_ldr = self.mask * np.asarray(tonemap_srgb(self.gt["shaded"]))


class Fitter:
    """Holds the precomputed operators and evaluates the loss and its gradient."""

    def __init__(self, sample, cfg: FitConfig, view_ids=None):
        self.cfg = cfg
        cams = sample.spec.cameras
        if not cams or not sample.views:
            raise EmptyInputError("dataset sample has no views")
        ids = select_views(len(cams), cfg.views) if view_ids is None else list(view_ids)
        if len(ids) < 1:
            raise EmptyInputError("no views to fit")
        self.view_ids = ids
        self.template = initial_field(cfg)
        self.views = [_View(cams[i], sample.views[i], cfg, self.template.bounds) for i in ids]
        self.env_gt = np.asarray(sample.env, dtype=float) if sample.env is not None else None
        self.prefilter = PrefilterOperator(cfg.env_size, cfg.prefilter_levels,
                                           cfg.prefilter_samples, seed=cfg.seed)
        self.lut = bake_lut(cfg.lut_size, 1024, seed=cfg.seed)

    def loss(self, theta: dict, with_grad=True):
        cfg = self.cfg
        leaves = {k: ad.Var(v) if with_grad else v for k, v in theta.items()}
        fparams = {k: ad.mul(x, _gain(cfg, k)) for k, x in leaves.items() if k != "env"}
        faces = ad.softplus(ad.mul(leaves["env"], cfg.env_gain))
        env = self.prefilter(faces)
        np_field = self.template.with_params({k: ad.value(v) for k, v in fparams.items()})
        nv = len(self.views)
        acc = {}

        def add(name, val):
            acc[name] = ad.add(acc.get(name, 0.0), ad.mul(val, 1.0 / nv))

        for view in self.views:
            b = vr.render_view(self.template, view.cam, params=fparams, samples=view.samples)
            b.shaded = vr.shade_buffers(b, env, self.lut, view.cam)
            gt, m = view.gt, view.mask
            add("M", obj.mask_bce(m, b.mask))
            if "depth" in gt:
                add("d", obj.depth_l1(gt["depth"], b.depth, m))
            pn = vr.pseudo_normals(np_field, view.cam, ad.value(b.depth), ad.value(b.mask))
            valid = (np.linalg.norm(pn, axis=-1, keepdims=True) > 0) * m
            add("N", obj.normal_cosine(pn, b.normal, valid))
            add("TV", ad.add(ad.add(obj.tv(b.normal), obj.tv(b.albedo)), obj.tv(b.depth)))
            if cfg.kind == "synthetic":
                s = 0.0
                for ch in ("albedo", "metal", "rough", "normal"):
                    s = ad.add(s, obj.masked_huber(getattr(b, ch), gt[ch], m))
                add("S", s)
                pred = ad.mul(m, tonemap_srgb(b.shaded))
                add("R", obj.photometric(view.target_ldr, pred))
            else:
                comp = vr.composite_background(b.shaded, b.mask, view.cam, faces,
                                               cfg.composite_order)
                add("R", obj.photometric(gt["composite"], comp))
        if cfg.kind == "synthetic" and self.env_gt is not None:
            h, w = self.env_gt.shape[:2]
            acc["env"] = obj.env_loss(self.env_gt, cubemap_to_equirect(faces, w, h))
        total = obj.total_loss(acc, cfg.weights, cfg.kind)
        terms = {k: float(ad.value(v)) for k, v in acc.items()}
        terms["total"] = float(ad.value(total))
        grads = None
        if with_grad:
            if ad.is_var(total):
                ad.backward(total)
            grads = {k: (x.grad if x.grad is not None else np.zeros_like(x.value))
                     for k, x in leaves.items()}
        return terms, grads


@dataclass
class FitResult:
    field: TricolumnField
    cubemap: Cubemap
    report: dict
    state: FitState
    seconds: float = 0.0


def fit_scene(sample, cfg: FitConfig = None, view_ids=None, init_field=None,
              init_faces=None, callback=None, log=None) -> FitResult:
    """Fit a field and cubemap to the views of one dataset sample.

    ``init_field`` / ``init_faces`` replace the default fog initialization
    (the field must share the configured lattice and mixing head).
    """
    cfg = cfg or FitConfig()
    if isinstance(sample, (list, tuple)):
        if not sample:
            raise EmptyInputError("no dataset samples")
        sample = sample[0]
    fitter = Fitter(sample, cfg, view_ids)
    fld0 = init_field if init_field is not None else fitter.template
    if init_field is not None:
        fitter.template = replace(init_field)
    faces0 = (np.full((6, cfg.env_size, cfg.env_size, 3), INIT_ENV) if init_faces is None
              else _resample_faces(np.asarray(init_faces), cfg.env_size))
    theta = {k: v.astype(cfg.dtype) for k, v in params_to_theta(fld0, faces0, cfg).items()}
    state = FitState.fresh(theta)
    t_start = time.time()
    for it in range(int(cfg.iterations)):
        terms, grads = fitter.loss(state.params)
        if not math.isfinite(terms["total"]):
            raise NonFiniteError(f"loss became non-finite at step {it}")
        hist = state.history + [terms]
        state = adam_step(state, grads, cfg)
        state.history = hist
        if callback is not None:
            callback(it, terms)
        if log is not None and (it % 50 == 0 or it == cfg.iterations - 1):
            log(f"step {it:5d}  " + "  ".join(f"{k}={v:.5f}" for k, v in terms.items()))
    final, _ = fitter.loss(state.params, with_grad=False)
    fld, cube = theta_to_model(state.params, fitter.template, cfg)
    report = {"config": cfg.to_dict(), "views": fitter.view_ids,
              "steps": state.step, "final": final}
    return FitResult(fld, cube, report, state, time.time() - t_start)


# -- evaluation ----------------------------------------------------------------------

def evaluate_holdout(fld, cube, sample, view_ids, cfg: FitConfig = None, env_width=None):
    """Composite PSNR / SSIM, masked albedo Huber and illumination metrics of
    a fitted model against held-out ground-truth views."""
    cfg = cfg or FitConfig()
    op = PrefilterOperator(cube.size, cfg.prefilter_levels, cfg.prefilter_samples, seed=cfg.seed)
    env = op(cube.faces)
    lut = bake_lut(cfg.lut_size, 1024, seed=cfg.seed)
    march = vr.MarchConfig(cfg.n_samples)
    per_view = []
    for i in view_ids:
        cam, gt = sample.spec.cameras[i], sample.views[i]
        b = vr.render_shaded(fld, cam, env, lut, cube.faces, march, order=cfg.composite_order)
        comp = np.asarray(b.composite)
        m = np.asarray(gt["mask"], dtype=float)
        per_view.append({
            "view": int(i),
            "psnr": obj.metric_psnr(gt["composite"], comp),
            "ssim": obj.metric_ssim(gt["composite"], comp),
            "albedo_huber": float(obj.masked_huber(np.asarray(b.albedo), gt["albedo"], m))})
    out = {"views": per_view}
    for k in ("psnr", "ssim", "albedo_huber"):
        out[k] = float(np.mean([v[k] for v in per_view])) if per_view else float("nan")
    if sample.env is not None:
        gt_env = np.asarray(sample.env, dtype=float)
        h, w = gt_env.shape[:2]
        pred_env = np.asarray(cubemap_to_equirect(cube, w, h, supersample=2))
        ang, rmse, nrmse, si = obj.illum_metrics(gt_env, pred_env)
        out.update(angular_deg=ang, rmse=rmse, norm_rmse=nrmse, si_rmse=si)
    return out


def write_report(report, path):
    with open(path, "w") as f:
        json.dump(report, f, indent=1, sort_keys=True)


def read_report(path):
    with open(path) as f:
        return json.load(f)


def write_loss_curve(history, path):
    keys = sorted({k for h in history for k in h})
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step"] + keys)
        for i, h in enumerate(history):
            w.writerow([i] + [repr(h.get(k, "")) for k in keys])
