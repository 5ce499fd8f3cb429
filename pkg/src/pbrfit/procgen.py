"""Procedural PBR scenes: smooth unions of analytic primitives with constant
or striped materials, analytic environment maps, and ground-truth renders.

Shapes live in the unit-scale world box ``[-1, 1]^3``; every primitive's
bounding sphere fits inside ``[-0.9, 0.9]^3``.  The analytic field turns the
signed distance into density ``s * sigmoid(-sdf / tau)``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import volrender as vr
from .errors import ConfigError, DataIOError
from .imageio import read_pfm, read_png, write_pfm, write_png
from .pbr.cubemap import Cubemap, cubemap_to_equirect, equirect_to_cubemap
from .pbr.shade import SurfacePoint, shade_reference_mc
from .volfield import DEFAULT_BOUNDS, Channels

SHAPES = ("sphere", "box", "capsule", "superquadric")
ENV_KINDS = ("gradient-sky", "gaussian-blobs", "hdr-file")
DENSITY_SCALE = 500.0
DENSITY_TAU = 0.001
SCENE_EXTENT = 0.9
PEAK_RADIANCE = 50.0
VIEW_CHANNELS = ("shaded", "albedo", "metal", "rough", "normal", "depth", "mask", "composite")
_PNG_CHANNELS = ("mask", "composite")


# -- scene description ---------------------------------------------------------

@dataclass
class Primitive:
    """``size`` holds: sphere (r,), box half-extents (bx, by, bz), capsule
    (half-length, r) along local y, superquadric (a, b, c, e1, e2)."""

    shape: str
    center: list
    rotation: list
    size: list
    material: dict

    def bounding_radius(self):
        s = self.size
        if self.shape == "sphere":
            return s[0]
        if self.shape == "box":
            return float(np.linalg.norm(s))
        if self.shape == "capsule":
            return s[0] + s[1]
        return float(np.linalg.norm(s[:3]))


@dataclass
class EnvSpec:
    """``params``: gradient-sky {top, bottom}; gaussian-blobs {ambient,
    blobs: [{dir, kappa, color, intensity}]}; hdr-file {path}.  Radiance is
    multiplied by ``exposure``."""

    kind: str = "gradient-sky"
    params: dict = field(default_factory=lambda: {"top": [1.0, 1.0, 1.0],
                                                  "bottom": [1.0, 1.0, 1.0]})
    exposure: float = 1.0


@dataclass
class SceneSpec:
    seed: int
    primitives: list
    blend: float = 0.05
    env: EnvSpec = field(default_factory=EnvSpec)
    cameras: list = field(default_factory=list)

    def __post_init__(self):
        if not self.primitives:
            raise ConfigError("scene needs at least one primitive")
        self.primitives = [p if isinstance(p, Primitive) else Primitive(**p)
                           for p in self.primitives]
        if isinstance(self.env, dict):
            self.env = EnvSpec(**self.env)
        self.cameras = [c if isinstance(c, vr.Camera) else vr.Camera.from_dict(c)
                        for c in self.cameras]

    def to_dict(self):
        return {"seed": int(self.seed), "blend": float(self.blend),
                "primitives": [asdict(p) for p in self.primitives],
                "env": asdict(self.env),
                "cameras": [c.to_dict() for c in self.cameras]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["seed"], d["primitives"], d.get("blend", 0.05),
                   d.get("env", {}), d.get("cameras", []))


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)]])


def sample_material(rng):
    """Bimodal metalness (0 or U(0.7, 1)), roughness U(0.1, 1), albedo
    U(0.05, 0.95) per channel; a third of materials carry stripes."""
    mat = {"albedo": rng.uniform(0.05, 0.95, 3).tolist(),
           "metal": 0.0 if rng.random() < 0.5 else float(rng.uniform(0.7, 1.0)),
           "rough": float(rng.uniform(0.1, 1.0))}
    if rng.random() < 1 / 3:
        mat["texture"] = {"kind": "stripes", "albedo2": rng.uniform(0.05, 0.95, 3).tolist(),
                          "axis": int(rng.integers(3)), "freq": float(rng.uniform(4, 12))}
    return mat


def _sample_primitive(rng):
    shape = SHAPES[rng.integers(len(SHAPES))]
    if shape == "sphere":
        size = [rng.uniform(0.2, 0.6)]
    elif shape == "box":
        size = rng.uniform(0.12, 0.4, 3).tolist()
    elif shape == "capsule":
        size = [rng.uniform(0.1, 0.35), rng.uniform(0.1, 0.25)]
    else:
        size = rng.uniform(0.15, 0.4, 3).tolist() + rng.uniform(0.3, 1.5, 2).tolist()
    p = Primitive(shape, [0.0, 0.0, 0.0], random_rotation(rng).tolist(), size,
                  sample_material(rng))
    room = SCENE_EXTENT - p.bounding_radius()
    p.center = rng.uniform(-room, room, 3).tolist()
    return p


def sample_envspec(rng):
    if rng.random() < 0.3:
        top = rng.uniform(0.4, 1.5, 3)
        return EnvSpec("gradient-sky", {"top": top.tolist(),
                                        "bottom": (top * rng.uniform(0.1, 0.5)).tolist()},
                       float(rng.uniform(0.7, 1.3)))
    blobs = []
    for _ in range(int(rng.integers(1, 4))):
        d = rng.normal(size=3)
        blobs.append({"dir": (d / np.linalg.norm(d)).tolist(),
                      "kappa": float(rng.uniform(8, 60)),
                      "color": rng.uniform(0.6, 1.0, 3).tolist(),
                      "intensity": float(rng.uniform(2, 20))})
    return EnvSpec("gaussian-blobs", {"ambient": rng.uniform(0.05, 0.4, 3).tolist(),
                                      "blobs": blobs}, 1.0)


def orbit_cameras(n_views, res, radius=3.2, fov_deg=40.0, phase=0.0):
    """Cameras on a ring around the origin, alternating elevation."""
    cams = []
    for k in range(n_views):
        az = phase + 2 * np.pi * k / n_views
        el = np.radians(15.0 if k % 2 == 0 else 35.0)
        eye = radius * np.array([np.cos(el) * np.sin(az), np.sin(el), -np.cos(el) * np.cos(az)])
        cams.append(vr.Camera.look_at(eye, fov_deg=fov_deg, width=res))
    return cams


def sample_scene(seed, n_views=8, res=128) -> SceneSpec:
    """Deterministic random scene: 1-6 primitives, a procedural env and an
    orbit of ``n_views`` cameras."""
    rng = np.random.default_rng([int(seed), 0x5CE7E])
    prims = [_sample_primitive(rng) for _ in range(int(rng.integers(1, 7)))]
    env = sample_envspec(rng)
    cams = orbit_cameras(n_views, res, phase=float(rng.uniform(0, 2 * np.pi)))
    return SceneSpec(int(seed), prims, float(rng.uniform(0.02, 0.1)), env, cams)


def sphere_scene(seed=0, radius=0.6, albedo=(0.7, 0.4, 0.2), metal=0.0, rough=0.6,
                 env: EnvSpec = None, n_views=8, res=64) -> SceneSpec:
    prim = Primitive("sphere", [0.0, 0.0, 0.0], np.eye(3).tolist(), [radius],
                     {"albedo": list(albedo), "metal": metal, "rough": rough})
    if env is None:
        env = sample_envspec(np.random.default_rng([int(seed), 0xE4F]))
    return SceneSpec(seed, [prim], 0.05, env, orbit_cameras(n_views, res))


def one_blob_env(direction, kappa=20.0, intensity=20.0, ambient=0.05):
    d = np.asarray(direction, dtype=float)
    return EnvSpec("gaussian-blobs", {
        "ambient": [ambient] * 3,
        "blobs": [{"dir": (d / np.linalg.norm(d)).tolist(), "kappa": kappa,
                   "color": [1.0, 1.0, 1.0], "intensity": intensity}]}, 1.0)


# -- signed distances -------------------------------------------------------------

def _local(p, prim):
    r = np.asarray(prim.rotation, dtype=float)
    return (p - np.asarray(prim.center, dtype=float)) @ r


def primitive_sdf(prim: Primitive, p):
    """Signed distance (exact except the superquadric, which uses a scaled
    implicit function) of world points ``p (N, 3)``."""
    q = _local(np.asarray(p, dtype=float), prim)
    s = prim.size
    if prim.shape == "sphere":
        return np.linalg.norm(q, axis=-1) - s[0]
    if prim.shape == "box":
        d = np.abs(q) - np.asarray(s)
        return (np.linalg.norm(np.maximum(d, 0.0), axis=-1)
                + np.minimum(np.max(d, axis=-1), 0.0))
    if prim.shape == "capsule":
        q = q.copy()
        q[:, 1] -= np.clip(q[:, 1], -s[0], s[0])
        return np.linalg.norm(q, axis=-1) - s[1]
    if prim.shape == "superquadric":
        a, b, c, e1, e2 = s
        x = np.abs(q[:, 0] / a) + 1e-12
        y = np.abs(q[:, 1] / b) + 1e-12
        z = np.abs(q[:, 2] / c) + 1e-12
        f = (x ** (2 / e2) + y ** (2 / e2)) ** (e2 / e1) + z ** (2 / e1)
        return (f ** (e1 / 2) - 1.0) * min(a, b, c)
    raise ConfigError(f"unknown primitive shape {prim.shape!r}")


def smooth_min(a, b, k):
    """Polynomial smooth minimum; equals ``min(a, b)`` once ``|a - b| >= k``."""
    if k <= 0:
        return np.minimum(a, b)
    h = np.maximum(k - np.abs(a - b), 0.0) / k
    return np.minimum(a, b) - h * h * k / 4.0


def material_at(prim: Primitive, p):
    """Albedo (N, 3), metalness (N,), roughness (N,) of ``prim`` at ``p``."""
    m = prim.material
    n = len(p)
    albedo = np.broadcast_to(np.asarray(m["albedo"], dtype=float), (n, 3)).copy()
    tex = m.get("texture")
    if tex and tex.get("kind") == "stripes":
        q = _local(p, prim)
        on = np.sin(tex["freq"] * np.pi * q[:, tex["axis"]]) > 0
        albedo[on] = np.asarray(tex["albedo2"], dtype=float)
    return albedo, np.full(n, float(m["metal"])), np.full(n, float(m["rough"]))


class AnalyticField:
    """Ground-truth field of a scene: SDF smooth union turned into density,
    materials of the nearest primitive, normals from the SDF gradient."""

    bounds = DEFAULT_BOUNDS

    def __init__(self, spec: SceneSpec, scale=DENSITY_SCALE, tau=DENSITY_TAU):
        self.spec, self.scale, self.tau = spec, scale, tau

    def _all_sdf(self, p):
        return np.stack([primitive_sdf(q, p) for q in self.spec.primitives], axis=-1)

    def sdf(self, p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        d = self._all_sdf(p)
        out = d[:, 0]
        for j in range(1, d.shape[1]):
            out = smooth_min(out, d[:, j], self.spec.blend)
        return out

    def sdf_gradient(self, p, h=1e-5):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        g = np.empty_like(p)
        for ax in range(3):
            e = np.zeros(3)
            e[ax] = h
            g[:, ax] = (self.sdf(p + e) - self.sdf(p - e)) / (2 * h)
        return g

    def density(self, p):
        x = -self.sdf(p) / self.tau
        return self.scale / (1.0 + np.exp(-np.clip(x, -700, 700)))

    def density_gradient(self, p):
        x = -self.sdf(p) / self.tau
        sg = 1.0 / (1.0 + np.exp(-np.clip(x, -700, 700)))
        return (-self.scale * sg * (1 - sg) / self.tau)[:, None] * self.sdf_gradient(p)

    def normals(self, p):
        g = self.sdf_gradient(p)
        n = np.linalg.norm(g, axis=-1, keepdims=True)
        up = np.broadcast_to([0.0, 0.0, 1.0], g.shape)
        return np.where(n > 1e-12, g / np.maximum(n, 1e-300), up)

    def channels_at(self, points) -> Channels:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        nearest = np.argmin(self._all_sdf(p), axis=-1)
        albedo = np.empty((len(p), 3))
        metal = np.empty(len(p))
        rough = np.empty(len(p))
        for j, prim in enumerate(self.spec.primitives):
            sel = nearest == j
            if np.any(sel):
                albedo[sel], metal[sel], rough[sel] = material_at(prim, p[sel])
        return Channels(self.density(p)[:, None], albedo, metal[:, None],
                        rough[:, None], self.normals(p))


def scene_to_field(spec: SceneSpec) -> AnalyticField:
    return AnalyticField(spec)


# -- environments -------------------------------------------------------------------

def env_radiance(env: EnvSpec, dirs):
    """Radiance of an analytic environment along unit ``dirs (N, 3)``."""
    p = env.params
    if env.kind == "gradient-sky":
        t = (0.5 * (dirs[:, 1] + 1.0))[:, None]
        out = (1 - t) * np.asarray(p["bottom"], float) + t * np.asarray(p["top"], float)
    elif env.kind == "gaussian-blobs":
        out = np.broadcast_to(np.asarray(p.get("ambient", [0.0] * 3), float), dirs.shape).copy()
        for b in p["blobs"]:
            mu = np.asarray(b["dir"], float)
            mu = mu / np.linalg.norm(mu)
            lobe = np.exp(b["kappa"] * (dirs @ mu - 1.0))
            out += b["intensity"] * lobe[:, None] * np.asarray(b["color"], float)
    else:
        raise ConfigError(f"env kind {env.kind!r} has no analytic radiance")
    return env.exposure * out


def sample_envmap(env: EnvSpec, size=64, supersample=2) -> Cubemap:
    """Cubemap of an environment spec (texel averages over a
    ``supersample^2`` grid; radiance clipped to [0, 50])."""
    if env.kind not in ENV_KINDS:
        raise ConfigError(f"unknown env kind {env.kind!r}")
    if env.kind == "hdr-file":
        path = env.params.get("path", "")
        try:
            img = read_pfm(path)
        except DataIOError:
            raise
        except (OSError, ValueError) as e:
            raise DataIOError(f"cannot read environment {path}: {e}") from e
        if img.ndim != 3:
            raise DataIOError(f"{path}: environment must be RGB")
        c = equirect_to_cubemap(np.maximum(img.astype(float), 0.0) * env.exposure,
                                size, supersample)
        return Cubemap(np.clip(c.faces, 0.0, PEAK_RADIANCE))
    c = Cubemap.from_function(size, lambda d: env_radiance(env, d), supersample)
    return Cubemap(np.clip(c.faces, 0.0, PEAK_RADIANCE))


# -- ground truth ----------------------------------------------------------------------

@dataclass
class DatasetSample:
    """Ground truth for one scene: ``views[k]`` maps channel name to an
    ``(H, W, C)`` image; ``env`` is the equirect radiance map."""

    spec: SceneSpec
    views: list
    env: np.ndarray
    cubemap: Cubemap = None

    @property
    def cameras(self):
        return self.spec.cameras


def _view_seed(spec_seed, k):
    return np.random.SeedSequence([int(spec_seed), 0x6E7, int(k)])


def render_ground_truth(spec: SceneSpec, cams=None, cfg: vr.MarchConfig = None,
                        mc_samples=4096, env_size=64, env_width=128) -> DatasetSample:
    """Material and geometry buffers by marching the analytic field; shaded
    radiance by Monte-Carlo integration of the accumulated materials; the
    composite blends it over the environment."""
    cams = spec.cameras if cams is None else cams
    cfg = cfg or vr.MarchConfig(n_samples=128)
    fld = scene_to_field(spec)
    cube = sample_envmap(spec.env, env_size)
    views = []
    for k, cam in enumerate(cams):
        b = vr.render_view(fld, cam, cfg)
        h, w = cam.height, cam.width
        mask = b.mask.reshape(-1)
        fg = np.flatnonzero(mask > vr.DEPTH_EPS)
        shaded = np.zeros((h * w, 3))
        if len(fg):
            _, d = vr.generate_rays(cam)
            a = mask[fg, None]
            unp = lambda x, c: np.clip(x.reshape(-1, c)[fg] / a, 0.0, 1.0)  # noqa: E731
            n = b.normal.reshape(-1, 3)[fg]
            sp = SurfacePoint(unp(b.albedo, 3), unp(b.metal, 1), unp(b.rough, 1),
                              n / np.linalg.norm(n, axis=-1, keepdims=True), -d[fg])
            seed = int(_view_seed(spec.seed, k).generate_state(1)[0])
            shaded[fg] = shade_reference_mc(sp, cube, mc_samples, seed=seed)
        shaded = shaded.reshape(h, w, 3)
        comp = vr.composite_background(shaded, b.mask, cam, cube.faces)
        views.append({"shaded": shaded, "albedo": b.albedo, "metal": b.metal,
                      "rough": b.rough, "normal": b.normal, "depth": b.depth,
                      "mask": b.mask, "composite": np.asarray(comp)})
    env = np.asarray(cubemap_to_equirect(cube, env_width, env_width // 2, supersample=2))
    return DatasetSample(spec, views, env, cube)


# -- dataset files ------------------------------------------------------------------------

def write_dataset(samples, directory):
    """Write ``scene_<id>/{spec.json, cameras.json, env.pfm,
    view_<k>_<channel>.{png|pfm}}`` for each sample; returns scene dirs."""
    out = []
    for i, s in enumerate(samples):
        d = os.path.join(directory, f"scene_{i:04d}")
        try:
            os.makedirs(d, exist_ok=True)
            with open(os.path.join(d, "spec.json"), "w") as f:
                json.dump(s.spec.to_dict(), f, indent=1, sort_keys=True)
            with open(os.path.join(d, "cameras.json"), "w") as f:
                json.dump([c.to_dict() for c in s.spec.cameras], f, indent=1)
        except OSError as e:
            raise DataIOError(f"cannot write {d}: {e}") from e
        write_pfm(os.path.join(d, "env.pfm"), s.env)
        for k, view in enumerate(s.views):
            for ch in VIEW_CHANNELS:
                ext = "png" if ch in _PNG_CHANNELS else "pfm"
                path = os.path.join(d, f"view_{k}_{ch}.{ext}")
                (write_png if ext == "png" else write_pfm)(path, view[ch])
        out.append(d)
    return out


def read_cameras(path):
    try:
        with open(path) as f:
            recs = json.load(f)
    except (OSError, ValueError) as e:
        raise DataIOError(f"cannot read cameras {path}: {e}") from e
    return [vr.Camera.from_dict(r) for r in recs]


def read_scene(d) -> DatasetSample:
    """Read one ``scene_<id>`` directory; float channels come back as
    float32 exactly as written."""
    missing = [p for p in ("spec.json", "cameras.json", "env.pfm")
               if not os.path.exists(os.path.join(d, p))]
    if missing:
        raise DataIOError(f"{d}: missing {', '.join(missing)}")
    try:
        with open(os.path.join(d, "spec.json")) as f:
            spec = SceneSpec.from_dict(json.load(f))
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise DataIOError(f"{d}/spec.json: {e}") from e
    spec.cameras = read_cameras(os.path.join(d, "cameras.json"))
    views, bad = [], []
    for k in range(len(spec.cameras)):
        view = {}
        for ch in VIEW_CHANNELS:
            ext = "png" if ch in _PNG_CHANNELS else "pfm"
            path = os.path.join(d, f"view_{k}_{ch}.{ext}")
            if not os.path.exists(path):
                bad.append(path)
                continue
            img = read_png(path) if ext == "png" else read_pfm(path)
            view[ch] = img[..., None] if img.ndim == 2 else img
        views.append(view)
    if bad:
        raise DataIOError("missing view files: " + ", ".join(bad))
    return DatasetSample(spec, views, read_pfm(os.path.join(d, "env.pfm")))


def read_dataset(directory):
    if not os.path.isdir(directory):
        raise DataIOError(f"no dataset directory {directory}")
    scenes = sorted(e for e in os.listdir(directory) if e.startswith("scene_"))
    if not scenes:
        raise DataIOError(f"{directory}: no scene_* directories")
    return [read_scene(os.path.join(directory, s)) for s in scenes]
