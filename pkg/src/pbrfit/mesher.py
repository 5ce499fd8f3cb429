"""Density field to textured triangle mesh.

The field is sampled on a vertex lattice split into tetrahedra (six per cube
along the main diagonal, so neighbouring cubes share faces exactly).
Densities are smoothed along lattice edges, the iso-surface is extracted by
marching tetrahedra, small disconnected pieces are dropped and every vertex
receives albedo, metalness and roughness by a short volume-rendering march
from just outside the surface.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import volrender as vr
from .errors import DataIOError, EmptyInputError

# cube corners as (dx, dy, dz) bit offsets, corner id = dx + 2 dy + 4 dz
_CORNERS = np.array([[i & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)])


def _kuhn_tets():
    """Six tets sharing the 0-7 diagonal, each listed with positive volume."""
    tets = []
    for perm in itertools.permutations(range(3)):
        v = np.zeros(3, dtype=int)
        ids = [0]
        for ax in perm:
            v[ax] = 1
            ids.append(int(v[0] + 2 * v[1] + 4 * v[2]))
        p = _CORNERS[ids].astype(float)
        if np.linalg.det(p[1:] - p[0]) < 0:
            ids[1], ids[2] = ids[2], ids[1]
        tets.append(ids)
    return np.array(tets)


KUHN_TETS = _kuhn_tets()
# lattice neighbours along tet edges: axis steps, face diagonals and the
# main diagonal, in both directions
_EDGE_STEPS = np.array([s for s in itertools.product((-1, 0, 1), repeat=3)
                        if any(s) and (all(c >= 0 for c in s) or all(c <= 0 for c in s))])


@dataclass
class TetGrid:
    """``G^3`` vertex lattice with per-vertex density ``values[ix, iy, iz]``."""

    lo: np.ndarray
    hi: np.ndarray
    values: np.ndarray

    @property
    def resolution(self):
        return self.values.shape[0]

    @property
    def spacing(self):
        return (np.asarray(self.hi) - np.asarray(self.lo)) / (self.resolution - 1)

    def positions(self):
        g = self.resolution
        axes = [np.linspace(self.lo[k], self.hi[k], g) for k in range(3)]
        x, y, z = np.meshgrid(*axes, indexing="ij")
        return np.stack([x, y, z], axis=-1)

    def tets(self):
        """``(6 (G-1)^3, 4)`` vertex ids into the flattened lattice."""
        g = self.resolution
        base = np.stack(np.meshgrid(*[np.arange(g - 1)] * 3, indexing="ij"), -1).reshape(-1, 3)
        out = []
        for t in KUHN_TETS:
            c = base[:, None, :] + _CORNERS[t][None]
            out.append((c[..., 0] * g + c[..., 1]) * g + c[..., 2])
        return np.concatenate(out, axis=0)


@dataclass
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray = None
    albedo: np.ndarray = None
    metal: np.ndarray = None
    rough: np.ndarray = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        n = len(self.vertices)
        if self.normals is None:
            self.normals = vertex_normals(self.vertices, self.faces)
        if self.albedo is None:
            self.albedo = np.zeros((n, 3))
        if self.metal is None:
            self.metal = np.zeros(n)
        if self.rough is None:
            self.rough = np.zeros(n)

    def edges(self):
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]],
                            self.faces[:, [2, 0]]])
        return np.sort(e, axis=1)

    def euler_characteristic(self):
        n_edges = len(np.unique(self.edges(), axis=0)) if len(self.faces) else 0
        return len(self.vertices) - n_edges + len(self.faces)

    def is_watertight(self):
        if not len(self.faces):
            return False
        _, counts = np.unique(self.edges(), axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def signed_volume(self):
        v = self.vertices[self.faces]
        return float(np.sum(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2]))) / 6.0)


def vertex_normals(vertices, faces):
    n = np.zeros_like(vertices)
    if len(faces):
        v = vertices[faces]
        fn = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        for k in range(3):
            np.add.at(n, faces[:, k], fn)
    ln = np.linalg.norm(n, axis=-1, keepdims=True)
    return np.where(ln > 0, n / np.maximum(ln, 1e-300), 0.0)


# -- lattice ---------------------------------------------------------------------------

def depth_to_pointcloud(fld, cams, cfg: vr.MarchConfig = None, threshold=0.5):
    """Unproject the expected depth of foreground pixels of every camera."""
    pts = []
    for cam in cams:
        b = vr.render_view(fld, cam, cfg)
        o, d = vr.generate_rays(cam)
        fg = np.asarray(b.mask).reshape(-1) > threshold
        pts.append(o[fg] + np.asarray(b.depth).reshape(-1, 1)[fg] * d[fg])
    pts = np.concatenate(pts) if pts else np.zeros((0, 3))
    if not len(pts):
        raise EmptyInputError("empty field: no foreground pixel in any view")
    return pts


def default_cameras(res=64, n=6, radius=3.2):
    """Axis-aligned views used to locate the object."""
    eyes = radius * np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0.001], [0, -1, 0.001],
                              [0, 0, 1], [0, 0, -1]], dtype=float)
    return [vr.Camera.look_at(e, width=res) for e in eyes[:n]]


def lattice_bounds(points, field_bounds, margin=0.1):
    """Bounding box of ``points`` grown by ``margin`` of its extent, clipped
    to the field bounds."""
    lo, hi = points.min(axis=0), points.max(axis=0)
    pad = margin * np.max(hi - lo) + 1e-3
    flo, fhi = np.asarray(field_bounds[0], float), np.asarray(field_bounds[1], float)
    return np.maximum(lo - pad, flo), np.minimum(hi + pad, fhi)


def sample_density(fld, resolution, lo=None, hi=None) -> TetGrid:
    lo = np.asarray(fld.bounds[0], float) if lo is None else np.asarray(lo, float)
    hi = np.asarray(fld.bounds[1], float) if hi is None else np.asarray(hi, float)
    grid = TetGrid(lo, hi, np.zeros((resolution,) * 3))
    p = grid.positions().reshape(-1, 3)
    sig = np.concatenate([np.asarray(vr.field_channels(fld, p[i:i + 65536]).sigma)
                          for i in range(0, len(p), 65536)])
    grid.values = sig.reshape((resolution,) * 3)
    return grid


def smooth_density(grid: TetGrid, lam=0.5, iters=3) -> TetGrid:
    """``v <- (1 - lam) v + lam * mean(edge neighbours)`` repeated ``iters`` times."""
    if not 0 <= lam <= 1:
        raise ValueError("smoothing weight must lie in [0, 1]")
    v = np.array(grid.values, dtype=float)
    g = v.shape[0]
    count = np.zeros_like(v)
    for s in _EDGE_STEPS:
        count[_shift_slices(s, g)[0]] += 1
    for _ in range(int(iters)):
        acc = np.zeros_like(v)
        for s in _EDGE_STEPS:
            dst, src = _shift_slices(s, g)
            acc[dst] += v[src]
        v = (1 - lam) * v + lam * acc / count
    return TetGrid(grid.lo, grid.hi, v)


def _shift_slices(step, g):
    """Slices so that ``dst`` vertices read their neighbour at ``+step``."""
    dst, src = [], []
    for s in step:
        if s > 0:
            dst.append(slice(0, g - s))
            src.append(slice(s, g))
        elif s < 0:
            dst.append(slice(-s, g))
            src.append(slice(0, g + s))
        else:
            dst.append(slice(None))
            src.append(slice(None))
    return tuple(dst), tuple(src)


# -- extraction ---------------------------------------------------------------------------

def _tet_triangles():
    """Per case (4-bit inside mask), the triangles as pairs of tet-local
    edges ``((a, b), ...)`` with ``a`` inside."""
    table = {}
    for case in range(16):
        ins = [k for k in range(4) if case >> k & 1]
        out = [k for k in range(4) if not case >> k & 1]
        if len(ins) == 1:
            a = ins[0]
            table[case] = [[(a, out[0]), (a, out[1]), (a, out[2])]]
        elif len(ins) == 3:
            d = out[0]
            table[case] = [[(ins[0], d), (ins[1], d), (ins[2], d)]]
        elif len(ins) == 2:
            a, b = ins
            c, d = out
            table[case] = [[(a, c), (a, d), (b, d)], [(a, c), (b, d), (b, c)]]
        else:
            table[case] = []
    return table


CASE_TABLE = _tet_triangles()


def marching_tetrahedra(grid: TetGrid, iso) -> TriMesh:
    """Iso-surface ``density = iso`` with outward (density-decreasing)
    winding; vertices on shared lattice edges are merged."""
    vals = np.asarray(grid.values, dtype=float).reshape(-1)
    pos = grid.positions().reshape(-1, 3)
    tets = grid.tets()
    inside = vals[tets] > iso
    case = (inside * (1 << np.arange(4))).sum(axis=1)
    active = (case != 0) & (case != 15)
    tets, case = tets[active], case[active]
    tri_edges = []
    for c in np.unique(case):
        sel = tets[case == c]
        for tri in CASE_TABLE[int(c)]:
            e = np.stack([np.stack([sel[:, a], sel[:, b]], -1) for a, b in tri], axis=1)
            tri_edges.append(e)
    if not tri_edges:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    tri_edges = np.concatenate(tri_edges)            # (T, 3, 2) inside -> outside
    flat = tri_edges.reshape(-1, 2)
    key = np.sort(flat, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    a, b = uniq[:, 0], uniq[:, 1]
    va, vb = vals[a], vals[b]
    t = np.clip((iso - va) / np.where(vb != va, vb - va, 1.0), 0.0, 1.0)
    verts = pos[a] + t[:, None] * (pos[b] - pos[a])
    faces = inv.reshape(-1, 3)
    # orient each triangle so its normal points from the inside corner(s) out
    p = verts[faces]
    nrm = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    outward = pos[tri_edges[:, :, 1]].mean(axis=1) - pos[tri_edges[:, :, 0]].mean(axis=1)
    flip = np.einsum("ij,ij->i", nrm, outward) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    area = 0.5 * np.linalg.norm(nrm, axis=-1)
    faces = faces[area > 1e-12]
    return _compact(verts, faces)


def _compact(verts, faces, **attrs):
    used = np.unique(faces)
    remap = np.full(len(verts), -1)
    remap[used] = np.arange(len(used))
    kept = {k: (None if v is None else v[used]) for k, v in attrs.items()}
    return TriMesh(verts[used], remap[faces], **kept)


def largest_component(mesh: TriMesh) -> TriMesh:
    """Keep the connected piece (through shared vertices) with most faces."""
    if not len(mesh.faces):
        return mesh
    f = mesh.faces
    n = len(mesh.vertices)
    rows = np.concatenate([f[:, 0], f[:, 1], f[:, 2]])
    cols = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    face_lab = labels[f[:, 0]]
    counts = np.bincount(face_lab)
    keep = face_lab == int(np.argmax(counts))
    if np.all(keep):
        return mesh
    return _compact(mesh.vertices, f[keep], normals=mesh.normals, albedo=mesh.albedo,
                    metal=mesh.metal, rough=mesh.rough)


def bake_vertex_materials(mesh: TriMesh, fld, offset, cfg: vr.MarchConfig = None) -> TriMesh:
    """March from ``v + offset * n`` along ``-n`` and store the opacity-
    normalized albedo, metalness and roughness at each vertex."""
    cfg = cfg or vr.MarchConfig(64)
    if not len(mesh.vertices):
        return mesh
    o = mesh.vertices + offset * mesh.normals
    d = -mesh.normals
    ok = np.linalg.norm(d, axis=-1) > 0
    d = np.where(ok[:, None], d, [0.0, 0.0, 1.0])
    lo, hi = np.asarray(fld.bounds[0], float), np.asarray(fld.bounds[1], float)
    rs = vr.RaySamples(np.clip(o, lo, hi), d, fld.bounds, cfg)
    alb = np.zeros((len(o), 3))
    met = np.zeros((len(o), 1))
    rgh = np.zeros((len(o), 1))
    alpha = np.zeros((len(o), 1))
    if rs.n_hit:
        m = vr._march(fld, rs)
        alb[rs.index] = np.asarray(m["albedo"])
        met[rs.index] = np.asarray(m["metal"])
        rgh[rs.index] = np.asarray(m["rough"])
        alpha[rs.index] = np.asarray(m["alpha"])
    local = vr.field_channels(fld, np.clip(mesh.vertices, lo, hi))
    weak = alpha[:, 0] < 1e-3
    a = np.maximum(alpha, 1e-12)
    albedo = np.where(weak[:, None], np.asarray(local.albedo), alb / a)
    metal = np.where(weak, np.asarray(local.metal)[:, 0], met[:, 0] / a[:, 0])
    rough = np.where(weak, np.asarray(local.rough)[:, 0], rgh[:, 0] / a[:, 0])
    return TriMesh(mesh.vertices, mesh.faces, mesh.normals, np.clip(albedo, 0, 1),
                   np.clip(metal, 0, 1), np.clip(rough, 0, 1))


def default_iso(spacing):
    """Density at which one cell of EA marching reaches opacity 0.5."""
    return float(np.log(2.0) / spacing)


def cell_opacity(grid: TetGrid, cell=None) -> TetGrid:
    """Per-vertex opacity ``1 - exp(-sigma * cell)`` of one lattice cell."""
    cell = float(np.max(grid.spacing)) if cell is None else cell
    return TetGrid(grid.lo, grid.hi, -np.expm1(-np.maximum(grid.values, 0.0) * cell))


def mesh_field(fld, resolution=32, iso=None, lam=0.5, iters=3, offset_cells=2.0,
               cams=None, cfg: vr.MarchConfig = None) -> TriMesh:
    """Full pipeline: point cloud, lattice, smoothing, extraction, cleanup,
    material baking.

    Densities are converted to per-cell opacity before smoothing, so a
    near-binary field does not bleed outward; the density iso-value ``iso``
    (default ``ln 2 / cell``) maps to opacity ``1 - exp(-iso * cell)``.
    """
    pts = depth_to_pointcloud(fld, cams or default_cameras(), cfg)
    lo, hi = lattice_bounds(pts, fld.bounds)
    grid = sample_density(fld, resolution, lo, hi)
    cell = float(np.max(grid.spacing))
    iso = default_iso(cell) if iso is None else float(iso)
    grid = cell_opacity(grid, cell)
    if iters:
        grid = smooth_density(grid, lam, iters)
    mesh = marching_tetrahedra(grid, -np.expm1(-iso * cell))
    mesh = largest_component(mesh)
    return bake_vertex_materials(mesh, fld, offset_cells * cell, cfg)


# -- PLY ------------------------------------------------------------------------------------

_PLY_PROPS = ("x", "y", "z", "nx", "ny", "nz", "albedo_r", "albedo_g", "albedo_b",
              "metalness", "roughness")
_FACE_DTYPE = np.dtype([("n", "u1"), ("i", "<i4", (3,))])


def write_ply(mesh: TriMesh, path):
    """Binary little-endian PLY with 11 float32 properties per vertex."""
    n = len(mesh.vertices)
    data = np.concatenate([mesh.vertices, mesh.normals, mesh.albedo,
                           np.asarray(mesh.metal).reshape(n, 1),
                           np.asarray(mesh.rough).reshape(n, 1)], axis=1).astype("<f4")
    faces = np.zeros(len(mesh.faces), dtype=_FACE_DTYPE)
    faces["n"] = 3
    faces["i"] = mesh.faces
    head = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    head += [f"property float {p}" for p in _PLY_PROPS]
    head += [f"element face {len(mesh.faces)}", "property list uchar int vertex_indices",
             "end_header"]
    try:
        with open(path, "wb") as f:
            f.write(("\n".join(head) + "\n").encode("ascii"))
            f.write(np.ascontiguousarray(data).tobytes())
            f.write(faces.tobytes())
    except OSError as e:
        raise DataIOError(f"cannot write {path}: {e}") from e


def read_ply(path) -> TriMesh:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DataIOError(f"cannot read {path}: {e}") from e
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise DataIOError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii").splitlines()
    nv = nf = 0
    props = []
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            nv = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            nf = int(parts[2])
        elif parts[:2] == ["property", "float"]:
            props.append(parts[2])
    if tuple(props) != _PLY_PROPS:
        raise DataIOError(f"{path}: unexpected vertex properties {props}")
    body = raw[end + len(b"end_header\n"):]
    vbytes = nv * len(_PLY_PROPS) * 4
    if len(body) != vbytes + nf * _FACE_DTYPE.itemsize:
        raise DataIOError(f"{path}: truncated PLY body")
    v = np.frombuffer(body, "<f4", nv * len(_PLY_PROPS)).reshape(nv, len(_PLY_PROPS))
    fc = np.frombuffer(body, _FACE_DTYPE, nf, vbytes)
    if nf and np.any(fc["n"] != 3):
        raise DataIOError(f"{path}: only triangle faces are supported")
    return TriMesh(v[:, :3].copy(), fc["i"].astype(np.int64), v[:, 3:6].copy(),
                   v[:, 6:9].copy(), v[:, 9].copy(), v[:, 10].copy())
