"""Template head mesh, UV atlas, and texel-to-face binding tables.

The default template is a procedurally deformed sphere with head proportions
(~2.3k vertices) carrying a rectangle-packed UV atlas: one large chart for the
lat-long band plus two disc charts for the pole caps, separated by gutters.
Any mesh with per-corner UVs loads through the same OBJ-subset interface.

Texel-to-face assignment is precomputed per (mesh, resolution): UV triangles
are rasterized over texel centers in ascending face order, so texels exactly
on a shared edge deterministically belong to the lower face index.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import DimensionError, InputError
from .uvmap import UvFeatureMap

ASSET_DIR = Path(__file__).parent / "assets"
DEFAULT_TEMPLATE_PATH = ASSET_DIR / "head_template.obj"
DEFAULT_UV_RESOLUTION = 128


class TexelTable:
    """Per-texel covering face and barycentric weights at one atlas resolution."""

    def __init__(self, resolution: int, face_index: np.ndarray, bary: np.ndarray):
        self.resolution = resolution
        self.face_index = face_index          # (res, res) int32, -1 = uncovered
        self.bary = bary                      # (res, res, 3) float32
        self.valid = face_index >= 0          # (res, res) bool
        iy, ix = np.nonzero(self.valid)
        self.valid_iy = iy.astype(np.int32)   # row-major scan order of valid texels
        self.valid_ix = ix.astype(np.int32)

    @property
    def valid_count(self) -> int:
        return int(self.valid_ix.shape[0])


class TemplateMesh:
    """Triangle mesh with per-face-corner UVs over a square atlas."""

    def __init__(self, vertices: np.ndarray, faces: np.ndarray, face_uvs: np.ndarray,
                 uv_resolution: int = DEFAULT_UV_RESOLUTION):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float32)
        self.faces = np.ascontiguousarray(faces, dtype=np.int32)
        self.face_uvs = np.ascontiguousarray(face_uvs, dtype=np.float32)
        self.uv_resolution = int(uv_resolution)
        self._tables: dict = {}
        self._validate()

    def _validate(self):
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise DimensionError(f"vertices: expected (V,3), got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise DimensionError(f"faces: expected (F,3), got {self.faces.shape}")
        if self.face_uvs.shape != (self.faces.shape[0], 3, 2):
            raise DimensionError(f"face_uvs: expected (F,3,2), got {self.face_uvs.shape}")
        if self.faces.size and (self.faces.min() < 0 or
                                self.faces.max() >= self.vertices.shape[0]):
            raise DimensionError("face vertex index out of bounds")
        if self.uv_resolution < 4:
            raise DimensionError("uv_resolution must be >= 4")
        area2 = _uv_signed_area2(self.face_uvs)
        if np.any(area2 < -1e-12):
            raise InputError("mesh has UV triangles with negative area")

    @property
    def vertex_count(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def face_count(self) -> int:
        return int(self.faces.shape[0])

    def texel_table(self, resolution: int | None = None) -> TexelTable:
        res = int(resolution or self.uv_resolution)
        if res < 4:
            raise DimensionError("resolution must be >= 4")
        if res not in self._tables:
            self._tables[res] = _build_texel_table(self, res)
        return self._tables[res]

    def texel_surface_point(self, texel) -> np.ndarray | None:
        """World point at a texel center via barycentric lookup; None if uncovered."""
        ix, iy = int(texel[0]), int(texel[1])
        res = self.uv_resolution
        if not (0 <= ix < res and 0 <= iy < res):
            raise IndexError(f"texel {(ix, iy)} out of bounds for resolution {res}")
        table = self.texel_table(res)
        f = int(table.face_index[iy, ix])
        if f < 0:
            return None
        w = table.bary[iy, ix].astype(np.float64)
        tri = self.vertices[self.faces[f]].astype(np.float64)
        return (w @ tri).astype(np.float32)

    def surface_points(self, resolution: int | None = None) -> np.ndarray:
        """(K, 3) world points for all valid texels in row-major scan order."""
        table = self.texel_table(resolution)
        f = table.face_index[table.valid_iy, table.valid_ix]
        tri = self.vertices[self.faces[f]].astype(np.float64)       # (K, 3, 3)
        w = table.bary[table.valid_iy, table.valid_ix].astype(np.float64)
        return np.einsum("kj,kjc->kc", w, tri).astype(np.float32)

    def uv_overlap_violations(self, resolution: int | None = None,
                              interior_margin: float = 1e-3) -> int:
        """Texel centers strictly interior to more than one UV triangle."""
        res = int(resolution or self.uv_resolution)
        counts = np.zeros((res, res), dtype=np.int32)
        for f in range(self.face_count):
            iy, ix, bary = _face_texels(self.face_uvs[f], res)
            if ix.size == 0:
                continue
            strict = np.all(bary > interior_margin, axis=1)
            counts[iy[strict], ix[strict]] += 1
        return int(np.count_nonzero(counts > 1))


def _uv_signed_area2(face_uvs: np.ndarray) -> np.ndarray:
    a, b, c = face_uvs[:, 0], face_uvs[:, 1], face_uvs[:, 2]
    return ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) -
            (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def _face_texels(uv_tri: np.ndarray, res: int):
    """Texel centers covered by one UV triangle: (iy, ix, bary) arrays (float64 solve)."""
    uv = uv_tri.astype(np.float64) * res  # texel units
    lo = np.floor(uv.min(axis=0) - 0.5).astype(np.int64)
    hi = np.ceil(uv.max(axis=0) - 0.5).astype(np.int64)
    x0, y0 = max(int(lo[0]), 0), max(int(lo[1]), 0)
    x1, y1 = min(int(hi[0]), res - 1), min(int(hi[1]), res - 1)
    if x0 > x1 or y0 > y1:
        z = np.zeros(0, dtype=np.int64)
        return z, z, np.zeros((0, 3))
    iy, ix = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    iy, ix = iy.ravel(), ix.ravel()
    px = ix + 0.5
    py = iy + 0.5
    v0 = uv[1] - uv[0]
    v1 = uv[2] - uv[0]
    den = v0[0] * v1[1] - v0[1] * v1[0]
    if abs(den) < 1e-12:  # degenerate UV triangle covers nothing
        z = np.zeros(0, dtype=np.int64)
        return z, z, np.zeros((0, 3))
    dx = px - uv[0, 0]
    dy = py - uv[0, 1]
    w1 = (dx * v1[1] - dy * v1[0]) / den
    w2 = (dy * v0[0] - dx * v0[1]) / den
    w0 = 1.0 - w1 - w2
    inside = (w0 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9)
    bary = np.stack([w0[inside], w1[inside], w2[inside]], axis=1)
    return iy[inside], ix[inside], bary


def _build_texel_table(mesh: TemplateMesh, res: int) -> TexelTable:
    face_index = np.full((res, res), -1, dtype=np.int32)
    bary = np.zeros((res, res, 3), dtype=np.float32)
    for f in range(mesh.face_count):
        iy, ix, w = _face_texels(mesh.face_uvs[f], res)
        if ix.size == 0:
            continue
        free = face_index[iy, ix] < 0
        if not np.any(free):
            continue
        iy, ix, w = iy[free], ix[free], w[free]
        w = np.clip(w, 0.0, None)
        w = w / w.sum(axis=1, keepdims=True)
        face_index[iy, ix] = f
        bary[iy, ix] = w.astype(np.float32)
    return TexelTable(res, face_index, bary)


def splat_vertex_features_to_uv(vertex_features: np.ndarray, mesh: TemplateMesh,
                                resolution: int) -> UvFeatureMap:
    """Barycentric projection of per-vertex features onto the UV atlas.

    Valid texels blend the covering face's three corner features; uncovered
    texels are zero.
    """
    feats = np.asarray(vertex_features, dtype=np.float32)
    if feats.ndim != 2 or feats.shape[0] != mesh.vertex_count:
        raise DimensionError(
            f"vertex_features: expected ({mesh.vertex_count}, C), got {feats.shape}")
    res = int(resolution)
    if res < 4:
        raise DimensionError("resolution must be >= 4")
    table = mesh.texel_table(res)
    out = np.zeros((res, res, feats.shape[1]), dtype=np.float32)
    if table.valid_count:
        f = table.face_index[table.valid_iy, table.valid_ix]
        corners = mesh.faces[f]                              # (K, 3)
        w = table.bary[table.valid_iy, table.valid_ix]       # (K, 3)
        gathered = feats[corners]                            # (K, 3, C)
        out[table.valid_iy, table.valid_ix] = np.einsum(
            "kj,kjc->kc", w.astype(np.float64), gathered.astype(np.float64)
        ).astype(np.float32)
    return UvFeatureMap(resolution=res, data=out)


# ---------------------------------------------------------------------------
# Procedural default template
# ---------------------------------------------------------------------------

def _head_surface(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Deformed unit sphere: y up, face toward +z. Returns (..., 3) float64."""
    sx = np.sin(theta) * np.cos(phi)
    sy = np.cos(theta)
    sz = np.sin(theta) * np.sin(phi)
    # swap so phi=pi/2 is the face direction; keep right-handedness
    x, y, z = sx, sy, sz
    px = 0.74 * x
    py = 1.00 * y
    pz = 0.88 * z
    t = np.clip(-y, 0.0, 1.0)  # 0 above the equator, 1 at the chin pole
    jaw = 1.0 - 0.33 * t * t
    px = px * jaw
    pz = pz * (1.0 - 0.18 * t * t) + 0.05 * t * t
    back = np.clip(-z, 0.0, 1.0) * np.clip(0.5 * y + 0.6, 0.0, 1.0)
    pz = pz - 0.07 * back
    nose = np.exp(-((y + 0.10) / 0.18) ** 2) * np.exp(-(x / 0.16) ** 2) * \
        np.clip(z, 0.0, 1.0) ** 2
    pz = pz + 0.14 * nose
    return np.stack([px, py, pz], axis=-1)


def build_default_head_mesh(uv_resolution: int = DEFAULT_UV_RESOLUTION,
                            n_long: int = 48, n_rows: int = 48) -> TemplateMesh:
    """Head-shaped deformed sphere with a rectangle-packed UV atlas.

    Charts: the main lat-long band fills u in [0.02, 0.98], v in [0.015, 0.80];
    two pole-cap discs of radius 0.085 sit at (0.27, 0.90) and (0.73, 0.90).
    """
    theta0, theta1 = 0.22, math.pi - 0.30
    thetas = np.linspace(theta0, theta1, n_rows)
    phis = 2.0 * math.pi * np.arange(n_long) / n_long

    tt, pp = np.meshgrid(thetas, phis, indexing="ij")
    band = _head_surface(tt, pp).reshape(-1, 3)               # row-major by (row, col)
    apex_top = _head_surface(np.array(0.0), np.array(0.0)).reshape(3)
    apex_bot = _head_surface(np.array(math.pi), np.array(0.0)).reshape(3)
    vertices = np.concatenate([apex_top[None], apex_bot[None], band], axis=0)

    def vid(row: int, col: int) -> int:
        return 2 + row * n_long + (col % n_long)

    u_lo, u_hi = 0.02, 0.98
    v_lo, v_hi = 0.015, 0.80

    def band_uv(row: int, col: int) -> tuple:
        u = u_lo + (u_hi - u_lo) * col / n_long
        v = v_lo + (v_hi - v_lo) * (n_rows - 1 - row) / (n_rows - 1)
        return (u, v)

    faces = []
    face_uvs = []
    for i in range(n_rows - 1):
        for j in range(n_long):
            a3, b3 = vid(i, j), vid(i + 1, j)
            c3, d3 = vid(i + 1, j + 1), vid(i, j + 1)
            a, b = band_uv(i, j), band_uv(i + 1, j)
            c, d = band_uv(i + 1, j + 1), band_uv(i, j + 1)
            faces.append((a3, b3, c3))
            face_uvs.append((a, b, c))
            faces.append((a3, c3, d3))
            face_uvs.append((a, c, d))

    def cap(apex_id: int, row: int, center: tuple, radius: float):
        for j in range(n_long):
            a0 = 2.0 * math.pi * j / n_long
            a1 = 2.0 * math.pi * (j + 1) / n_long
            p0 = (center[0] + radius * math.cos(a0), center[1] + radius * math.sin(a0))
            p1 = (center[0] + radius * math.cos(a1), center[1] + radius * math.sin(a1))
            faces.append((apex_id, vid(row, j), vid(row, j + 1)))
            face_uvs.append((center, p0, p1))

    cap(0, 0, (0.27, 0.90), 0.085)
    cap(1, n_rows - 1, (0.73, 0.90), 0.085)

    return TemplateMesh(vertices=np.asarray(vertices, dtype=np.float32),
                        faces=np.asarray(faces, dtype=np.int32),
                        face_uvs=np.asarray(face_uvs, dtype=np.float32),
                        uv_resolution=uv_resolution)


# ---------------------------------------------------------------------------
# OBJ-subset IO: v / vt / f v1/vt1 v2/vt2 v3/vt3
# ---------------------------------------------------------------------------

def save_mesh_obj(mesh: TemplateMesh, path) -> None:
    lines = ["# sketchsplat head template (OBJ subset: v, vt, f v/vt)"]
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.7f} {v[1]:.7f} {v[2]:.7f}")
    for fuv in mesh.face_uvs:
        for corner in fuv:
            lines.append(f"vt {corner[0]:.7f} {corner[1]:.7f}")
    for i, face in enumerate(mesh.faces):
        t = 3 * i
        lines.append(f"f {face[0] + 1}/{t + 1} {face[1] + 1}/{t + 2} {face[2] + 1}/{t + 3}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_mesh_obj(path, uv_resolution: int = DEFAULT_UV_RESOLUTION) -> TemplateMesh:
    verts, uvs, faces, face_uv_ids = [], [], [], []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read mesh {path}: {exc}") from exc
    for ln, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        try:
            if tag == "v":
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif tag == "vt":
                uvs.append([float(parts[1]), float(parts[2])])
            elif tag == "f":
                if len(parts) != 4:
                    raise InputError(f"{path}:{ln}: only triangles are supported")
                vi, ti = [], []
                for tok in parts[1:4]:
                    chunks = tok.split("/")
                    if len(chunks) < 2 or not chunks[1]:
                        raise InputError(f"{path}:{ln}: faces must carry v/vt indices")
                    vi.append(int(chunks[0]) - 1)
                    ti.append(int(chunks[1]) - 1)
                faces.append(vi)
                face_uv_ids.append(ti)
        except (ValueError, IndexError) as exc:
            raise InputError(f"{path}:{ln}: malformed OBJ line: {exc}") from exc
    if not faces:
        raise InputError(f"{path}: no faces found")
    uvs_arr = np.asarray(uvs, dtype=np.float32)
    face_uvs = uvs_arr[np.asarray(face_uv_ids, dtype=np.int64)]
    return TemplateMesh(vertices=np.asarray(verts, dtype=np.float32),
                        faces=np.asarray(faces, dtype=np.int32),
                        face_uvs=face_uvs, uv_resolution=uv_resolution)


_default_mesh_cache: dict = {}


def default_head_mesh(uv_resolution: int = DEFAULT_UV_RESOLUTION) -> TemplateMesh:
    """The shipped template asset (falls back to the generator if absent)."""
    if uv_resolution not in _default_mesh_cache:
        if DEFAULT_TEMPLATE_PATH.exists():
            mesh = load_mesh_obj(DEFAULT_TEMPLATE_PATH, uv_resolution)
        else:
            mesh = build_default_head_mesh(uv_resolution)
        _default_mesh_cache[uv_resolution] = mesh
    return _default_mesh_cache[uv_resolution]
