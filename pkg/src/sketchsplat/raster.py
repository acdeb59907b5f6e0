"""Screen-space projection and tile-binned front-to-back splatting.

`rasterize` is the production path: Gaussians are projected with the standard
first-order (EWA-style) perspective approximation, binned to 16x16 tiles their
3-sigma screen ellipse touches, depth-sorted per tile (ties broken by ascending
Gaussian index) and composited front to back with early termination once
transmittance drops below 1e-4.

`rasterize_reference` is the brute-force oracle: identical projection and
per-splat alpha semantics, but a single global depth sort, no tiling, no early
termination and float64 accumulation.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .cameras import Camera
from .errors import DimensionError, StorageError
from .gaussians import GaussianSet, GaussianPrimitive, build_covariances

TILE = 16
COV2D_REGULARIZATION = np.float32(0.3)  # px^2 anti-aliasing floor on the diagonal
CUTOFF_RADIUS_SIGMA = 3.0               # kernel support in Mahalanobis units
BBOX_PAD_PX = 1.0                       # conservative padding so binning never clips support


@dataclass
class RenderedFrame:
    """Premultiplied RGB over a transparent black background, plus coverage alpha."""

    rgb: np.ndarray    # (H, W, 3) float32 in [0, 1]
    alpha: np.ndarray  # (H, W) float32 in [0, 1]

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.rgb).tobytes())
        h.update(np.ascontiguousarray(self.alpha).tobytes())
        return h.hexdigest()

    def to_uint8(self) -> np.ndarray:
        return np.clip(self.rgb * 255.0 + 0.5, 0, 255).astype(np.uint8)

    def to_png_bytes(self) -> bytes:
        from .imgio import encode_png
        return encode_png(self.to_uint8())

    def save_png(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_png_bytes())

    def save_raw(self, path) -> None:
        """Planar float32 dump: magic 'SSFR', width, height, then R,G,B,A planes."""
        with open(path, "wb") as f:
            f.write(b"SSFR")
            f.write(struct.pack("<II", self.width, self.height))
            for c in range(3):
                f.write(np.ascontiguousarray(self.rgb[:, :, c]).tobytes())
            f.write(np.ascontiguousarray(self.alpha).tobytes())

    @staticmethod
    def load_raw(path) -> "RenderedFrame":
        with open(path, "rb") as f:
            data = f.read()
        if data[:4] != b"SSFR":
            raise StorageError(f"{path}: not a raw frame dump")
        w, h = struct.unpack("<II", data[4:12])
        plane = w * h * 4
        if len(data) != 12 + 4 * plane:
            raise StorageError(f"{path}: truncated raw frame dump")
        planes = [np.frombuffer(data[12 + i * plane:12 + (i + 1) * plane],
                                dtype="<f4").reshape(h, w) for i in range(4)]
        return RenderedFrame(rgb=np.stack(planes[:3], axis=-1).astype(np.float32),
                             alpha=planes[3].astype(np.float32))


class ContributionLog:
    """Per-pixel ordered (gaussian_index, alpha, transmittance-before) sequences."""

    def __init__(self, pixels_xy: np.ndarray, offsets: np.ndarray,
                 gauss: np.ndarray, alpha: np.ndarray, trans: np.ndarray):
        self.pixels_xy = pixels_xy   # (P, 2) int32, (x, y) per logged pixel
        self.offsets = offsets       # (P+1,) int64 into the entry arrays
        self.gauss = gauss           # (M,) int32
        self.alpha = alpha           # (M,) float32
        self.trans = trans           # (M,) float32

    def __len__(self) -> int:
        return int(self.pixels_xy.shape[0])

    def entries(self, p: int):
        s, e = int(self.offsets[p]), int(self.offsets[p + 1])
        return self.gauss[s:e], self.alpha[s:e], self.trans[s:e]

    def pixel_entries(self, x: int, y: int):
        hits = np.nonzero((self.pixels_xy[:, 0] == x) & (self.pixels_xy[:, 1] == y))[0]
        if hits.size == 0:
            return (np.zeros(0, dtype=np.int32), np.zeros(0, dtype=np.float32),
                    np.zeros(0, dtype=np.float32))
        return self.entries(int(hits[0]))

    def sum_weights(self, n_gaussians: int) -> np.ndarray:
        """Replay Eq.-style per-Gaussian sum of alpha * T over all logged pixels."""
        w = np.zeros(n_gaussians, dtype=np.float64)
        np.add.at(w, self.gauss.astype(np.int64),
                  self.alpha.astype(np.float64) * self.trans.astype(np.float64))
        return w


@dataclass
class ProjectedGaussians:
    """Shared screen-space projection consumed by both compositing paths."""

    indices: np.ndarray   # (K,) int32 original Gaussian indices, ascending
    means: np.ndarray     # (K, 2) float32 pixel coords
    conics: np.ndarray    # (K, 3) float32 [A, B, C] of the inverse 2D covariance
    depths: np.ndarray    # (K,) float32 view-space z
    radii: np.ndarray     # (K,) float32 conservative support radius in px
    colors: np.ndarray    # (K, 3) float32
    opacities: np.ndarray  # (K,) float32


def project_gaussian(camera: Camera, primitive: GaussianPrimitive):
    """Project one primitive. Returns (mean_px (2,), cov2d (2,2), depth) or None if culled."""
    s = GaussianSet(primitive.position[None], primitive.scale[None],
                    primitive.rotation[None], np.array([primitive.opacity]),
                    primitive.color[None], validate=False)
    proj = project_gaussians(camera, s)
    if proj.indices.shape[0] == 0:
        return None
    a, b, c = (float(v) for v in proj.conics[0])
    det = a * c - b * b
    cov = np.array([[c, -b], [-b, a]], dtype=np.float64) / det
    return proj.means[0].copy(), cov.astype(np.float32), float(proj.depths[0])


def project_gaussians(camera: Camera, gset: GaussianSet) -> ProjectedGaussians:
    """Batched EWA-style projection with near-plane and off-screen culling."""
    n = len(gset)
    width, height = camera.width, camera.height
    empty = ProjectedGaussians(
        indices=np.zeros(0, dtype=np.int32), means=np.zeros((0, 2), dtype=np.float32),
        conics=np.zeros((0, 3), dtype=np.float32), depths=np.zeros(0, dtype=np.float32),
        radii=np.zeros(0, dtype=np.float32), colors=np.zeros((0, 3), dtype=np.float32),
        opacities=np.zeros(0, dtype=np.float32))
    if n == 0:
        return empty

    rot, tvec = camera.view_matrix()
    t = gset.positions @ rot.T + tvec  # (N, 3) view space
    near_ok = t[:, 2] > np.float32(camera.near)
    if not np.any(near_ok):
        return empty

    idx = np.nonzero(near_ok)[0]
    t = t[idx]
    focal = np.float32(camera.focal_px())
    tz = t[:, 2]
    inv_z = np.float32(1.0) / tz
    mx = focal * t[:, 0] * inv_z + np.float32(width / 2.0)
    my = focal * t[:, 1] * inv_z + np.float32(height / 2.0)

    cov3d = build_covariances(gset.scales[idx], gset.rotations[idx])  # (K,3,3)
    # First-order projection: J maps view-space offsets to pixel offsets.
    k = idx.shape[0]
    jac = np.zeros((k, 2, 3), dtype=np.float32)
    jac[:, 0, 0] = focal * inv_z
    jac[:, 0, 2] = -focal * t[:, 0] * inv_z * inv_z
    jac[:, 1, 1] = focal * inv_z
    jac[:, 1, 2] = -focal * t[:, 1] * inv_z * inv_z
    jw = jac @ rot[None, :, :]                       # (K, 2, 3) world -> pixel
    cov2d = jw @ cov3d @ np.transpose(jw, (0, 2, 1))  # (K, 2, 2)
    a = cov2d[:, 0, 0] + COV2D_REGULARIZATION
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1] + COV2D_REGULARIZATION

    det = a * c - b * b
    ok = det > 0  # PSD + regularization makes this hold; guard regardless
    mid = np.float32(0.5) * (a + c)
    disc = np.sqrt(np.maximum(mid * mid - det, np.float32(0.0)))
    lam_max = mid + disc
    radii = (np.float32(CUTOFF_RADIUS_SIGMA) * np.sqrt(np.maximum(lam_max, np.float32(0.0)))
             + np.float32(BBOX_PAD_PX))

    on_screen = ((mx + radii > 0) & (mx - radii < width) &
                 (my + radii > 0) & (my - radii < height))
    keep = ok & on_screen
    if not np.any(keep):
        return empty

    inv_det = np.float32(1.0) / det[keep]
    conics = np.stack([c[keep] * inv_det, -b[keep] * inv_det, a[keep] * inv_det],
                      axis=1).astype(np.float32)
    return ProjectedGaussians(
        indices=idx[keep].astype(np.int32),
        means=np.stack([mx[keep], my[keep]], axis=1).astype(np.float32),
        conics=np.ascontiguousarray(conics),
        depths=tz[keep].astype(np.float32),
        radii=radii[keep].astype(np.float32),
        colors=np.ascontiguousarray(gset.colors[idx[keep]]),
        opacities=np.ascontiguousarray(gset.opacities[idx[keep]]))


def _bin_to_tiles(proj: ProjectedGaussians, width: int, height: int):
    """CSR tile lists sorted by (tile, depth, original index)."""
    ntx = (width + TILE - 1) // TILE
    nty = (height + TILE - 1) // TILE
    ntiles = ntx * nty
    k = proj.means.shape[0]
    if k == 0:
        return np.zeros(ntiles + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    mx, my = proj.means[:, 0], proj.means[:, 1]
    r = proj.radii
    tx0 = np.clip(np.floor((mx - r) / TILE).astype(np.int64), 0, ntx - 1)
    tx1 = np.clip(np.floor((mx + r) / TILE).astype(np.int64), 0, ntx - 1)
    ty0 = np.clip(np.floor((my - r) / TILE).astype(np.int64), 0, nty - 1)
    ty1 = np.clip(np.floor((my + r) / TILE).astype(np.int64), 0, nty - 1)
    w = tx1 - tx0 + 1
    counts = w * (ty1 - ty0 + 1)
    total = int(counts.sum())
    rows = np.repeat(np.arange(k, dtype=np.int64), counts)
    local = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(counts) - counts, counts)
    tx = tx0[rows] + local % w[rows]
    ty = ty0[rows] + local // w[rows]
    tile_id = ty * ntx + tx
    order = np.lexsort((proj.indices[rows], proj.depths[rows], tile_id))
    items = rows[order]
    start = np.zeros(ntiles + 1, dtype=np.int64)
    np.add.at(start, tile_id + 1, 1)
    np.cumsum(start, out=start)
    return start, items


def _prepare(camera: Camera, gset: GaussianSet):
    proj = project_gaussians(camera, gset)
    start, items = _bin_to_tiles(proj, camera.width, camera.height)
    return proj, start, items


def rasterize(gset: GaussianSet, camera: Camera,
              terminate_t: float = float(_kernels.TERMINATE_T)) -> RenderedFrame:
    """Tile-binned front-to-back compositing (float32, early termination)."""
    width, height = camera.width, camera.height
    proj, start, items = _prepare(camera, gset)
    if proj.means.shape[0] == 0:
        return RenderedFrame(rgb=np.zeros((height, width, 3), dtype=np.float32),
                             alpha=np.zeros((height, width), dtype=np.float32))
    packed = _kernels.pack_tile_items(items, proj.means, proj.conics,
                                      proj.colors, proj.opacities, proj.radii)
    rgb, alpha = _kernels.render_tiles(width, height, TILE, packed, start,
                                       np.float32(terminate_t))
    return RenderedFrame(rgb=rgb, alpha=alpha)


def rasterize_reference(gset: GaussianSet, camera: Camera,
                        row_chunk: int = 8) -> RenderedFrame:
    """Brute-force oracle: global depth sort, no tiles, no early exit, float64 sums.

    The float32 power/alpha expression chain matches the tiled kernel bit for
    bit (see _kernels), so the two paths agree exactly on each splat's cutoff
    decision and alpha; only compositing scope and precision differ.
    """
    width, height = camera.width, camera.height
    out_rgb = np.zeros((height, width, 3), dtype=np.float64)
    out_alpha = np.zeros((height, width), dtype=np.float64)
    proj = project_gaussians(camera, gset)
    k = proj.means.shape[0]
    if k > 0:
        order = np.lexsort((proj.indices, proj.depths))  # depth, then index
        mx = proj.means[order, 0]
        my = proj.means[order, 1]
        ca = proj.conics[order, 0]
        cb = proj.conics[order, 1]
        cc = proj.conics[order, 2]
        radii = proj.radii[order]
        op32 = proj.opacities[order]
        col64 = proj.colors[order].astype(np.float64)
        xs = (np.arange(width, dtype=np.float64) + 0.5).astype(np.float32)
        for y0 in range(0, height, row_chunk):
            y1 = min(y0 + row_chunk, height)
            sel = (my + radii > np.float32(y0)) & (my - radii < np.float32(y1))
            if not np.any(sel):
                continue
            ys = (np.arange(y0, y1, dtype=np.float64) + 0.5).astype(np.float32)
            # (S, rows, W) float32 offsets; op order mirrors the numba kernel
            dx = xs[None, None, :] - mx[sel][:, None, None]
            dy = ys[None, :, None] - my[sel][:, None, None]
            a = ca[sel][:, None, None]
            bb = cb[sel][:, None, None]
            c = cc[sel][:, None, None]
            t2 = (c * dy) * dy
            bdy = bb * dy
            power = np.float32(-0.5) * (a * dx * dx + t2) - bdy * dx
            include = power >= _kernels.CUTOFF_POWER
            alpha32 = op32[sel][:, None, None] * _kernels.exp_poly4_array(power)
            alpha = np.where(include, alpha32.astype(np.float64), 0.0)
            trans = np.cumprod(1.0 - alpha, axis=0)
            t_before = np.concatenate([np.ones((1,) + alpha.shape[1:]), trans[:-1]], axis=0)
            contrib = alpha * t_before  # (S, rows, W)
            out_rgb[y0:y1] = np.einsum("srw,sc->rwc", contrib, col64[sel])
            out_alpha[y0:y1] = 1.0 - trans[-1]
    return RenderedFrame(rgb=out_rgb.astype(np.float32), alpha=out_alpha.astype(np.float32))


def _mask_pixels(mask: np.ndarray, camera: Camera) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (camera.height, camera.width):
        raise DimensionError(
            f"pixel mask {mask.shape} does not match camera image size "
            f"{(camera.height, camera.width)}")
    ys, xs = np.nonzero(mask)
    return np.stack([xs, ys], axis=1).astype(np.int32)


def record_contributions(gset: GaussianSet, camera: Camera, pixels: np.ndarray,
                         terminate_t: float = float(_kernels.TERMINATE_T)) -> ContributionLog:
    """Exact (alpha, T) sequences the rasterizer composites at the masked pixels.

    Gaussian indices in the log refer to positions in `gset`.
    """
    pts = _mask_pixels(pixels, camera)
    proj, start, items = _prepare(camera, gset)
    if pts.shape[0] == 0 or proj.means.shape[0] == 0:
        p = pts.shape[0]
        return ContributionLog(pts, np.zeros(p + 1, dtype=np.int64),
                               np.zeros(0, dtype=np.int32), np.zeros(0, dtype=np.float32),
                               np.zeros(0, dtype=np.float32))
    counts = _kernels.count_contributions(pts, TILE, camera.width, proj.means,
                                          proj.conics, proj.opacities, start, items,
                                          np.float32(terminate_t))
    offsets = np.cumsum(counts)
    total = int(offsets[-1])
    gauss = np.zeros(total, dtype=np.int32)
    alpha = np.zeros(total, dtype=np.float32)
    trans = np.zeros(total, dtype=np.float32)
    _kernels.fill_contributions(pts, TILE, camera.width, proj.means, proj.conics,
                                proj.opacities, start, items, np.float32(terminate_t),
                                offsets[:-1].copy(), gauss, alpha, trans)
    # map compacted projection rows back to original Gaussian indices
    gauss = proj.indices[gauss]
    return ContributionLog(pts, offsets, gauss.astype(np.int32), alpha, trans)


def contribution_region(gset: GaussianSet, camera: Camera, indices: np.ndarray,
                        threshold: float = 0.02) -> np.ndarray:
    """Pixels where the selected Gaussians visibly contribute (occlusion-aware).

    Per pixel, sums alpha*T over log entries belonging to `indices` and keeps
    pixels above `threshold`.
    """
    full = np.ones((camera.height, camera.width), dtype=bool)
    log = record_contributions(gset, camera, full)
    member = np.zeros(len(gset), dtype=bool)
    member[np.asarray(indices, dtype=np.int64)] = True
    contrib = np.where(member[log.gauss],
                       log.alpha.astype(np.float64) * log.trans.astype(np.float64), 0.0)
    csum = np.concatenate([[0.0], np.cumsum(contrib)])
    sums = csum[log.offsets[1:]] - csum[log.offsets[:-1]]
    region = np.zeros((camera.height, camera.width), dtype=np.float64)
    region[log.pixels_xy[:, 1], log.pixels_xy[:, 0]] = sums
    return region > threshold


@dataclass
class InfluenceWeights:
    """Per-Gaussian accumulated alpha*T over a pixel mask, plus peak visibility."""

    weights: np.ndarray            # (N,) float64
    peak_transmittance: np.ndarray  # (N,) float32, max T seen at any masked pixel


def compute_influence_weights(gset: GaussianSet, camera: Camera,
                              mask: np.ndarray,
                              terminate_t: float = float(_kernels.TERMINATE_T)
                              ) -> InfluenceWeights:
    """Accumulate each Gaussian's opacity-transmittance product over masked pixels."""
    pts = _mask_pixels(mask, camera)
    n = len(gset)
    if pts.shape[0] == 0:
        return InfluenceWeights(np.zeros(n, dtype=np.float64),
                                np.zeros(n, dtype=np.float32))
    proj, start, items = _prepare(camera, gset)
    if proj.means.shape[0] == 0:
        return InfluenceWeights(np.zeros(n, dtype=np.float64),
                                np.zeros(n, dtype=np.float32))
    w_local, peak_local = _kernels.accumulate_influence(
        pts, TILE, camera.width, proj.means.shape[0], proj.means, proj.conics,
        proj.opacities, start, items, np.float32(terminate_t))
    weights = np.zeros(n, dtype=np.float64)
    peak = np.zeros(n, dtype=np.float32)
    weights[proj.indices] = w_local
    peak[proj.indices] = peak_local
    return InfluenceWeights(weights, peak)
