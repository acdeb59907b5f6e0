"""Sketch-driven editing: screen-mask back-projection, UV mask synthesis, and
layer-by-layer feature fusion, plus the two ablation baselines.

Edit flow: diff the sketches and dilate -> accumulate per-Gaussian influence
(alpha * transmittance over masked pixels) on the current head -> keep
significant, front-facing Gaussians -> scatter their source texels into a UV
mask, dilate, and resample per synthesis layer -> rerun generation on the new
sketch with a hook that, after every layer, keeps original features outside
that layer's mask. Texels outside the final-level mask therefore carry the
original raw attributes bit-exactly.
"""

from __future__ import annotations

import time
import uuid
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .cameras import Camera
from .errors import ContractViolationError, DimensionError
from .gaussians import GaussianSet, UNBOUND_TEXEL
from .mesh import TemplateMesh
from .nn.weights import WeightStore
from .pipeline.fine import (FeaturePyramid, GenerationArtifacts, extract_modulation,
                            fuse_latent, generate_head, synthesize_uv)
from .pipeline.coarse import build_coarse_uv
from .raster import InfluenceWeights, compute_influence_weights
from .uvmap import decode_uv_to_gaussians

DEFAULT_DILATION_RADIUS = 4   # px, screen-space mask dilation
DEFAULT_UV_DILATION = 1       # texels
DEFAULT_TAU_REL = 0.05        # significance threshold relative to max weight
DEFAULT_ABS_FLOOR = 1e-4      # absolute weight floor
DEFAULT_MIN_TRANSMITTANCE = 0.01  # front-face visibility test
UNDO_CAP = 32


def disk_structure(radius: int) -> np.ndarray:
    """Boolean disk: offsets with dx^2 + dy^2 <= radius^2."""
    if radius < 0:
        raise DimensionError("dilation radius must be >= 0")
    r = int(radius)
    ys, xs = np.mgrid[-r:r + 1, -r:r + 1]
    return (xs * xs + ys * ys) <= r * r


def diff_sketches(old_sketch: np.ndarray, new_sketch: np.ndarray,
                  dilation_radius: int = DEFAULT_DILATION_RADIUS) -> np.ndarray:
    """Boolean mask of binarized-sketch disagreement, dilated by a pixel disk."""
    old = np.asarray(old_sketch, dtype=np.float32)
    new = np.asarray(new_sketch, dtype=np.float32)
    if old.shape != new.shape or old.ndim != 2:
        raise DimensionError(
            f"diff_sketches: shapes {old.shape} vs {new.shape} must match (H, W)")
    diff = (old >= 0.5) != (new >= 0.5)
    if not diff.any():
        return diff
    if dilation_radius == 0:
        return diff
    return ndimage.binary_dilation(diff, structure=disk_structure(dilation_radius))


def resize_mask_nearest(mask: np.ndarray, image_size) -> np.ndarray:
    """Nearest-neighbor resample of a boolean mask to (width, height)."""
    w, h = int(image_size[0]), int(image_size[1])
    src_h, src_w = mask.shape
    ys = (np.arange(h) * src_h // h).clip(0, src_h - 1)
    xs = (np.arange(w) * src_w // w).clip(0, src_w - 1)
    return mask[np.ix_(ys, xs)]


def select_edited_gaussians(influence: InfluenceWeights,
                            tau_rel: float = DEFAULT_TAU_REL,
                            abs_floor: float = DEFAULT_ABS_FLOOR,
                            min_transmittance: float = DEFAULT_MIN_TRANSMITTANCE
                            ) -> np.ndarray:
    """Indices with significant influence that are actually visible in-view.

    Keeps w_i >= max(tau_rel * max(w), abs_floor) and requires the Gaussian's
    best masked-pixel transmittance to exceed `min_transmittance`, which drops
    back-face leakage (splats that graze the mask from behind the head).
    """
    w = influence.weights
    if w.size == 0 or float(w.max()) <= 0.0:
        return np.zeros(0, dtype=np.int64)
    threshold = max(tau_rel * float(w.max()), abs_floor)
    keep = (w >= threshold) & (influence.peak_transmittance > min_transmittance)
    return np.nonzero(keep)[0].astype(np.int64)


def build_uv_mask(indices: np.ndarray, gset: GaussianSet, base_resolution: int,
                  uv_dilation: int = DEFAULT_UV_DILATION) -> np.ndarray:
    """Scatter selected Gaussians' source texels into UV space and dilate."""
    res = int(base_resolution)
    mask = np.zeros((res, res), dtype=bool)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size:
        texels = gset.uv_texel_index[idx]
        if np.any(texels[:, 0] == UNBOUND_TEXEL):
            raise ContractViolationError(
                "build_uv_mask: selected Gaussians include UV-unbound entries")
        if gset.uv_resolution != res:
            raise DimensionError(
                f"set is bound at resolution {gset.uv_resolution}, mask wants {res}")
        mask[texels[:, 1], texels[:, 0]] = True
        if uv_dilation > 0:
            mask = ndimage.binary_dilation(mask, structure=disk_structure(uv_dilation))
    return mask


@dataclass
class UvMaskPyramid:
    """Base-resolution UV mask plus conservative resamplings per layer."""

    base: np.ndarray             # (res, res) bool
    resolutions: tuple           # layer resolutions, ascending
    levels: list = field(default_factory=list)  # bool arrays per layer

    def level(self, k: int) -> np.ndarray:
        return self.levels[k]


def resample_mask_pyramid(base_mask: np.ndarray, layer_resolutions) -> UvMaskPyramid:
    """Any-true max-pooling below base resolution, nearest-neighbor above.

    Every level upsampled back to base resolution is a superset of the base
    mask, so boundary texels are always treated as edited.
    """
    base = np.asarray(base_mask, dtype=bool)
    res = base.shape[0]
    levels = []
    for r in layer_resolutions:
        r = int(r)
        if r == res:
            levels.append(base.copy())
        elif r < res:
            f = res // r
            levels.append(base[:r * f, :r * f].reshape(r, f, r, f).any(axis=(1, 3)))
        else:
            f = r // res
            levels.append(np.repeat(np.repeat(base, f, axis=0), f, axis=1))
    return UvMaskPyramid(base=base, resolutions=tuple(int(r) for r in layer_resolutions),
                         levels=levels)


def make_fusion_hook(original: FeaturePyramid, masks: UvMaskPyramid):
    """Layer hook: keep original features outside each layer's mask (selection,
    not arithmetic blending, so unmasked texels are preserved bit-exactly)."""

    def hook(layer_index: int, features: np.ndarray) -> np.ndarray:
        mask = masks.level(layer_index)[None]  # broadcast over channels
        return np.where(mask, features, original.level(layer_index))

    return hook


def fused_generation(new_sketch: np.ndarray, reference: np.ndarray,
                     mesh: TemplateMesh, store: WeightStore,
                     original_pyramid: FeaturePyramid,
                     masks: UvMaskPyramid) -> GenerationArtifacts:
    """Run the generation pipeline on the new sketch with per-layer fusion.

    With an all-false mask the result's attributes equal the original pass's
    bit-exactly; with an all-true mask they equal a plain regeneration.
    """
    arch = store.arch
    coarse, id_geo, id_app = build_coarse_uv(new_sketch, reference, mesh, store, arch)
    modulation = extract_modulation(coarse, store, arch)
    latent = fuse_latent(modulation.global_latent, id_geo, id_app, store, arch)
    hook = make_fusion_hook(original_pyramid, masks)
    attrs, fused_pyramid = synthesize_uv(latent, modulation, store, arch, mesh,
                                         fusion_hook=hook)
    return GenerationArtifacts(
        coarse_uv=coarse, id_geometry=id_geo, id_appearance=id_app, latent=latent,
        modulation=modulation, pyramid=fused_pyramid, attributes=attrs,
        weights_fingerprint=store.fingerprint)


@dataclass
class EditSummary:
    changed: bool
    mask_pixels_2d: int
    selected_gaussians: int
    uv_mask_texels: int
    timings_ms: dict


class EditSession:
    """Single head under interactive editing: current state plus an undo stack.

    The undo stack always holds the initial state at the bottom; `current`
    mirrors the top of the stack. Writers must be serialized externally.
    """

    def __init__(self, sketch: np.ndarray, reference: np.ndarray,
                 artifacts: GenerationArtifacts, camera: Camera,
                 session_id: str | None = None):
        self.session_id = session_id or uuid.uuid4().hex[:16]
        self.reference = np.ascontiguousarray(reference, dtype=np.float32)
        self.camera = camera
        self.undo_stack: list = [(np.ascontiguousarray(sketch, dtype=np.float32),
                                  artifacts)]
        self._cached_set: GaussianSet | None = None

    @property
    def current_sketch(self) -> np.ndarray:
        return self.undo_stack[-1][0]

    @property
    def current(self) -> GenerationArtifacts:
        return self.undo_stack[-1][1]

    @property
    def depth(self) -> int:
        return len(self.undo_stack)

    def current_set(self, mesh: TemplateMesh) -> GaussianSet:
        if self._cached_set is None:
            self._cached_set = decode_uv_to_gaussians(self.current.attributes, mesh)
        return self._cached_set

    def push(self, sketch: np.ndarray, artifacts: GenerationArtifacts) -> None:
        self.undo_stack.append((np.ascontiguousarray(sketch, dtype=np.float32),
                                artifacts))
        if len(self.undo_stack) > UNDO_CAP:
            del self.undo_stack[1]  # keep the initial state, evict the oldest edit
        self._cached_set = None

    def undo(self) -> bool:
        """Pop one snapshot; False (no-op) at depth 1."""
        if len(self.undo_stack) <= 1:
            return False
        self.undo_stack.pop()
        self._cached_set = None
        return True


def create_session(sketch: np.ndarray, reference: np.ndarray, mesh: TemplateMesh,
                   store: WeightStore, camera: Camera,
                   session_id: str | None = None) -> EditSession:
    _, artifacts = generate_head(sketch, reference, mesh, store)
    return EditSession(sketch, reference, artifacts, camera, session_id=session_id)


def apply_edit(session: EditSession, new_sketch: np.ndarray, reference: np.ndarray,
               camera: Camera, mesh: TemplateMesh, store: WeightStore,
               dilation_radius: int = DEFAULT_DILATION_RADIUS,
               uv_dilation: int = DEFAULT_UV_DILATION,
               tau_rel: float = DEFAULT_TAU_REL,
               min_transmittance: float = DEFAULT_MIN_TRANSMITTANCE):
    """One edit step. Returns (GaussianSet, session, EditSummary).

    An empty diff mask is a documented no-op: the current set is returned
    unchanged and no undo snapshot is pushed. Otherwise the new sketch drives
    a fresh generation pass whose features are fused with the session's
    current features per layer, and the fused state is pushed onto the stack.
    """
    timings: dict = {}
    t0 = time.perf_counter()
    new_sketch = np.ascontiguousarray(new_sketch, dtype=np.float32)
    mask2d = diff_sketches(session.current_sketch, new_sketch, dilation_radius)
    timings["diff_ms"] = (time.perf_counter() - t0) * 1000
    if not mask2d.any():
        summary = EditSummary(changed=False, mask_pixels_2d=0, selected_gaussians=0,
                              uv_mask_texels=0, timings_ms=timings)
        return session.current_set(mesh), session, summary

    t0 = time.perf_counter()
    current_set = session.current_set(mesh)
    cam_mask = resize_mask_nearest(mask2d, camera.image_size)
    influence = compute_influence_weights(current_set, camera, cam_mask)
    selected = select_edited_gaussians(influence, tau_rel=tau_rel,
                                       min_transmittance=min_transmittance)
    timings["weights_ms"] = (time.perf_counter() - t0) * 1000

    t0 = time.perf_counter()
    arch = store.arch
    base_mask = build_uv_mask(selected, current_set, mesh.uv_resolution, uv_dilation)
    masks = resample_mask_pyramid(base_mask, arch.synth_resolutions)
    timings["mask_ms"] = (time.perf_counter() - t0) * 1000

    t0 = time.perf_counter()
    artifacts = fused_generation(new_sketch, reference, mesh, store,
                                 session.current.pyramid, masks)
    timings["synthesis_ms"] = (time.perf_counter() - t0) * 1000

    t0 = time.perf_counter()
    new_set = decode_uv_to_gaussians(artifacts.attributes, mesh)
    timings["decode_ms"] = (time.perf_counter() - t0) * 1000

    session.push(new_sketch, artifacts)
    summary = EditSummary(changed=True,
                          mask_pixels_2d=int(mask2d.sum()),
                          selected_gaussians=int(selected.size),
                          uv_mask_texels=int(base_mask.sum()),
                          timings_ms=timings)
    return new_set, session, summary


def composite_3d_baseline(original: GaussianSet, regenerated: GaussianSet,
                          indices: np.ndarray) -> GaussianSet:
    """Ablation: splice regenerated Gaussians into the original set in 3D."""
    if len(original) != len(regenerated) or \
            original.uv_resolution != regenerated.uv_resolution or \
            not np.array_equal(original.uv_texel_index, regenerated.uv_texel_index):
        raise ContractViolationError(
            "composite baseline requires texel-aligned sets from the same atlas")
    return original.replace_rows(np.asarray(indices, dtype=np.int64), regenerated)


def regenerate_baseline(new_sketch: np.ndarray, reference: np.ndarray,
                        mesh: TemplateMesh, store: WeightStore) -> GaussianSet:
    """Ablation: regenerate the whole head from the edit sketch, no fusion."""
    gset, _ = generate_head(new_sketch, reference, mesh, store)
    return gset


def mask_texel_indices(base_mask: np.ndarray, gset: GaussianSet) -> np.ndarray:
    """Indices of Gaussians whose source texel lies inside a base UV mask."""
    tex = gset.uv_texel_index
    bound = tex[:, 0] != UNBOUND_TEXEL
    hit = np.zeros(len(gset), dtype=bool)
    hit[bound] = base_mask[tex[bound, 1], tex[bound, 0]]
    return np.nonzero(hit)[0].astype(np.int64)
