"""Coarse stage: sketch/reference encoding, dual query-token transformer
branches, barycentric UV projection and statistics-based alignment.

The geometry branch sees only the sketch and the appearance branch only the
reference image, so the two factor cleanly by construction. Both branches run
cross-attention + feed-forward blocks over the concatenation of per-vertex
learnable queries and a handful of identity tokens; identity vectors are the
mean of the post-block identity-token outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import DimensionError
from ..imgio import sketch_to_rgb
from ..mesh import TemplateMesh, splat_vertex_features_to_uv
from ..nn import ops
from ..nn.arch import ArchitectureSpec
from ..nn.weights import WeightStore
from ..uvmap import UvFeatureMap


@dataclass
class BranchOutput:
    vertex_features: np.ndarray  # (V, D) float32
    identity_vector: np.ndarray  # (D,) float32


def encode_image(image_rgb: np.ndarray, store: WeightStore,
                 arch: ArchitectureSpec) -> torch.Tensor:
    """RGB raster at the pipeline input size -> (patches, embed_dim) tokens."""
    img = np.asarray(image_rgb, dtype=np.float32)
    if img.shape != (arch.image_size, arch.image_size, 3):
        raise DimensionError(
            f"encode_image: expected ({arch.image_size},{arch.image_size},3), "
            f"got {img.shape}")
    x = ops.to_torch(img).permute(2, 0, 1)  # (3, H, W)
    for i in range(4):
        x = ops.lrelu_gain(ops.conv2d(x, store, f"embed.conv{i}", stride=2))
    c = x.shape[0]
    return x.reshape(c, -1).T.contiguous()  # (grid*grid, embed_dim)


def canonical_patch_coords(mesh: TemplateMesh, arch: ArchitectureSpec) -> np.ndarray:
    """Patch-grid coordinates of each vertex under the canonical front view.

    Sketches are drawn in the canonical frontal pose, so this fixes which image
    region each vertex query is biased toward.
    """
    from ..cameras import default_camera
    cam = default_camera((arch.image_size, arch.image_size))
    rot, tvec = cam.view_matrix()
    t = mesh.vertices @ rot.T + tvec
    focal = np.float32(cam.focal_px())
    inv_z = 1.0 / np.maximum(t[:, 2], np.float32(1e-3))
    px = focal * t[:, 0] * inv_z + arch.image_size / 2.0
    py = focal * t[:, 1] * inv_z + arch.image_size / 2.0
    patch = arch.image_size / arch.patch_grid
    coords = np.stack([px, py], axis=1) / patch - 0.5
    return np.clip(coords, 0.0, arch.patch_grid - 1.0).astype(np.float32)


def positional_attention_bias(query_patch_coords: np.ndarray, n_id_tokens: int,
                              arch: ArchitectureSpec) -> torch.Tensor:
    """Gaussian-falloff logit bias between vertex queries and image patches.

    Identity-token rows are zero: they aggregate globally.
    """
    g = arch.patch_grid
    gy, gx = np.mgrid[0:g, 0:g].astype(np.float32)
    patch_xy = np.stack([gx.ravel(), gy.ravel()], axis=1)  # (M, 2), row-major
    d2 = ((query_patch_coords[:, None, :] - patch_xy[None, :, :]) ** 2).sum(axis=2)
    bias = -arch.pos_bias_gain * d2 / (2.0 * arch.pos_bias_sigma ** 2)
    full = np.concatenate([bias, np.zeros((n_id_tokens, bias.shape[1]),
                                          dtype=np.float32)], axis=0)
    return ops.to_torch(full.astype(np.float32))


def run_branch(branch: str, image_tokens: torch.Tensor, store: WeightStore,
               arch: ArchitectureSpec,
               attention_bias: torch.Tensor | None = None) -> BranchOutput:
    """Run the geometry ('geo') or appearance ('app') transformer branch."""
    if branch not in ("geo", "app"):
        raise DimensionError(f"unknown branch {branch!r}")
    if image_tokens.shape[-1] != arch.embed_dim:
        raise DimensionError(
            f"image tokens dim {image_tokens.shape[-1]} != embed_dim {arch.embed_dim}")
    n_blocks = arch.geo_blocks if branch == "geo" else arch.app_blocks
    queries = store.torch(f"{branch}.queries")
    id_tokens = store.torch(f"{branch}.id_tokens")
    x = torch.cat([queries, id_tokens], dim=0)
    for b in range(n_blocks):
        p = f"{branch}.block{b}"
        x = x + ops.cross_attention(ops.layer_norm(x, store, f"{p}.ln1"),
                                    image_tokens, store, f"{p}.attn",
                                    bias=attention_bias)
        h = ops.lrelu_gain(ops.linear(ops.layer_norm(x, store, f"{p}.ln2"),
                                      store, f"{p}.ff.1"))
        x = x + ops.linear(h, store, f"{p}.ff.2")
    x = ops.layer_norm(x, store, f"{branch}.final_ln")
    ops.require_finite(x, f"{branch} branch")
    v = arch.vertex_count
    return BranchOutput(vertex_features=ops.to_numpy(x[:v]),
                        identity_vector=ops.to_numpy(x[v:].mean(dim=0)))


def predict_appearance_stats(appearance_uv: UvFeatureMap, store: WeightStore,
                             arch: ArchitectureSpec) -> tuple:
    """Pool the appearance map and predict per-channel (mean, std) targets."""
    pooled = ops.to_torch(appearance_uv.data).mean(dim=(0, 1))  # (app_dim,)
    h = ops.lrelu_gain(ops.linear(pooled[None], store, "align.stats.1"))
    out = ops.linear(h, store, "align.stats.2")[0]
    mean = out[:arch.geo_dim]
    std = torch.nn.functional.softplus(out[arch.geo_dim:])
    return mean, std


def align_appearance(geometry_uv: UvFeatureMap, appearance_uv: UvFeatureMap,
                     store: WeightStore, arch: ArchitectureSpec) -> UvFeatureMap:
    """AdaIN the geometry map toward appearance-predicted statistics, then add
    a small convolutional residual refinement."""
    if geometry_uv.resolution != appearance_uv.resolution:
        raise DimensionError(
            f"align: geometry resolution {geometry_uv.resolution} != appearance "
            f"{appearance_uv.resolution}")
    stats = predict_appearance_stats(appearance_uv, store, arch)
    geo = ops.to_torch(geometry_uv.data).permute(2, 0, 1)  # (C, H, W)
    aligned = ops.adain(geo, stats)
    refined = aligned + ops.conv2d(aligned, store, "align.refine")
    return UvFeatureMap(resolution=geometry_uv.resolution,
                        data=ops.to_numpy(refined.permute(1, 2, 0)))


def build_coarse_uv(sketch: np.ndarray, reference: np.ndarray, mesh: TemplateMesh,
                    store: WeightStore, arch: ArchitectureSpec):
    """Full coarse stage.

    sketch: (S, S) {0,1} stroke raster; reference: (S, S, 3) rgb in [0,1].
    Returns (coarse UvFeatureMap [geometry || aligned], id_geometry (geo_dim,),
    id_appearance (app_dim,)). Texels outside the atlas are zero in both halves.
    """
    sketch_tokens = encode_image(sketch_to_rgb(sketch), store, arch)
    ref_tokens = encode_image(np.asarray(reference, dtype=np.float32), store, arch)
    coords = canonical_patch_coords(mesh, arch)
    bias = positional_attention_bias(coords, arch.id_tokens, arch)
    geo = run_branch("geo", sketch_tokens, store, arch, attention_bias=bias)
    app = run_branch("app", ref_tokens, store, arch, attention_bias=bias)

    res = mesh.uv_resolution
    geo_uv = splat_vertex_features_to_uv(geo.vertex_features, mesh, res)
    app_uv = splat_vertex_features_to_uv(app.vertex_features, mesh, res)
    aligned = align_appearance(geo_uv, app_uv, store, arch)

    valid = mesh.texel_table(res).valid.astype(np.float32)[:, :, None]
    data = np.concatenate([geo_uv.data, aligned.data], axis=2) * valid
    coarse = UvFeatureMap(resolution=res, data=data)
    return coarse, geo.identity_vector, app.identity_vector
