"""Fine stage: U-Net modulation extraction, identity-aware latent fusion, and
the style-modulated synthesis stack that emits the raw UV attribute map.

`synthesize_uv` accepts a fusion hook invoked after every layer; whatever the
hook returns is both captured in the feature pyramid and consumed by the next
layer, which is the insertion point for layer-by-layer feature fusion. The
final layer's output *is* the raw 14-channel attribute map, so a hook applied
after it rewrites raw attributes exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..container import load_named_tensors, save_named_tensors
from ..errors import ContractViolationError, DimensionError, StorageError
from ..gaussians import GaussianSet
from ..mesh import TemplateMesh
from ..nn import ops
from ..nn.arch import ArchitectureSpec
from ..nn.weights import WeightStore
from ..uvmap import (UvAttributeMap, UvFeatureMap, attribute_map_from_raw,
                     decode_uv_to_gaussians, load_attribute_map, load_feature_map,
                     save_attribute_map, save_feature_map)
from .coarse import build_coarse_uv


@dataclass
class LatentCode:
    """W+-style per-layer style vectors, shape (n_layers, style_dim)."""

    styles: np.ndarray

    def __post_init__(self):
        self.styles = np.ascontiguousarray(self.styles, dtype=np.float32)
        if self.styles.ndim != 2:
            raise DimensionError("latent code must be (n_layers, style_dim)")


@dataclass
class ModulationBundle:
    """Global latent plus one spatial detail map per synthesis layer."""

    global_latent: np.ndarray          # (latent_dim,)
    spatial_pyramid: list              # list[UvFeatureMap], ascending resolution

    def validate(self, arch: ArchitectureSpec) -> None:
        if self.global_latent.shape != (arch.latent_dim,):
            raise DimensionError("global latent dimension mismatch")
        if len(self.spatial_pyramid) != arch.n_layers:
            raise DimensionError("spatial pyramid length != synthesis layer count")
        for level, (res, ch) in zip(self.spatial_pyramid,
                                    zip(arch.synth_resolutions, arch.synth_channels)):
            if level.resolution != res or level.channel_count != ch:
                raise DimensionError(
                    f"pyramid level {level.resolution}x{level.channel_count} does "
                    f"not match layer {res}x{ch}")


@dataclass
class FeaturePyramid:
    """Per-layer feature maps captured during synthesis, (C, H, W) float32."""

    levels: list

    def level(self, k: int) -> np.ndarray:
        return self.levels[k]

    def __len__(self) -> int:
        return len(self.levels)


def extract_modulation(coarse_uv: UvFeatureMap, store: WeightStore,
                       arch: ArchitectureSpec) -> ModulationBundle:
    """U-Net over the coarse map: pooled bottleneck -> global latent; decoder
    heads -> one spatial map per synthesis resolution."""
    if coarse_uv.resolution != arch.uv_resolution:
        raise DimensionError(
            f"coarse map resolution {coarse_uv.resolution} != {arch.uv_resolution}")
    if coarse_uv.channel_count != arch.coarse_channels:
        raise DimensionError(
            f"coarse map channels {coarse_uv.channel_count} != {arch.coarse_channels}")
    x = ops.to_torch(coarse_uv.data).permute(2, 0, 1)
    x = ops.lrelu_gain(ops.conv2d(x, store, "unet.stem"))
    skips = []
    for i in range(len(arch.unet_enc)):
        x = ops.lrelu_gain(ops.conv2d(x, store, f"unet.enc{i}"))
        skips.append(x)
        x = ops.avg_pool2x(x)
    x = ops.lrelu_gain(ops.conv2d(x, store, "unet.bottleneck"))
    latent = ops.linear(x.mean(dim=(1, 2))[None], store, "unet.latent")[0]

    pyramid = [ops.conv2d(x, store, "unet.pyr0")]
    carry = x
    for i in range(1, len(arch.unet_dec) + 1):
        carry = ops.upsample2x(carry)
        carry = torch.cat([carry, skips[len(skips) - i]], dim=0)
        carry = ops.lrelu_gain(ops.conv2d(carry, store, f"unet.dec{i}"))
        pyramid.append(ops.conv2d(carry, store, f"unet.pyr{i}"))
    levels = [UvFeatureMap(resolution=p.shape[1],
                           data=ops.to_numpy(p.permute(1, 2, 0))) for p in pyramid]
    bundle = ModulationBundle(global_latent=ops.to_numpy(latent),
                              spatial_pyramid=levels)
    bundle.validate(arch)
    return bundle


def fuse_latent(f_latent: np.ndarray, id_geometry: np.ndarray,
                id_appearance: np.ndarray, store: WeightStore,
                arch: ArchitectureSpec) -> LatentCode:
    """concat(F_latent, id vectors) -> MLP -> per-layer style vectors."""
    parts = [np.asarray(f_latent, dtype=np.float32).reshape(-1),
             np.asarray(id_geometry, dtype=np.float32).reshape(-1),
             np.asarray(id_appearance, dtype=np.float32).reshape(-1)]
    expected = (arch.latent_dim, arch.geo_dim, arch.app_dim)
    for part, dim, name in zip(parts, expected, ("latent", "id_geometry", "id_appearance")):
        if part.shape != (dim,):
            raise DimensionError(f"fuse_latent: {name} has dim {part.shape}, wants ({dim},)")
    x = ops.to_torch(np.concatenate(parts))[None]
    h = ops.lrelu_gain(ops.linear(x, store, "fuse.1"))
    y = ops.linear(h, store, "fuse.2")[0]
    return LatentCode(styles=ops.to_numpy(y).reshape(arch.n_layers, arch.style_dim))


def synthesize_uv(latent: LatentCode, modulation: ModulationBundle,
                  store: WeightStore, arch: ArchitectureSpec, mesh: TemplateMesh,
                  fusion_hook=None):
    """Run the synthesis stack from the learned constant input.

    fusion_hook(layer_index, features (C,H,W) float32) -> features, applied
    after every layer; the returned features are captured and feed the next
    layer. Returns (UvAttributeMap, FeaturePyramid captured post-hook).
    """
    if latent.styles.shape != (arch.n_layers, arch.style_dim):
        raise DimensionError(
            f"latent styles {latent.styles.shape} != "
            f"({arch.n_layers},{arch.style_dim})")
    modulation.validate(arch)
    gains = ops.to_torch(np.asarray(arch.attr_gains, dtype=np.float32))
    biases = ops.to_torch(np.asarray(arch.attr_biases, dtype=np.float32))
    x = store.torch("synth.const")
    levels = []
    for k in range(arch.n_layers):
        final = k == arch.n_layers - 1
        spatial = ops.to_torch(modulation.spatial_pyramid[k].data).permute(2, 0, 1) \
            * arch.spatial_mod_gains[k]
        y = ops.modulated_synthesis_layer(
            x, ops.to_torch(latent.styles[k]), store, f"synth.layer{k}",
            spatial_mod=spatial, upsample=k > 0, activate=not final,
            out_gain=gains if final else None, out_bias=biases if final else None)
        feats = ops.to_numpy(y)
        if fusion_hook is not None:
            fused = fusion_hook(k, feats)
            fused = np.asarray(fused)
            if fused.shape != feats.shape or fused.dtype != np.float32:
                raise ContractViolationError(
                    f"fusion hook returned {fused.dtype} {fused.shape} for layer {k}, "
                    f"expected float32 {feats.shape}")
            feats = np.ascontiguousarray(fused)
        levels.append(feats)
        x = ops.to_torch(feats)
    raw = np.transpose(levels[-1], (1, 2, 0))  # (H, W, 14)
    attr = attribute_map_from_raw(raw, mesh)
    return attr, FeaturePyramid(levels=levels)


@dataclass
class GenerationArtifacts:
    """Everything a later edit needs to fuse against this head's synthesis."""

    coarse_uv: UvFeatureMap
    id_geometry: np.ndarray
    id_appearance: np.ndarray
    latent: LatentCode
    modulation: ModulationBundle
    pyramid: FeaturePyramid
    attributes: UvAttributeMap
    weights_fingerprint: str

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.attributes.raw.tobytes())
        for lvl in self.pyramid.levels:
            h.update(lvl.tobytes())
        h.update(self.latent.styles.tobytes())
        return h.hexdigest()

    def copy(self) -> "GenerationArtifacts":
        return GenerationArtifacts(
            coarse_uv=UvFeatureMap(self.coarse_uv.resolution, self.coarse_uv.data.copy()),
            id_geometry=self.id_geometry.copy(),
            id_appearance=self.id_appearance.copy(),
            latent=LatentCode(self.latent.styles.copy()),
            modulation=ModulationBundle(
                self.modulation.global_latent.copy(),
                [UvFeatureMap(m.resolution, m.data.copy())
                 for m in self.modulation.spatial_pyramid]),
            pyramid=FeaturePyramid([lvl.copy() for lvl in self.pyramid.levels]),
            attributes=UvAttributeMap(self.attributes.resolution,
                                      self.attributes.raw.copy(),
                                      self.attributes.validity.copy()),
            weights_fingerprint=self.weights_fingerprint)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_feature_map(d / "coarse_uv.uvfc", self.coarse_uv)
        save_attribute_map(d / "attributes.uvfc", self.attributes)
        tensors = {
            "id_geometry": self.id_geometry,
            "id_appearance": self.id_appearance,
            "latent.styles": self.latent.styles,
            "modulation.global": self.modulation.global_latent,
        }
        for k, level in enumerate(self.modulation.spatial_pyramid):
            tensors[f"modulation.level{k}"] = level.data
        for k, level in enumerate(self.pyramid.levels):
            tensors[f"pyramid.level{k}"] = level
        save_named_tensors(d / "tensors.sstn", tensors)
        manifest = {
            "kind": "generation-artifacts",
            "weights_fingerprint": self.weights_fingerprint,
            "content_hash": self.content_hash(),
            "uv_resolution": self.attributes.resolution,
            "layers": len(self.pyramid.levels),
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True),
                                         encoding="utf-8")

    @staticmethod
    def load(directory) -> "GenerationArtifacts":
        d = Path(directory)
        try:
            manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
        except OSError as exc:
            raise StorageError(f"cannot read artifacts manifest in {d}: {exc}") from exc
        coarse = load_feature_map(d / "coarse_uv.uvfc")
        attrs = load_attribute_map(d / "attributes.uvfc")
        tensors = load_named_tensors(d / "tensors.sstn")
        n_layers = int(manifest["layers"])
        modulation = ModulationBundle(
            global_latent=tensors["modulation.global"],
            spatial_pyramid=[
                UvFeatureMap(resolution=tensors[f"modulation.level{k}"].shape[0],
                             data=tensors[f"modulation.level{k}"])
                for k in range(n_layers)])
        art = GenerationArtifacts(
            coarse_uv=coarse,
            id_geometry=tensors["id_geometry"],
            id_appearance=tensors["id_appearance"],
            latent=LatentCode(styles=tensors["latent.styles"]),
            modulation=modulation,
            pyramid=FeaturePyramid([tensors[f"pyramid.level{k}"] for k in range(n_layers)]),
            attributes=attrs,
            weights_fingerprint=manifest["weights_fingerprint"])
        if art.content_hash() != manifest["content_hash"]:
            raise StorageError(f"{d}: artifact content hash mismatch")
        return art


def generate_head(sketch: np.ndarray, reference: np.ndarray, mesh: TemplateMesh,
                  store: WeightStore, fusion_hook=None):
    """Sketch + reference -> (GaussianSet, GenerationArtifacts)."""
    arch = store.arch
    coarse, id_geo, id_app = build_coarse_uv(sketch, reference, mesh, store, arch)
    modulation = extract_modulation(coarse, store, arch)
    latent = fuse_latent(modulation.global_latent, id_geo, id_app, store, arch)
    attrs, pyramid = synthesize_uv(latent, modulation, store, arch, mesh,
                                   fusion_hook=fusion_hook)
    artifacts = GenerationArtifacts(
        coarse_uv=coarse, id_geometry=id_geo, id_appearance=id_app, latent=latent,
        modulation=modulation, pyramid=pyramid, attributes=attrs,
        weights_fingerprint=store.fingerprint)
    return decode_uv_to_gaussians(attrs, mesh), artifacts
