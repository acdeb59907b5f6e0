"""UV-space rasters and their binary container format.

UvFeatureMap carries arbitrary float channels through the neural pipeline;
UvAttributeMap carries the 14 raw channels that decode into one Gaussian per
valid texel. Texel (ix, iy) covers UV [ix/res,(ix+1)/res) x [iy/res,(iy+1)/res);
arrays are indexed data[iy, ix, channel].

Container byte layout (little-endian), shared by both map kinds:
  magic 'SSUV' | u32 version=1 | u32 flags (bit0: validity plane present)
  | u32 resolution | u32 channel_count
  | channel_count x (u16 name_len, utf-8 name)
  | float32 data, shape (res, res, channels), C order
  | if flags&1: uint8 validity, shape (res, res), C order
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import DimensionError, StorageError
from .gaussians import GaussianSet

if TYPE_CHECKING:  # pragma: no cover
    from .mesh import TemplateMesh

MAGIC = b"SSUV"
VERSION = 1

ATTRIBUTE_CHANNELS = (
    "offset_x", "offset_y", "offset_z",
    "log_scale_x", "log_scale_y", "log_scale_z",
    "rot_w", "rot_x", "rot_y", "rot_z",
    "opacity_logit",
    "color_r", "color_g", "color_b",
)
N_ATTRIBUTE_CHANNELS = len(ATTRIBUTE_CHANNELS)  # 14

OFFSET_BOUND = np.float32(0.05)   # world-unit bound of the tanh offset activation
SCALE_MIN = np.float32(1e-4)
SCALE_MAX = np.float32(0.5)


@dataclass
class UvFeatureMap:
    """Square multi-channel float raster over the UV atlas."""

    resolution: int
    data: np.ndarray  # (res, res, C) float32

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.shape[:2] != (self.resolution, self.resolution) or self.data.ndim != 3:
            raise DimensionError(
                f"feature map data {self.data.shape} does not match resolution "
                f"{self.resolution}")
        if not np.all(np.isfinite(self.data)):
            raise DimensionError("feature map contains non-finite values")

    @property
    def channel_count(self) -> int:
        return int(self.data.shape[2])


@dataclass
class UvAttributeMap:
    """Raw per-texel Gaussian attribute channels plus the atlas validity plane."""

    resolution: int
    raw: np.ndarray       # (res, res, 14) float32
    validity: np.ndarray  # (res, res) bool

    def __post_init__(self):
        self.raw = np.ascontiguousarray(self.raw, dtype=np.float32)
        self.validity = np.ascontiguousarray(self.validity, dtype=bool)
        if self.raw.shape != (self.resolution, self.resolution, N_ATTRIBUTE_CHANNELS):
            raise DimensionError(
                f"attribute map raw {self.raw.shape} must be "
                f"({self.resolution},{self.resolution},{N_ATTRIBUTE_CHANNELS})")
        if self.validity.shape != (self.resolution, self.resolution):
            raise DimensionError("validity plane shape mismatch")

    def content_hash(self) -> str:
        import hashlib
        h = hashlib.sha256()
        h.update(self.raw.tobytes())
        h.update(np.packbits(self.validity).tobytes())
        return h.hexdigest()


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return (1.0 / (1.0 + np.exp(-x.astype(np.float64)))).astype(np.float32)


def decode_uv_to_gaussians(attr: UvAttributeMap, mesh: "TemplateMesh") -> GaussianSet:
    """One Gaussian per valid texel, GGHead-style activations.

    position = texel surface point + OFFSET_BOUND * tanh(offset channels)
    scale    = clamp(exp(log_scale), SCALE_MIN, SCALE_MAX)
    rotation = normalized quaternion channels (identity when all-zero)
    opacity  = sigmoid(logit); color = sigmoid(raw)
    Gaussians appear in row-major valid-texel scan order; uv_texel_index
    records (ix, iy) per Gaussian.
    """
    if attr.resolution != mesh.uv_resolution:
        raise DimensionError(
            f"attribute map resolution {attr.resolution} != mesh uv_resolution "
            f"{mesh.uv_resolution}")
    table = mesh.texel_table(attr.resolution)
    if bool(np.any(table.valid != attr.validity)):
        raise DimensionError("attribute map validity plane disagrees with mesh atlas")
    iy, ix = table.valid_iy, table.valid_ix
    raw = attr.raw[iy, ix]  # (K, 14)

    surface = mesh.surface_points(attr.resolution)
    positions = surface + OFFSET_BOUND * np.tanh(raw[:, 0:3])
    scales = np.clip(np.exp(raw[:, 3:6].astype(np.float64)),
                     float(SCALE_MIN), float(SCALE_MAX)).astype(np.float32)
    quat = raw[:, 6:10].astype(np.float64)
    norms = np.linalg.norm(quat, axis=1)
    degenerate = norms < 1e-8
    quat[degenerate] = (1.0, 0.0, 0.0, 0.0)
    norms[degenerate] = 1.0
    rotations = (quat / norms[:, None]).astype(np.float32)
    opacities = _sigmoid(raw[:, 10])
    colors = _sigmoid(raw[:, 11:14])
    texels = np.stack([ix, iy], axis=1).astype(np.int32)
    return GaussianSet(positions, scales, rotations, opacities, colors,
                       uv_texel_index=texels, uv_resolution=attr.resolution)


def attribute_map_from_raw(raw: np.ndarray, mesh: "TemplateMesh") -> UvAttributeMap:
    """Pair raw channels with the mesh's validity plane at its atlas resolution."""
    res = mesh.uv_resolution
    table = mesh.texel_table(res)
    return UvAttributeMap(resolution=res, raw=raw, validity=table.valid.copy())


# ---------------------------------------------------------------------------
# Container serialization
# ---------------------------------------------------------------------------

def _write_container(path, data: np.ndarray, names, validity=None) -> None:
    res, _, channels = data.shape
    flags = 1 if validity is not None else 0
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", VERSION, flags, res))
        f.write(struct.pack("<I", channels))
        for name in names:
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
        if validity is not None:
            f.write(np.ascontiguousarray(validity, dtype=np.uint8).tobytes())


def _read_container(path):
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise StorageError(f"cannot read container {path}: {exc}") from exc
    if blob[:4] != MAGIC:
        raise StorageError(f"{path}: bad magic, not a UV container")
    version, flags, res = struct.unpack("<III", blob[4:16])
    if version != VERSION:
        raise StorageError(f"{path}: unsupported container version {version}")
    (channels,) = struct.unpack("<I", blob[16:20])
    off = 20
    names = []
    for _ in range(channels):
        (n,) = struct.unpack("<H", blob[off:off + 2])
        off += 2
        names.append(blob[off:off + n].decode("utf-8"))
        off += n
    need = res * res * channels * 4
    if len(blob) < off + need:
        raise StorageError(f"{path}: truncated container data")
    data = np.frombuffer(blob[off:off + need], dtype="<f4").reshape(res, res, channels)
    off += need
    validity = None
    if flags & 1:
        if len(blob) < off + res * res:
            raise StorageError(f"{path}: truncated validity plane")
        validity = np.frombuffer(blob[off:off + res * res],
                                 dtype=np.uint8).reshape(res, res).astype(bool)
    return data.astype(np.float32), names, validity


def save_feature_map(path, fmap: UvFeatureMap) -> None:
    names = [f"c{str(i).zfill(3)}" for i in range(fmap.channel_count)]
    _write_container(path, fmap.data, names)


def load_feature_map(path) -> UvFeatureMap:
    data, _, _ = _read_container(path)
    return UvFeatureMap(resolution=data.shape[0], data=data)


def save_attribute_map(path, attr: UvAttributeMap) -> None:
    _write_container(path, attr.raw, ATTRIBUTE_CHANNELS, validity=attr.validity)


def load_attribute_map(path) -> UvAttributeMap:
    data, names, validity = _read_container(path)
    if tuple(names) != ATTRIBUTE_CHANNELS:
        raise StorageError(f"{path}: unexpected channel table for an attribute map")
    if validity is None:
        raise StorageError(f"{path}: attribute map container lacks a validity plane")
    return UvAttributeMap(resolution=data.shape[0], raw=data, validity=validity)
