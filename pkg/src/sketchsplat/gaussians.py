"""3D Gaussian primitives: attribute storage, covariance factorization, density.

A primitive carries position mu, per-axis scale s, unit quaternion q (wxyz),
opacity and RGB color. Its covariance is Sigma = R S S^T R^T and the density
at a world point x is exp(-0.5 (x-mu)^T Sigma^-1 (x-mu)).

All stored attributes are float32; see the test suite for float64 oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidPrimitiveError

# Quaternion norms within this band are silently renormalized; outside it the
# primitive is rejected as malformed rather than guessed at.
_QUAT_NORM_BAND = (0.9, 1.1)

UNBOUND_TEXEL = -1  # sentinel for Gaussians with no source UV texel


def _as_f32(x, shape, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float32)
    if arr.shape != shape:
        raise DimensionError(f"{name}: expected shape {shape}, got {arr.shape}")
    return arr


def normalize_quaternion(q: np.ndarray) -> np.ndarray:
    """Renormalize a wxyz quaternion; reject norms outside the tolerance band."""
    q = np.asarray(q, dtype=np.float32)
    norm = float(np.sqrt(np.sum(q.astype(np.float64) ** 2)))
    if not (_QUAT_NORM_BAND[0] <= norm <= _QUAT_NORM_BAND[1]):
        raise InvalidPrimitiveError(f"quaternion norm {norm:.4f} outside {_QUAT_NORM_BAND}")
    return (q / np.float32(norm)).astype(np.float32)


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit wxyz quaternion. Shape (..., 4) -> (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float32)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float32)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


@dataclass(frozen=True)
class GaussianPrimitive:
    """One anisotropic 3D Gaussian. Immutable after construction.

    position: world-space mean (3,)
    scale:    per-axis standard deviations, strictly positive (3,)
    rotation: unit quaternion wxyz (4,); renormalized on construction
    opacity:  in [0, 1]
    color:    RGB in [0, 1] (3,)
    """

    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    color: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _as_f32(self.position, (3,), "position"))
        scale = _as_f32(self.scale, (3,), "scale")
        if not np.all(scale > 0):
            raise InvalidPrimitiveError(f"scale must be strictly positive, got {scale}")
        object.__setattr__(self, "scale", scale)
        rot = _as_f32(self.rotation, (4,), "rotation")
        object.__setattr__(self, "rotation", normalize_quaternion(rot))
        op = float(self.opacity)
        if not (0.0 <= op <= 1.0):
            raise InvalidPrimitiveError(f"opacity must be in [0,1], got {op}")
        object.__setattr__(self, "opacity", op)
        color = _as_f32(self.color, (3,), "color")
        if np.any(color < 0) or np.any(color > 1):
            raise InvalidPrimitiveError(f"color channels must be in [0,1], got {color}")
        object.__setattr__(self, "color", color)

    def covariance(self) -> np.ndarray:
        return build_covariance(self.scale, self.rotation)


def build_covariance(scale: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """Sigma = R S S^T R^T for per-axis scale and unit wxyz quaternion."""
    scale = _as_f32(scale, (3,), "scale")
    if not np.all(scale > 0):
        raise InvalidPrimitiveError(f"scale must be strictly positive, got {scale}")
    rot = normalize_quaternion(_as_f32(rotation, (4,), "rotation"))
    r = quaternion_to_matrix(rot)
    rs = r * scale[None, :]  # R @ diag(s)
    return rs @ rs.T


def build_covariances(scales: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """Batched Sigma = R S S^T R^T. (N,3),(N,4) -> (N,3,3). Inputs assumed valid."""
    r = quaternion_to_matrix(np.asarray(rotations, dtype=np.float32))
    rs = r * np.asarray(scales, dtype=np.float32)[:, None, :]
    return rs @ np.transpose(rs, (0, 2, 1))


def evaluate_density(primitive: GaussianPrimitive, point: np.ndarray) -> float:
    """Unnormalized Gaussian density exp(-0.5 d^T Sigma^-1 d) at a world point."""
    point = _as_f32(point, (3,), "point")
    cov = primitive.covariance()
    try:
        inv = np.linalg.inv(cov)
    except np.linalg.LinAlgError as exc:  # positive scales make this unreachable
        raise InvalidPrimitiveError("singular covariance") from exc
    d = point - primitive.position
    maha = float(d @ inv @ d)
    return float(np.exp(np.float32(-0.5) * np.float32(maha)))


class GaussianSet:
    """Flat struct-of-arrays collection of Gaussians plus UV texel bindings.

    positions (N,3), scales (N,3), rotations (N,4), opacities (N,), colors (N,3),
    all float32. uv_texel_index (N,2) int32 holds the source texel (ix, iy) or
    (UNBOUND_TEXEL, UNBOUND_TEXEL) for Gaussians not decoded from a UV map.
    Immutable by convention: operations return new sets.
    """

    def __init__(self, positions, scales, rotations, opacities, colors,
                 uv_texel_index=None, uv_resolution: int = 0, validate: bool = True):
        self.positions = np.ascontiguousarray(positions, dtype=np.float32)
        self.scales = np.ascontiguousarray(scales, dtype=np.float32)
        self.rotations = np.ascontiguousarray(rotations, dtype=np.float32)
        self.opacities = np.ascontiguousarray(opacities, dtype=np.float32).reshape(-1)
        self.colors = np.ascontiguousarray(colors, dtype=np.float32)
        n = self.positions.shape[0]
        if uv_texel_index is None:
            uv_texel_index = np.full((n, 2), UNBOUND_TEXEL, dtype=np.int32)
        self.uv_texel_index = np.ascontiguousarray(uv_texel_index, dtype=np.int32)
        self.uv_resolution = int(uv_resolution)
        if validate:
            self._validate()

    def _validate(self):
        n = len(self)
        for name, arr, shape in [("positions", self.positions, (n, 3)),
                                 ("scales", self.scales, (n, 3)),
                                 ("rotations", self.rotations, (n, 4)),
                                 ("opacities", self.opacities, (n,)),
                                 ("colors", self.colors, (n, 3)),
                                 ("uv_texel_index", self.uv_texel_index, (n, 2))]:
            if arr.shape != shape:
                raise DimensionError(f"{name}: expected {shape}, got {arr.shape}")
        if n == 0:
            return
        if not np.all(self.scales > 0):
            raise InvalidPrimitiveError("all scale components must be strictly positive")
        norms = np.linalg.norm(self.rotations.astype(np.float64), axis=1)
        if np.any(norms < _QUAT_NORM_BAND[0]) or np.any(norms > _QUAT_NORM_BAND[1]):
            raise InvalidPrimitiveError("quaternion norm outside tolerance band")
        self.rotations = (self.rotations / norms[:, None]).astype(np.float32)
        if np.any(self.opacities < 0) or np.any(self.opacities > 1):
            raise InvalidPrimitiveError("opacities must be in [0,1]")
        if np.any(self.colors < 0) or np.any(self.colors > 1):
            raise InvalidPrimitiveError("color channels must be in [0,1]")
        bound = self.uv_texel_index[:, 0] != UNBOUND_TEXEL
        if np.any(bound):
            if self.uv_resolution <= 0:
                raise DimensionError("texel-bound set requires a declared uv_resolution")
            idx = self.uv_texel_index[bound]
            if np.any(idx < 0) or np.any(idx >= self.uv_resolution):
                raise DimensionError("uv_texel_index out of bounds for declared resolution")

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    def primitive(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(self.positions[i], self.scales[i], self.rotations[i],
                                 float(self.opacities[i]), self.colors[i])

    def replace_rows(self, indices: np.ndarray, other: "GaussianSet") -> "GaussianSet":
        """New set with rows at `indices` taken from `other` (same length/binding)."""
        out = GaussianSet(self.positions.copy(), self.scales.copy(), self.rotations.copy(),
                          self.opacities.copy(), self.colors.copy(),
                          self.uv_texel_index.copy(), self.uv_resolution, validate=False)
        idx = np.asarray(indices, dtype=np.int64)
        out.positions[idx] = other.positions[idx]
        out.scales[idx] = other.scales[idx]
        out.rotations[idx] = other.rotations[idx]
        out.opacities[idx] = other.opacities[idx]
        out.colors[idx] = other.colors[idx]
        return out

    def content_hash(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for arr in (self.positions, self.scales, self.rotations, self.opacities,
                    self.colors, self.uv_texel_index):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(str(self.uv_resolution).encode())
        return h.hexdigest()

    @staticmethod
    def empty() -> "GaussianSet":
        z = np.zeros((0, 3), dtype=np.float32)
        return GaussianSet(z, z, np.zeros((0, 4), dtype=np.float32),
                           np.zeros(0, dtype=np.float32), z)
