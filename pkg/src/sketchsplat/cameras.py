"""Pinhole camera model and look-at view transform.

View space follows the OpenCV convention: x right, y down, z forward, so view
depth is plain z. Pixel (i, j) covers [i, i+1) x [j, j+1) with its center at
(i + 0.5, j + 0.5); the principal point sits at the image center (W/2, H/2).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError


@dataclass(frozen=True)
class Camera:
    position: np.ndarray      # (3,) world
    look_at: np.ndarray       # (3,) world
    up: np.ndarray            # (3,) world hint
    vertical_fov: float       # radians
    image_size: tuple         # (width, height) pixels
    near: float = 0.05
    far: float = 100.0

    def __post_init__(self):
        for name in ("position", "look_at", "up"):
            v = np.asarray(getattr(self, name), dtype=np.float32)
            if v.shape != (3,):
                raise DimensionError(f"camera {name}: expected (3,), got {v.shape}")
            object.__setattr__(self, name, v)
        w, h = self.image_size
        w, h = int(w), int(h)
        object.__setattr__(self, "image_size", (w, h))
        if w < 1 or h < 1:
            raise DimensionError("image_size components must be >= 1")
        if not (0.0 < self.vertical_fov < math.pi):
            raise InputError(f"vertical_fov must be in (0, pi), got {self.vertical_fov}")
        if not (self.near > 0 and self.far > self.near):
            raise InputError("camera requires near > 0 and far > near")
        fwd = self.look_at - self.position
        if float(np.linalg.norm(fwd)) < 1e-8:
            raise InputError("camera position and look_at coincide")

    @property
    def width(self) -> int:
        return self.image_size[0]

    @property
    def height(self) -> int:
        return self.image_size[1]

    def focal_px(self) -> float:
        return (self.height / 2.0) / math.tan(self.vertical_fov / 2.0)

    def view_matrix(self) -> tuple:
        """(R, t) with x_view = R @ x_world + t, float32."""
        fwd = self.look_at.astype(np.float64) - self.position.astype(np.float64)
        z = fwd / np.linalg.norm(fwd)
        up = self.up.astype(np.float64)
        x = np.cross(z, up)
        nx = np.linalg.norm(x)
        if nx < 1e-8:
            # up parallel to forward: pick any perpendicular axis
            alt = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
            x = np.cross(z, alt)
            nx = np.linalg.norm(x)
        x = x / nx
        y = np.cross(z, x)
        r = np.stack([x, y, z]).astype(np.float32)
        t = (-r @ self.position.astype(np.float32)).astype(np.float32)
        return r, t

    def to_json_dict(self) -> dict:
        return {
            "position": [float(v) for v in self.position],
            "look_at": [float(v) for v in self.look_at],
            "up": [float(v) for v in self.up],
            "vertical_fov": float(self.vertical_fov),
            "image_size": [self.width, self.height],
            "near": float(self.near),
            "far": float(self.far),
        }

    @staticmethod
    def from_json_dict(d: dict) -> "Camera":
        try:
            return Camera(
                position=np.array(d["position"], dtype=np.float32),
                look_at=np.array(d["look_at"], dtype=np.float32),
                up=np.array(d.get("up", [0.0, 1.0, 0.0]), dtype=np.float32),
                vertical_fov=float(d["vertical_fov"]),
                image_size=(int(d["image_size"][0]), int(d["image_size"][1])),
                near=float(d.get("near", 0.05)),
                far=float(d.get("far", 100.0)),
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise InputError(f"malformed camera JSON: {exc}") from exc

    @staticmethod
    def from_json(text: str) -> "Camera":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"camera JSON does not parse: {exc}") from exc
        return Camera.from_json_dict(d)


def default_camera(image_size=(512, 512)) -> Camera:
    """Front view of a head centered at the origin facing +z."""
    return Camera(position=np.array([0.0, 0.0, 2.6], dtype=np.float32),
                  look_at=np.zeros(3, dtype=np.float32),
                  up=np.array([0.0, 1.0, 0.0], dtype=np.float32),
                  vertical_fov=0.62, image_size=image_size, near=0.1, far=20.0)


def orbit_camera(azimuth: float, elevation: float = 0.0, radius: float = 2.6,
                 image_size=(512, 512), target=(0.0, 0.0, 0.0)) -> Camera:
    """Camera orbiting the target; azimuth 0 is the +z front view."""
    cx = radius * math.cos(elevation) * math.sin(azimuth)
    cy = radius * math.sin(elevation)
    cz = radius * math.cos(elevation) * math.cos(azimuth)
    tgt = np.asarray(target, dtype=np.float32)
    return Camera(position=tgt + np.array([cx, cy, cz], dtype=np.float32),
                  look_at=tgt, up=np.array([0.0, 1.0, 0.0], dtype=np.float32),
                  vertical_fov=0.62, image_size=image_size, near=0.1, far=20.0)
