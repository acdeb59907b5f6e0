"""Seeded random Gaussian scenes for oracle suites and benchmarks.

Opacities are capped and footprints kept small so per-pixel transmittance
stays well above the early-termination threshold; the rasterizer/reference
equivalence claim is scoped to that regime and the oracle suite asserts it.
"""

from __future__ import annotations

import numpy as np

from .cameras import Camera, default_camera
from .gaussians import GaussianSet


def random_scene(seed: int, n: int = 3000, opacity_max: float = 0.6,
                 scale_range=(0.004, 0.05)) -> GaussianSet:
    rng = np.random.default_rng(seed)
    positions = rng.uniform(-1.0, 1.0, (n, 3)).astype(np.float32)
    scales = rng.uniform(scale_range[0], scale_range[1], (n, 3)).astype(np.float32)
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    opacities = rng.uniform(0.05, opacity_max, n).astype(np.float32)
    colors = rng.uniform(0.0, 1.0, (n, 3)).astype(np.float32)
    return GaussianSet(positions, scales, quats.astype(np.float32), opacities, colors)


def oracle_camera(size: int = 128) -> Camera:
    return default_camera((size, size))


def random_pixel_mask(seed: int, camera: Camera, fill: float = 0.15) -> np.ndarray:
    """Random rectangular-blob mask covering roughly `fill` of the frame."""
    rng = np.random.default_rng(seed + 31337)
    mask = np.zeros((camera.height, camera.width), dtype=bool)
    target = fill * mask.size
    while mask.sum() < target:
        w = int(rng.integers(8, camera.width // 2))
        h = int(rng.integers(8, camera.height // 2))
        x = int(rng.integers(0, camera.width - w))
        y = int(rng.integers(0, camera.height - h))
        mask[y:y + h, x:x + w] = True
    return mask
