"""Deterministic stroke rasterization and synthetic test inputs.

Brush stamps are hard-edged discs on integer pixel centers so a scripted
stroke sequence always produces byte-identical rasters; the scenario suite,
benchmarks and tests all draw through these helpers.
"""

from __future__ import annotations

import numpy as np

from .imgio import INPUT_SIZE


def blank_sketch(size: int = INPUT_SIZE) -> np.ndarray:
    return np.zeros((size, size), dtype=np.float32)


def stamp_disc(raster: np.ndarray, x: int, y: int, radius: int, value: float = 1.0) -> None:
    """Set pixels with (dx^2 + dy^2) <= radius^2 around an integer center."""
    h, w = raster.shape
    x0, x1 = max(0, x - radius), min(w - 1, x + radius)
    y0, y1 = max(0, y - radius), min(h - 1, y + radius)
    if x0 > x1 or y0 > y1:
        return
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    inside = (xs - x) ** 2 + (ys - y) ** 2 <= radius * radius
    raster[y0:y1 + 1, x0:x1 + 1][inside] = np.float32(value)


def draw_polyline(raster: np.ndarray, points, width: int = 2, value: float = 1.0) -> None:
    """Stamp discs of radius width//2 along each segment, one per unit step."""
    radius = max(0, width // 2)
    pts = [(int(round(px)), int(round(py))) for px, py in points]
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        steps = max(abs(x1 - x0), abs(y1 - y0), 1)
        for s in range(steps + 1):
            t = s / steps
            stamp_disc(raster, int(round(x0 + (x1 - x0) * t)),
                       int(round(y0 + (y1 - y0) * t)), radius, value)
    if len(pts) == 1:
        stamp_disc(raster, pts[0][0], pts[0][1], radius, value)


def draw_ellipse_outline(raster: np.ndarray, cx: float, cy: float, rx: float, ry: float,
                         width: int = 2, segments: int = 180) -> None:
    theta = np.linspace(0.0, 2.0 * np.pi, segments + 1)
    pts = [(cx + rx * np.cos(t), cy + ry * np.sin(t)) for t in theta]
    draw_polyline(raster, pts, width=width)


def head_sketch(seed: int = 0, size: int = INPUT_SIZE) -> np.ndarray:
    """A stylized frontal head contour with eyes, nose and mouth strokes."""
    rng = np.random.default_rng(seed)
    s = blank_sketch(size)
    c = size / 2.0
    rx = size * (0.30 + 0.03 * rng.uniform(-1, 1))
    ry = size * (0.38 + 0.03 * rng.uniform(-1, 1))
    draw_ellipse_outline(s, c, c, rx, ry, width=2)
    eye_y = c - size * 0.08
    eye_dx = size * (0.12 + 0.02 * rng.uniform(-1, 1))
    for side in (-1, 1):
        ex = c + side * eye_dx
        draw_polyline(s, [(ex - size * 0.05, eye_y), (ex + size * 0.05, eye_y)], width=2)
    nose_len = size * (0.10 + 0.02 * rng.uniform(-1, 1))
    draw_polyline(s, [(c, eye_y + size * 0.04), (c - size * 0.02, eye_y + nose_len)], width=2)
    mouth_y = c + size * 0.18
    mouth_w = size * (0.10 + 0.02 * rng.uniform(-1, 1))
    draw_polyline(s, [(c - mouth_w, mouth_y), (c + mouth_w, mouth_y + size * 0.01)], width=2)
    return s


def reference_image(seed: int = 0, size: int = INPUT_SIZE) -> np.ndarray:
    """Smooth portrait-like color field: tinted backdrop plus a skin-tone blob."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float32) / float(size)
    base = np.array([0.25, 0.30, 0.45], dtype=np.float32) + \
        0.2 * rng.uniform(-1, 1, size=3).astype(np.float32)
    rgb = np.clip(base[None, None, :] + 0.15 * (ys - 0.5)[:, :, None], 0, 1)
    skin = np.array([0.85, 0.65, 0.55], dtype=np.float32) + \
        0.1 * rng.uniform(-1, 1, size=3).astype(np.float32)
    d2 = ((xs - 0.5) / 0.32) ** 2 + ((ys - 0.52) / 0.40) ** 2
    blob = np.exp(-2.5 * d2).astype(np.float32)[:, :, None]
    rgb = rgb * (1 - blob) + np.clip(skin, 0, 1)[None, None, :] * blob
    hair = np.array([0.2, 0.15, 0.1], dtype=np.float32) + \
        0.15 * rng.uniform(0, 1, size=3).astype(np.float32)
    d2h = ((xs - 0.5) / 0.36) ** 2 + ((ys - 0.25) / 0.22) ** 2
    hb = np.exp(-3.0 * d2h).astype(np.float32)[:, :, None]
    rgb = rgb * (1 - hb) + np.clip(hair, 0, 1)[None, None, :] * hb
    return np.clip(rgb, 0.0, 1.0).astype(np.float32)


# canonical on-head edit targets (fractions of image size from the center):
# brows, eyes, nose bridge, nostrils, mouth, chin, cheeks, forehead, jaw
EDIT_REGIONS = (
    (-0.12, -0.13), (0.12, -0.13), (0.0, -0.02), (0.0, 0.08), (0.0, 0.18),
    (0.0, 0.28), (-0.18, 0.08), (0.18, 0.08), (0.0, -0.26), (-0.14, 0.22),
)


def edit_stroke(sketch: np.ndarray, seed: int = 0, width: int = 5,
                region: int | None = None) -> np.ndarray:
    """Copy of `sketch` with one added localized stroke (a synthetic user edit).

    With `region` set, the stroke is anchored at that canonical facial zone
    (jittered by the seed); otherwise the location is fully seed-random.
    """
    rng = np.random.default_rng(seed + 7919)
    out = sketch.copy()
    size = sketch.shape[0]
    c = size / 2.0
    if region is not None:
        fx, fy = EDIT_REGIONS[region % len(EDIT_REGIONS)]
        x0 = c + fx * size + rng.uniform(-4, 4)
        y0 = c + fy * size + rng.uniform(-4, 4)
    else:
        angle = rng.uniform(0, 2 * np.pi)
        rad = size * rng.uniform(0.10, 0.26)
        x0 = c + rad * np.cos(angle)
        y0 = c + rad * np.sin(angle)
    length = size * rng.uniform(0.12, 0.24)
    dirn = rng.uniform(0, 2 * np.pi)
    x1 = np.clip(x0 + length * np.cos(dirn), 4, size - 5)
    y1 = np.clip(y0 + length * np.sin(dirn), 4, size - 5)
    xm = (x0 + x1) / 2 + rng.uniform(-8, 8)
    ym = (y0 + y1) / 2 + rng.uniform(-8, 8)
    draw_polyline(out, [(x0, y0), (xm, ym), (x1, y1)], width=width)
    return out
