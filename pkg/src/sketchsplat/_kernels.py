"""Numba-compiled splatting kernels.

Alpha semantics shared by every compositing path (tiled, reference, logging):

    dy    = cy - my                      (float32 throughout)
    t2    = (cc * dy) * dy
    bdy   = bb * dy
    power = -0.5 * (a*dx*dx + t2) - bdy*dx
    alpha = opacity * exp_poly4(power)    iff power >= -4.5, else no contribution

exp_poly4 evaluates exp(x) as P(x/4)^4 with a degree-6 polynomial (relative
error < 2e-6, float32 grade) so the hot loop stays branch-free and SIMD
friendly. The float64 reference compositor evaluates the identical float32
expression chain, so the Mahalanobis cutoff decision and the alpha values are
bit-identical across paths; only sorting scope, tiling, early termination and
accumulation precision differ. Do not reorder these expressions.

Tiles own disjoint output pixels, so the parallel render loop needs no locks
and its result does not depend on thread scheduling. Lanes whose transmittance
fell below the termination threshold are frozen via a select instead of a
break; the outcome is identical to stopping the per-pixel loop.
"""

import numpy as np
from numba import njit, prange

CUTOFF_POWER = np.float32(-4.5)   # Mahalanobis radius 3: -0.5 * 3^2
TERMINATE_T = np.float32(1e-4)    # stop compositing once transmittance drops below

# exp(x) ~= P(x/4)^4, P fitted on [-1.125, 0] (degree 6, relative least squares)
Q0 = np.float32(9.9999986969e-01)
Q1 = np.float32(9.9999425966e-01)
Q2 = np.float32(4.9993682388e-01)
Q3 = np.float32(1.6637257029e-01)
Q4 = np.float32(4.0971166493e-02)
Q5 = np.float32(7.4433737097e-03)
Q6 = np.float32(7.8178327865e-04)


@njit(cache=True, inline="always")
def exp_poly4(x):
    """Shared kernel exp for x in [-4.5, 0]."""
    q = x * np.float32(0.25)
    p = Q6
    p = p * q + Q5
    p = p * q + Q4
    p = p * q + Q3
    p = p * q + Q2
    p = p * q + Q1
    p = p * q + Q0
    p = p * p
    return p * p


def exp_poly4_array(x: np.ndarray) -> np.ndarray:
    """Vectorized float32 twin of exp_poly4 (same operation order per element).

    Inputs below the cutoff are clamped first so the polynomial stays finite;
    callers mask those entries out of the composite anyway.
    """
    q = np.maximum(x.astype(np.float32), np.float32(-87.0)) * np.float32(0.25)
    p = np.full_like(q, Q6)
    p = p * q + Q5
    p = p * q + Q4
    p = p * q + Q3
    p = p * q + Q2
    p = p * q + Q1
    p = p * q + Q0
    p = p * p
    return p * p


@njit(cache=True)
def pack_tile_items(tile_items, means, conics, colors, opacities, radii):
    """Gather per-splat data in tile-item order for sequential access."""
    m = tile_items.shape[0]
    packed = np.empty((m, 10), dtype=np.float32)
    for k in range(m):
        gi = tile_items[k]
        packed[k, 0] = means[gi, 0]
        packed[k, 1] = means[gi, 1]
        packed[k, 2] = conics[gi, 0]
        packed[k, 3] = conics[gi, 1]
        packed[k, 4] = conics[gi, 2]
        packed[k, 5] = opacities[gi]
        packed[k, 6] = colors[gi, 0]
        packed[k, 7] = colors[gi, 1]
        packed[k, 8] = colors[gi, 2]
        packed[k, 9] = radii[gi]
    return packed


@njit(cache=True, parallel=True)
def render_tiles(width, height, tile, packed, tile_start, terminate_t):
    """Front-to-back composite per tile. Returns (rgb HxWx3, alpha HxW)."""
    out_rgb = np.zeros((height, width, 3), dtype=np.float32)
    out_alpha = np.zeros((height, width), dtype=np.float32)
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    for t in prange(ntx * nty):
        ty = t // ntx
        tx = t - ty * ntx
        x0 = tx * tile
        y0 = ty * tile
        x1 = min(x0 + tile, width)
        y1 = min(y0 + tile, height)
        s = tile_start[t]
        e = tile_start[t + 1]
        if s == e:
            continue
        nlanes = x1 - x0
        trans = np.empty(nlanes, dtype=np.float32)
        accr = np.empty(nlanes, dtype=np.float32)
        accg = np.empty(nlanes, dtype=np.float32)
        accb = np.empty(nlanes, dtype=np.float32)
        lane_cx = np.empty(nlanes, dtype=np.float32)
        for i in range(nlanes):
            lane_cx[i] = np.float32(x0 + i) + np.float32(0.5)
        for py in range(y0, y1):
            cy = np.float32(py) + np.float32(0.5)
            for i in range(nlanes):
                trans[i] = np.float32(1.0)
                accr[i] = np.float32(0.0)
                accg[i] = np.float32(0.0)
                accb[i] = np.float32(0.0)
            for k in range(s, e):
                mx = packed[k, 0]
                my = packed[k, 1]
                radius = packed[k, 9]
                dy = cy - my
                if dy > radius or -dy > radius:
                    continue
                if (k - s) & 7 == 0:  # periodic whole-row saturation check
                    tmax = np.float32(0.0)
                    for i in range(nlanes):
                        if trans[i] > tmax:
                            tmax = trans[i]
                    if tmax < terminate_t:
                        break
                a = packed[k, 2]
                bb = packed[k, 3]
                cc = packed[k, 4]
                op = packed[k, 5]
                cr = packed[k, 6]
                cg = packed[k, 7]
                cb = packed[k, 8]
                t2 = (cc * dy) * dy
                bdy = bb * dy
                for i in range(nlanes):  # branch-free body: vectorizes
                    tv = trans[i]
                    dx = lane_cx[i] - mx
                    power = np.float32(-0.5) * (a * dx * dx + t2) - bdy * dx
                    q = power * np.float32(0.25)
                    p = Q6
                    p = p * q + Q5
                    p = p * q + Q4
                    p = p * q + Q3
                    p = p * q + Q2
                    p = p * q + Q1
                    p = p * q + Q0
                    p = p * p
                    p = p * p
                    ok = (power >= CUTOFF_POWER) & (tv >= terminate_t)
                    alpha = op * p if ok else np.float32(0.0)
                    w = alpha * tv
                    accr[i] += cr * w
                    accg[i] += cg * w
                    accb[i] += cb * w
                    trans[i] = tv * (np.float32(1.0) - alpha)
            for i in range(nlanes):
                out_rgb[py, x0 + i, 0] = accr[i]
                out_rgb[py, x0 + i, 1] = accg[i]
                out_rgb[py, x0 + i, 2] = accb[i]
                out_alpha[py, x0 + i] = np.float32(1.0) - trans[i]
    return out_rgb, out_alpha


@njit(cache=True)
def count_contributions(pixels_xy, tile, width, means, conics, opacities,
                        tile_start, tile_items, terminate_t):
    """Entries the compositor would emit per masked pixel (same termination rule)."""
    ntx = (width + tile - 1) // tile
    counts = np.zeros(pixels_xy.shape[0] + 1, dtype=np.int64)
    for p in range(pixels_xy.shape[0]):
        px = pixels_xy[p, 0]
        py = pixels_xy[p, 1]
        t = (py // tile) * ntx + (px // tile)
        cx = np.float32(px) + np.float32(0.5)
        cy = np.float32(py) + np.float32(0.5)
        trans = np.float32(1.0)
        n = 0
        for k in range(tile_start[t], tile_start[t + 1]):
            gi = tile_items[k]
            dx = cx - means[gi, 0]
            dy = cy - means[gi, 1]
            a = conics[gi, 0]
            bb = conics[gi, 1]
            cc = conics[gi, 2]
            t2 = (cc * dy) * dy
            bdy = bb * dy
            power = np.float32(-0.5) * (a * dx * dx + t2) - bdy * dx
            if not (power >= CUTOFF_POWER):
                continue
            alpha = opacities[gi] * exp_poly4(power)
            n += 1
            trans = trans * (np.float32(1.0) - alpha)
            if trans < terminate_t:
                break
        counts[p + 1] = n
    return counts


@njit(cache=True)
def fill_contributions(pixels_xy, tile, width, means, conics, opacities,
                       tile_start, tile_items, terminate_t,
                       offsets, out_gauss, out_alpha, out_trans):
    """Second pass of record_contributions: emit (index, alpha, T) per entry."""
    ntx = (width + tile - 1) // tile
    for p in range(pixels_xy.shape[0]):
        px = pixels_xy[p, 0]
        py = pixels_xy[p, 1]
        t = (py // tile) * ntx + (px // tile)
        cx = np.float32(px) + np.float32(0.5)
        cy = np.float32(py) + np.float32(0.5)
        trans = np.float32(1.0)
        w = offsets[p]
        for k in range(tile_start[t], tile_start[t + 1]):
            gi = tile_items[k]
            dx = cx - means[gi, 0]
            dy = cy - means[gi, 1]
            a = conics[gi, 0]
            bb = conics[gi, 1]
            cc = conics[gi, 2]
            t2 = (cc * dy) * dy
            bdy = bb * dy
            power = np.float32(-0.5) * (a * dx * dx + t2) - bdy * dx
            if not (power >= CUTOFF_POWER):
                continue
            alpha = opacities[gi] * exp_poly4(power)
            out_gauss[w] = gi
            out_alpha[w] = alpha
            out_trans[w] = trans
            w += 1
            trans = trans * (np.float32(1.0) - alpha)
            if trans < terminate_t:
                break


@njit(cache=True)
def accumulate_influence(pixels_xy, tile, width, n_gaussians, means, conics,
                         opacities, tile_start, tile_items, terminate_t):
    """Per-Gaussian sum of alpha*T over masked pixels, plus peak T per Gaussian.

    Accumulates in float64; the peak transmittance feeds the front-face filter.
    """
    ntx = (width + tile - 1) // tile
    weights = np.zeros(n_gaussians, dtype=np.float64)
    peak_t = np.zeros(n_gaussians, dtype=np.float32)
    for p in range(pixels_xy.shape[0]):
        px = pixels_xy[p, 0]
        py = pixels_xy[p, 1]
        t = (py // tile) * ntx + (px // tile)
        cx = np.float32(px) + np.float32(0.5)
        cy = np.float32(py) + np.float32(0.5)
        trans = np.float32(1.0)
        for k in range(tile_start[t], tile_start[t + 1]):
            gi = tile_items[k]
            dx = cx - means[gi, 0]
            dy = cy - means[gi, 1]
            a = conics[gi, 0]
            bb = conics[gi, 1]
            cc = conics[gi, 2]
            t2 = (cc * dy) * dy
            bdy = bb * dy
            power = np.float32(-0.5) * (a * dx * dx + t2) - bdy * dx
            if not (power >= CUTOFF_POWER):
                continue
            alpha = opacities[gi] * exp_poly4(power)
            weights[gi] += np.float64(alpha) * np.float64(trans)
            if trans > peak_t[gi]:
                peak_t[gi] = trans
            trans = trans * (np.float32(1.0) - alpha)
            if trans < terminate_t:
                break
    return weights, peak_t
