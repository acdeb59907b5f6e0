"""Oracle and invariant suites behind `sketchsplat verify`.

Each check returns (name, passed, detail); the CLI prints one line per check
and exits nonzero if any fail. The pytest suite drives the same functions.
"""

from __future__ import annotations

import numpy as np

from .cameras import default_camera
from .editing import (apply_edit, create_session, diff_sketches, disk_structure,
                      resample_mask_pyramid)
from .gaussians import build_covariance
from .mesh import default_head_mesh, splat_vertex_features_to_uv
from .nn import ops
from .nn.arch import DEFAULT_ARCH
from .nn.weights import init_weights
from .raster import rasterize, rasterize_reference, record_contributions, \
    compute_influence_weights
from .scenes import oracle_camera, random_pixel_mask, random_scene
from .strokes import edit_stroke, head_sketch, reference_image

RASTER_TOL = 1e-5
WEIGHT_TOL = 1e-5


def check_rasterizer_oracle(n_scenes: int = 10, n_gaussians: int = 3000,
                            size: int = 128):
    cam = oracle_camera(size)
    worst = 0.0
    min_t = 1.0
    for seed in range(n_scenes):
        scene = random_scene(seed, n_gaussians)
        tiled = rasterize(scene, cam)
        ref = rasterize_reference(scene, cam)
        worst = max(worst, float(np.abs(tiled.rgb - ref.rgb).max()),
                    float(np.abs(tiled.alpha - ref.alpha).max()))
        min_t = min(min_t, float(1.0 - ref.alpha.max()))
    passed = worst <= RASTER_TOL and min_t > 1e-3
    return ("rasterizer-oracle", passed,
            f"max |tiled - reference| = {worst:.2e} over {n_scenes} scenes "
            f"(min transmittance {min_t:.1e})")


def check_influence_replay(n_scenes: int = 5, n_gaussians: int = 2000,
                           size: int = 128):
    cam = oracle_camera(size)
    worst = 0.0
    for seed in range(n_scenes):
        scene = random_scene(seed + 100, n_gaussians)
        mask = random_pixel_mask(seed, cam)
        influence = compute_influence_weights(scene, cam, mask)
        replay = record_contributions(scene, cam, mask).sum_weights(len(scene))
        scale = max(1.0, float(replay.max()))
        worst = max(worst, float(np.abs(influence.weights - replay).max()) / scale)
    return ("influence-replay", worst <= WEIGHT_TOL,
            f"max relative |direct - log replay| = {worst:.2e}")


def check_covariance_psd(n: int = 200):
    rng = np.random.default_rng(7)
    worst = np.inf
    sym = 0.0
    for _ in range(n):
        s = rng.uniform(0.05, 2.0, 3).astype(np.float32)
        q = rng.normal(size=4).astype(np.float32)
        q /= np.linalg.norm(q)
        cov = build_covariance(s, q)
        sym = max(sym, float(np.abs(cov - cov.T).max()))
        eig = np.linalg.eigvalsh(cov.astype(np.float64))
        worst = min(worst, float(eig.min() - s.min() ** 2))
    passed = sym <= 1e-6 and worst >= -1e-6
    return ("covariance-psd", passed,
            f"max asymmetry {sym:.1e}, min(eig - s_min^2) = {worst:.1e}")


def check_transmittance_telescoping(size: int = 128):
    cam = oracle_camera(size)
    scene = random_scene(11, 2000)
    mask = np.ones((size, size), dtype=bool)
    log = record_contributions(scene, cam, mask)
    worst = 0.0
    total = 0.0
    for p in range(0, len(log), 97):
        _, alpha, trans = log.entries(p)
        if len(alpha) == 0:
            continue
        if abs(trans[0] - 1.0) > 1e-6:
            worst = 1.0
        expected = trans[:-1] * (1.0 - alpha[:-1])
        if len(expected):
            worst = max(worst, float(np.abs(expected - trans[1:]).max()))
        total = max(total, float((alpha.astype(np.float64) *
                                  trans.astype(np.float64)).sum()))
    passed = worst <= 1e-6 and total <= 1.0 + 1e-6
    return ("transmittance-telescoping", passed,
            f"max |T[i+1] - T[i](1-a[i])| = {worst:.1e}, max sum(aT) = {total:.4f}")


def check_barycentric_partition(resolution: int = 64):
    mesh = default_head_mesh()
    table = mesh.texel_table(resolution)
    w = table.bary[table.valid]
    sums = np.abs(w.sum(axis=1) - 1.0).max() if len(w) else 0.0
    neg = float(w.min()) if len(w) else 0.0
    ones = np.ones((mesh.vertex_count, 3), dtype=np.float32) * 2.5
    fmap = splat_vertex_features_to_uv(ones, mesh, resolution)
    valid_vals = fmap.data[table.valid]
    unity = float(np.abs(valid_vals - 2.5).max()) if len(valid_vals) else 0.0
    passed = sums <= 1e-6 and neg >= 0.0 and unity <= 1e-5
    return ("barycentric-partition", passed,
            f"max |sum - 1| = {sums:.1e}, min weight {neg:.1e}, "
            f"constant-splat error {unity:.1e}")


def check_adain_statistics():
    rng = np.random.default_rng(3)
    content = ops.to_torch(rng.normal(1.5, 2.0, (8, 32, 32)).astype(np.float32))
    mean = ops.to_torch(rng.normal(0, 1, 8).astype(np.float32))
    std = ops.to_torch(rng.uniform(0.5, 2.0, 8).astype(np.float32))
    out = ops.adain(content, (mean, std))
    got_mean, got_std = ops.channel_stats(out)
    dm = float((got_mean - mean).abs().max())
    ds = float((got_std - std).abs().max())
    return ("adain-statistics", dm <= 1e-4 and ds <= 1e-3,
            f"mean error {dm:.1e}, std error {ds:.1e}")


def check_softmax_rows():
    rng = np.random.default_rng(5)
    q = ops.to_torch(rng.normal(0, 3, (40, 16)).astype(np.float32))
    k = ops.to_torch(rng.normal(0, 3, (25, 16)).astype(np.float32))
    attn = ops.attention_matrix(q, k)
    err = float((attn.sum(dim=1) - 1.0).abs().max())
    return ("softmax-rows", err <= 1e-6, f"max |row sum - 1| = {err:.1e}")


def check_mask_pyramid_superset(trials: int = 20):
    rng = np.random.default_rng(13)
    worst = True
    for _ in range(trials):
        base = rng.random((128, 128)) < rng.uniform(0.002, 0.2)
        pyr = resample_mask_pyramid(base, DEFAULT_ARCH.synth_resolutions)
        for level, res in zip(pyr.levels, pyr.resolutions):
            f = 128 // res if res <= 128 else 1
            up = np.repeat(np.repeat(level, f, axis=0), f, axis=1)[:128, :128] \
                if res < 128 else level[:128, :128] if res == 128 else \
                level[::res // 128, ::res // 128]
            if not np.all(up[base]):
                worst = False
    return ("mask-pyramid-superset", worst,
            "every level covers the base mask" if worst else "superset violated")


def check_dilation_oracle(trials: int = 5):
    rng = np.random.default_rng(17)
    ok = True
    for t in range(trials):
        a = (rng.random((64, 64)) < 0.01)
        b = a.copy()
        for _ in range(5):
            b[rng.integers(0, 64), rng.integers(0, 64)] ^= True
        radius = int(rng.integers(0, 5))
        got = diff_sketches(a.astype(np.float32), b.astype(np.float32), radius)
        diff = a != b
        want = np.zeros_like(diff)
        struct = disk_structure(radius)
        ys, xs = np.nonzero(diff)
        r = radius
        for y, x in zip(ys, xs):  # brute-force disk stamping
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    if dx * dx + dy * dy <= r * r:
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < 64 and 0 <= xx < 64:
                            want[yy, xx] = True
        ok = ok and bool(np.array_equal(got, want)) and struct.shape == (2 * r + 1,) * 2
    return ("dilation-oracle", ok, f"{trials} randomized masks match brute force")


def check_determinism_hashes():
    mesh = default_head_mesh()
    store = init_weights(DEFAULT_ARCH, 99)
    from .pipeline.fine import generate_head
    sketch = head_sketch(5)
    ref = reference_image(5)
    g1, a1 = generate_head(sketch, ref, mesh, store)
    g2, a2 = generate_head(sketch, ref, mesh, store)
    same_set = g1.content_hash() == g2.content_hash()
    same_art = a1.content_hash() == a2.content_hash()
    cam = default_camera((128, 128))
    f1 = rasterize(g1, cam)
    f2 = rasterize(g2, cam)
    same_frame = f1.content_hash() == f2.content_hash()
    passed = same_set and same_art and same_frame
    return ("determinism-hashes", passed,
            f"set={same_set} artifacts={same_art} frame={same_frame}")


def check_session_roundtrip(tmp_dir=None):
    import tempfile
    from .session_store import load_session_dir, save_session_dir
    mesh = default_head_mesh()
    store = init_weights(DEFAULT_ARCH, 99)
    cam = default_camera((128, 128))
    sketch = head_sketch(8)
    ref = reference_image(8)
    session = create_session(sketch, ref, mesh, store, cam)
    apply_edit(session, edit_stroke(sketch, 8, region=2), ref, cam, mesh, store)
    before = rasterize(session.current_set(mesh), cam).content_hash()
    with tempfile.TemporaryDirectory(dir=tmp_dir) as d:
        save_session_dir(session, d)
        restored = load_session_dir(d)
    after = rasterize(restored.current_set(mesh), cam).content_hash()
    depth_ok = restored.depth == session.depth
    return ("session-roundtrip", before == after and depth_ok,
            f"frame hash preserved={before == after}, undo depth preserved={depth_ok}")


ORACLE_CHECKS = (check_rasterizer_oracle, check_influence_replay,
                 check_dilation_oracle)
INVARIANT_CHECKS = (check_covariance_psd, check_transmittance_telescoping,
                    check_barycentric_partition, check_adain_statistics,
                    check_softmax_rows, check_mask_pyramid_superset,
                    check_determinism_hashes, check_session_roundtrip)


def run_suite(which: str = "invariants"):
    checks = {"oracle": ORACLE_CHECKS, "invariants": INVARIANT_CHECKS,
              "all": ORACLE_CHECKS + INVARIANT_CHECKS}[which]
    return [fn() for fn in checks]
